//! Sum-product for dense factor graphs with Gaussian constraint messages.
//!
//! When a constraint node has many neighbours, the leave-one-out sum
//! `sum_{v' != v} Theta'_{i,v'} s_{v'} + n'_i` is close to Gaussian, so the
//! convolution of the grid decoder collapses to its first two moments. The
//! backward message to `s_v` is then a Gaussian likelihood and the variable
//! update has a closed form for the two-component prior. Message passing is
//! otherwise unchanged: one belief per edge, leave-one-out at both node types,
//! damping on the forward beliefs, and the same stopping rule.

use nalgebra::DVector;

use crate::error::{QncError, Result};
use crate::message::MessagePrior;
use crate::whitening::WhitenedSystem;

use super::bp::{BpOptions, EDGE_THRESHOLD};
use super::DecodeResult;

/// Posterior moments of `s` under the prior times `exp(-(s - a)^2 / (2 b))`.
/// `b = inf` returns the prior moments.
fn posterior_moments(prior: &MessagePrior, a: f64, b: f64) -> (f64, f64) {
    let comps = [(prior.sparsity(), prior.slab_var()), (1.0 - prior.sparsity(), prior.spike_var())];
    if !b.is_finite() {
        let var = comps.iter().map(|(w, v)| w * v).sum();
        return (0.0, var);
    }
    // Component weight w N(a; 0, var + b), in logs.
    let logs: Vec<f64> = comps
        .iter()
        .map(|&(w, var)| {
            if w <= 0.0 {
                f64::NEG_INFINITY
            } else {
                w.ln() - 0.5 * (var + b).ln() - 0.5 * a * a / (var + b)
            }
        })
        .collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut total, mut first, mut second) = (0.0, 0.0, 0.0);
    for (&(_, var), &l) in comps.iter().zip(&logs) {
        let w = (l - top).exp();
        let mean = a * var / (var + b);
        let v = var * b / (var + b);
        total += w;
        first += w * mean;
        second += w * (v + mean * mean);
    }
    let mean = first / total;
    (mean, (second / total - mean * mean).max(0.0))
}

/// Runs the Gaussian-constraint sum-product. Parameters and result follow
/// [`bp_decode`](super::bp_decode).
pub fn bp_decode_gaussian(ws: &WhitenedSystem, prior: &MessagePrior, opts: BpOptions) -> Result<DecodeResult> {
    let (m, n) = (ws.m(), ws.n());
    if prior.n() != n || ws.z.len() != m || ws.phi.nrows() != n {
        return Err(QncError::Dimension(format!("prior dimension {}, system {m}x{n}", prior.n())));
    }
    if !(0.0..1.0).contains(&opts.damping) {
        return Err(QncError::InvalidArgument(format!("damping {} outside [0, 1)", opts.damping)));
    }
    if ws.theta.iter().chain(ws.z.iter()).any(|v| !v.is_finite()) {
        return Err(QncError::NonFinite { iteration: 0, detail: "whitened system".into() });
    }

    // Edges grouped by constraint, as in the grid decoder.
    let mut edges: Vec<(usize, usize)> = Vec::new();
    let mut coef = Vec::new();
    let mut check_offsets = vec![0];
    let mut var_edges = vec![Vec::new(); n];
    for i in 0..m {
        for v in 0..n {
            let c = ws.theta[(i, v)];
            if c.abs() > EDGE_THRESHOLD {
                var_edges[v].push(edges.len());
                edges.push((i, v));
                coef.push(c);
            }
        }
        check_offsets.push(edges.len());
    }
    let (_, prior_var) = posterior_moments(prior, 0.0, f64::INFINITY);
    let mut fwd_mean = vec![0.0; edges.len()];
    let mut fwd_var = vec![prior_var; edges.len()];
    // Backward messages as precision c^2 / V and linear term c r / V.
    let mut bwd_prec = vec![0.0; edges.len()];
    let mut bwd_lin = vec![0.0; edges.len()];

    let keep = opts.damping;
    let mut s_hat = DVector::zeros(n);
    let mut x_prev = &ws.phi * &s_hat;
    let mut history = Vec::new();
    let mut best: Option<(f64, DVector<f64>)> = None;
    for iteration in 1..=opts.max_iter {
        for i in 0..m {
            let (a, b) = (check_offsets[i], check_offsets[i + 1]);
            let mut mean = 0.0;
            let mut var = 1.0;
            for e in a..b {
                mean += coef[e] * fwd_mean[e];
                var += coef[e] * coef[e] * fwd_var[e];
            }
            for e in a..b {
                let c = coef[e];
                let v_rest = var - c * c * fwd_var[e];
                let r = ws.z[i] - (mean - c * fwd_mean[e]);
                bwd_prec[e] = c * c / v_rest;
                bwd_lin[e] = c * r / v_rest;
            }
        }

        for v in 0..n {
            let (mut prec, mut lin) = (0.0, 0.0);
            for &e in &var_edges[v] {
                prec += bwd_prec[e];
                lin += bwd_lin[e];
            }
            s_hat[v] = if prec > 0.0 { posterior_moments(prior, lin / prec, 1.0 / prec).0 } else { 0.0 };
            for &e in &var_edges[v] {
                let (p, l) = (prec - bwd_prec[e], lin - bwd_lin[e]);
                let (mu, var) =
                    if p > 0.0 { posterior_moments(prior, l / p, 1.0 / p) } else { (0.0, prior_var) };
                // Moments of the damped mixture keep * old + (1 - keep) * new.
                let second = keep * (fwd_var[e] + fwd_mean[e] * fwd_mean[e]) + (1.0 - keep) * (var + mu * mu);
                let mean = keep * fwd_mean[e] + (1.0 - keep) * mu;
                fwd_mean[e] = mean;
                fwd_var[e] = (second - mean * mean).max(0.0);
            }
        }

        let x = &ws.phi * &s_hat;
        let step = (&x - &x_prev).norm();
        if !step.is_finite() {
            return Err(QncError::NonFinite { iteration, detail: "estimate".into() });
        }
        x_prev = x;
        history.push(step);
        if step <= opts.eps_rec {
            return Ok(DecodeResult { x_hat: &ws.phi * &s_hat, s_hat, iterations: iteration, converged: true, history });
        }
        if best.as_ref().map_or(true, |(b, _)| step < *b) {
            best = Some((step, s_hat.clone()));
        }
    }
    let s_hat = best.map_or(s_hat, |(_, s)| s);
    Ok(DecodeResult { x_hat: &ws.phi * &s_hat, s_hat, iterations: opts.max_iter, converged: false, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoders::{bp_decode, default_grid};
    use nalgebra::DMatrix;
    use rand::Rng as _;
    use rand_distr::StandardNormal;

    #[test]
    fn moments_match_quadrature() {
        let prior = MessagePrior::new(4, 1.0, 5.0).unwrap();
        for &(a, b) in &[(0.0, 1.0), (2.5, 0.3), (-1.0, 4.0), (0.05, 0.01)] {
            let (mean, var) = posterior_moments(&prior, a, b);
            let (mut w0, mut w1, mut w2) = (0.0, 0.0, 0.0);
            let steps = 400_000;
            for j in 0..steps {
                let s = -30.0 + (j as f64 + 0.5) * 60.0 / steps as f64;
                let pr = 0.25 * (-0.5 * s * s / 5.0).exp() / 5f64.sqrt()
                    + 0.75 * (-0.5 * s * s / prior.spike_var()).exp() / prior.spike_var().sqrt();
                let w = pr * (-0.5 * (s - a).powi(2) / b).exp();
                w0 += w;
                w1 += w * s;
                w2 += w * s * s;
            }
            let (qm, qv) = (w1 / w0, w2 / w0 - (w1 / w0).powi(2));
            assert!((mean - qm).abs() < 1e-6, "{a} {b}: {mean} vs {qm}");
            assert!((var - qv).abs() < 1e-6, "{a} {b}: {var} vs {qv}");
        }
    }

    #[test]
    fn scalar_system_is_exact_posterior_mean() {
        let prior = MessagePrior::new(1, 0.5, 5.0).unwrap();
        let ws = WhitenedSystem::from_parts(
            DMatrix::from_element(1, 1, 1.5),
            DVector::from_element(1, 2.0),
            DMatrix::identity(1, 1),
        )
        .unwrap();
        let res = bp_decode_gaussian(&ws, &prior, BpOptions::for_prior(&prior)).unwrap();
        let expect = posterior_moments(&prior, 2.0 / 1.5, 1.0 / 2.25).0;
        assert!((res.s_hat[0] - expect).abs() < 1e-12);
        assert!(res.converged);
    }

    #[test]
    fn agrees_with_grid_decoder_on_dense_systems() {
        let (n, m) = (30, 24);
        let prior = MessagePrior::from_sparsity_factor(n, 0.1, 5.0).unwrap();
        let mut rng = crate::seed::rng(21);
        let (mut err_grid, mut err_gauss, mut signal) = (0.0, 0.0, 0.0);
        for _ in 0..4 {
            let theta = DMatrix::from_fn(m, n, |_, _| rng.sample::<f64, _>(StandardNormal) / (m as f64).sqrt() * 3.0);
            let s = DVector::from_fn(n, |_, _| {
                if rng.gen_bool(0.1) {
                    5f64.sqrt() * rng.sample::<f64, _>(StandardNormal)
                } else {
                    0.0
                }
            });
            let z = &theta * &s + DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
            let ws = WhitenedSystem::from_parts(theta, z, DMatrix::identity(n, n)).unwrap();
            let opts = BpOptions::for_prior(&prior);
            let grid = bp_decode(&ws, &prior, default_grid(&prior), opts).unwrap();
            let gauss = bp_decode_gaussian(&ws, &prior, opts).unwrap();
            err_grid += (&grid.s_hat - &s).norm_squared();
            err_gauss += (&gauss.s_hat - &s).norm_squared();
            signal += s.norm_squared();
        }
        let db = |e: f64| 10.0 * (signal / e).log10();
        assert!((db(err_grid) - db(err_gauss)).abs() < 1.0, "grid {} dB, gaussian {} dB", db(err_grid), db(err_gauss));
    }
}
