//! Sum-product decoding with beliefs discretized on a uniform grid.
//!
//! Variable nodes are the sparse coefficients `s_v`, constraint nodes are the
//! whitened measurements `z'_i = sum_v Theta'_{i,v} s_v + n'_i` with
//! `n'_i ~ N(0, 1)`. A constraint node forms the density of
//! `sum_{v' != v} Theta'_{i,v'} s_{v'} + n'_i` by convolving the scaled
//! incoming beliefs and the noise density (FFT, zero-padded), then reads it
//! through the affine map `s_v -> z'_i - Theta'_{i,v} s_v` to obtain the
//! backward belief on the coefficient grid. Variable nodes multiply the prior
//! with all other backward beliefs.
//!
//! Beliefs are stored as bin masses summing to one. Backward beliefs are kept
//! as logarithms so the products over many constraints do not underflow.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::DVector;
use rayon::prelude::*;
use realfft::num_complex::Complex;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use statrs::function::erf::erfc;

use crate::error::{QncError, Result};
use crate::grid::{self, Grid, DEFAULT_HALF_WIDTH_SDS, DEFAULT_POINTS};
use crate::message::{prior_pdf, MessagePrior};
use crate::whitening::WhitenedSystem;

use super::DecodeResult;

/// Coefficients at or below this magnitude carry no factor-graph edge.
pub const EDGE_THRESHOLD: f64 = 1e-12;

/// Half-width of a constraint's convolution window in standard deviations
/// of the full sum.
const WINDOW_SDS: f64 = 8.0;
/// Bounds on the number of window bins (the FFT length is twice this).
const MIN_WINDOW_BINS: usize = 128;
const MAX_WINDOW_BINS: usize = 2048;
/// Bins per standard deviation of the narrowest leave-one-out sum.
const BINS_PER_SD: f64 = 4.0;
/// Floor on stored backward masses, `ln(1e-300)`.
const LOG_FLOOR: f64 = -690.7755278982137;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BpOptions {
    /// Stop once `||x^tau - x^(tau-1)|| <= eps_rec`.
    pub eps_rec: f64,
    pub max_iter: usize,
    /// Weight of the previous forward belief in each update.
    pub damping: f64,
}

impl BpOptions {
    /// `eps_rec = 1e-3 sqrt(k slab_var)`, 50 iterations, damping 0.5.
    pub fn for_prior(prior: &MessagePrior) -> Self {
        Self {
            eps_rec: 1e-3 * (prior.k() * prior.slab_var()).sqrt(),
            max_iter: 50,
            damping: 0.5,
        }
    }
}

/// `DEFAULT_POINTS` points over `+-8` slab standard deviations.
pub fn default_grid(prior: &MessagePrior) -> Grid {
    Grid::new(DEFAULT_HALF_WIDTH_SDS * prior.slab_var().sqrt(), DEFAULT_POINTS)
        .expect("positive slab variance")
}

/// Forward and backward beliefs on every factor-graph edge.
#[derive(Debug, Clone)]
pub struct BeliefState {
    grid: Grid,
    /// `(constraint, variable)` per edge, grouped by constraint.
    edges: Vec<(usize, usize)>,
    coef: Vec<f64>,
    check_offsets: Vec<usize>,
    var_edges: Vec<Vec<usize>>,
    forward: Vec<f64>,
    log_backward: Vec<f64>,
    iteration: usize,
}

impl BeliefState {
    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// `(constraint i, variable v)` of edge `e`.
    pub fn edge(&self, e: usize) -> (usize, usize) {
        self.edges[e]
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Belief `p_{v -> i}` on edge `e`.
    pub fn forward(&self, e: usize) -> &[f64] {
        let g = self.grid.points();
        &self.forward[e * g..(e + 1) * g]
    }

    /// Belief `p_{i -> v}` on edge `e` as bin masses.
    pub fn backward(&self, e: usize) -> Vec<f64> {
        let g = self.grid.points();
        let mut p: Vec<f64> = self.log_backward[e * g..(e + 1) * g].iter().map(|l| l.exp()).collect();
        grid::normalize(&mut p);
        p
    }

    /// Edges incident to variable `v`.
    pub fn variable_edges(&self, v: usize) -> &[usize] {
        &self.var_edges[v]
    }
}

type Plans = (Arc<dyn RealToComplex<f64>>, Arc<dyn ComplexToReal<f64>>);

/// Iterative decoder; [`bp_decode`] runs it to completion.
pub struct BpDecoder<'a> {
    ws: &'a WhitenedSystem,
    opts: BpOptions,
    grid: Grid,
    svals: Vec<f64>,
    log_prior: Vec<f64>,
    state: BeliefState,
    plans: HashMap<usize, Plans>,
    x_prev: DVector<f64>,
    s_hat: DVector<f64>,
    history: Vec<f64>,
}

impl<'a> BpDecoder<'a> {
    pub fn new(ws: &'a WhitenedSystem, prior: &MessagePrior, grid: Grid, opts: BpOptions) -> Result<Self> {
        let (m, n) = (ws.m(), ws.n());
        if prior.n() != n || ws.z.len() != m || ws.phi.nrows() != n {
            return Err(QncError::Dimension(format!(
                "prior dimension {}, system {m}x{n}, {} measurements",
                prior.n(),
                ws.z.len()
            )));
        }
        if !(0.0..1.0).contains(&opts.damping) {
            return Err(QncError::InvalidArgument(format!("damping {} outside [0, 1)", opts.damping)));
        }
        if ws.theta.iter().chain(ws.z.iter()).any(|v| !v.is_finite()) {
            return Err(QncError::NonFinite { iteration: 0, detail: "whitened system".into() });
        }
        let prior_mass = prior_pdf(prior, &grid)?;
        let gp = grid.points();

        let mut edges = Vec::new();
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
        let mut forward = Vec::with_capacity(edges.len() * gp);
        for _ in 0..edges.len() {
            forward.extend_from_slice(&prior_mass);
        }
        let log_backward = vec![-(gp as f64).ln(); edges.len() * gp];

        let mut planner = RealFftPlanner::<f64>::new();
        let mut plans = HashMap::new();
        let mut bins = MIN_WINDOW_BINS;
        while bins <= MAX_WINDOW_BINS {
            let len = 2 * bins;
            plans.insert(len, (planner.plan_fft_forward(len), planner.plan_fft_inverse(len)));
            bins *= 2;
        }

        let prior_mean = grid::mean(&grid, &prior_mass);
        let s0 = DVector::from_element(n, prior_mean);
        Ok(Self {
            ws,
            opts,
            grid,
            svals: grid.values(),
            log_prior: prior_mass.iter().map(|p| p.ln()).collect(),
            state: BeliefState {
                grid,
                edges,
                coef,
                check_offsets,
                var_edges,
                forward,
                log_backward,
                iteration: 0,
            },
            plans,
            x_prev: &ws.phi * &s0,
            s_hat: s0,
            history: Vec::new(),
        })
    }

    pub fn state(&self) -> &BeliefState {
        &self.state
    }

    /// Current coefficient estimate.
    pub fn s_hat(&self) -> &DVector<f64> {
        &self.s_hat
    }

    pub fn history(&self) -> &[f64] {
        &self.history
    }

    /// One constraint sweep followed by one variable sweep. Returns
    /// `||x^tau - x^(tau-1)||`.
    pub fn iterate(&mut self) -> Result<f64> {
        self.update_constraints();
        self.state.iteration += 1;
        self.update_variables()?;
        let x = &self.ws.phi * &self.s_hat;
        let step = (&x - &self.x_prev).norm();
        if !step.is_finite() {
            return Err(QncError::NonFinite { iteration: self.state.iteration, detail: "estimate".into() });
        }
        self.x_prev = x;
        self.history.push(step);
        Ok(step)
    }

    fn update_constraints(&mut self) {
        let gp = self.grid.points();
        let st = &self.state;
        let ctx = ConstraintCtx { grid: &self.grid, plans: &self.plans };
        let updated: Vec<Vec<f64>> = (0..self.ws.m())
            .into_par_iter()
            .map(|i| {
                let (a, b) = (st.check_offsets[i], st.check_offsets[i + 1]);
                let mut out = vec![0.0; (b - a) * gp];
                if b > a {
                    ctx.backward(&st.coef[a..b], &st.forward[a * gp..b * gp], self.ws.z[i], &mut out);
                }
                out
            })
            .collect();
        for (i, block) in updated.into_iter().enumerate() {
            let a = self.state.check_offsets[i] * gp;
            self.state.log_backward[a..a + block.len()].copy_from_slice(&block);
        }
    }

    fn update_variables(&mut self) -> Result<()> {
        let gp = self.grid.points();
        let keep = self.opts.damping;
        let mut total = vec![0.0; gp];
        let mut fresh = vec![0.0; gp];
        for v in 0..self.ws.n() {
            total.copy_from_slice(&self.log_prior);
            let edges = &self.state.var_edges[v];
            for &e in edges {
                let lb = &self.state.log_backward[e * gp..(e + 1) * gp];
                total.iter_mut().zip(lb).for_each(|(t, l)| *t += l);
            }
            let top = total.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !top.is_finite() {
                return Err(QncError::NonFinite {
                    iteration: self.state.iteration,
                    detail: format!("posterior of variable {v}"),
                });
            }
            let (mut mass, mut first) = (0.0, 0.0);
            for (j, &t) in total.iter().enumerate() {
                let w = (t - top).exp();
                mass += w;
                first += w * self.svals[j];
            }
            self.s_hat[v] = first / mass;

            for &e in edges {
                let lb = &self.state.log_backward[e * gp..(e + 1) * gp];
                let mut sum = 0.0;
                for j in 0..gp {
                    let w = (total[j] - top - lb[j]).exp();
                    fresh[j] = w;
                    sum += w;
                }
                if !(sum > 0.0 && sum.is_finite()) {
                    return Err(QncError::NonFinite {
                        iteration: self.state.iteration,
                        detail: format!("forward belief {v} -> {}", self.state.edges[e].0),
                    });
                }
                let scale = (1.0 - keep) / sum;
                let fw = &mut self.state.forward[e * gp..(e + 1) * gp];
                let mut norm = 0.0;
                for j in 0..gp {
                    fw[j] = keep * fw[j] + scale * fresh[j];
                    norm += fw[j];
                }
                let inv = 1.0 / norm;
                fw.iter_mut().for_each(|w| *w *= inv);
            }
        }
        Ok(())
    }
}

struct ConstraintCtx<'a> {
    grid: &'a Grid,
    plans: &'a HashMap<usize, Plans>,
}

impl ConstraintCtx<'_> {
    /// Log backward beliefs for every edge of one constraint node.
    fn backward(&self, coefs: &[f64], forward: &[f64], z: f64, out: &mut [f64]) {
        let gp = self.grid.points();
        let deg = coefs.len();
        let svals: Vec<f64> = self.grid.values();

        let moments: Vec<(f64, f64)> = (0..deg)
            .map(|k| {
                let f = &forward[k * gp..(k + 1) * gp];
                let mean: f64 = f.iter().zip(&svals).map(|(w, s)| w * s).sum();
                let var: f64 = f.iter().zip(&svals).map(|(w, s)| w * (s - mean) * (s - mean)).sum();
                (mean, var.max(0.0))
            })
            .collect();
        let center: f64 = coefs.iter().zip(&moments).map(|(c, (mu, _))| c * mu).sum();
        let term_var: Vec<f64> = coefs.iter().zip(&moments).map(|(c, (_, var))| c * c * var).collect();
        let total_var = 1.0 + term_var.iter().sum::<f64>();
        let narrowest = term_var
            .iter()
            .map(|tv| (total_var - tv).max(1.0))
            .fold(f64::INFINITY, f64::min);

        // Window over the centered sum; FFT length is twice the window.
        let half_width = WINDOW_SDS * total_var.sqrt();
        let wanted = (2.0 * half_width * BINS_PER_SD / narrowest.sqrt()).ceil() as usize;
        let bins = wanted.next_power_of_two().clamp(MIN_WINDOW_BINS, MAX_WINDOW_BINS);
        let len = 2 * bins;
        let h = 2.0 * half_width / bins as f64;
        let (fwd, inv) = &self.plans[&len];
        let spec_len = len / 2 + 1;
        let lo = -(len as i64 / 2);
        let hi = len as i64 / 2 - 1;
        let pos = |j: i64| j.clamp(lo, hi).rem_euclid(len as i64) as usize;

        let mut buf = vec![0.0; len];
        let mut scratch = fwd.make_scratch_vec();
        let mut spectra = vec![Complex::new(0.0, 0.0); deg * spec_len];
        for k in 0..deg {
            buf.iter_mut().for_each(|b| *b = 0.0);
            let (mu, _) = moments[k];
            let f = &forward[k * gp..(k + 1) * gp];
            for (j, &w) in f.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let r = coefs[k] * (svals[j] - mu) / h;
                let base = r.floor();
                let frac = r - base;
                let b = base as i64;
                buf[pos(b)] += w * (1.0 - frac);
                buf[pos(b + 1)] += w * frac;
            }
            fwd.process_with_scratch(&mut buf, &mut spectra[k * spec_len..(k + 1) * spec_len], &mut scratch)
                .expect("fft length matches plan");
        }

        // Unit-variance Gaussian noise as exact bin masses.
        buf.iter_mut().for_each(|b| *b = 0.0);
        let reach = ((12.0 / h).ceil() as i64).min(hi);
        for j in -reach..=reach {
            let a = (j as f64 - 0.5) * h;
            let b = (j as f64 + 0.5) * h;
            buf[pos(j)] += 0.5 * (erfc(a / std::f64::consts::SQRT_2) - erfc(b / std::f64::consts::SQRT_2));
        }
        let mut noise_spec = vec![Complex::new(0.0, 0.0); spec_len];
        fwd.process_with_scratch(&mut buf, &mut noise_spec, &mut scratch).expect("fft length matches plan");

        // prefix[k] = product of spectra before k.
        let mut prefix = vec![Complex::new(1.0, 0.0); deg * spec_len];
        for k in 1..deg {
            for q in 0..spec_len {
                prefix[k * spec_len + q] = prefix[(k - 1) * spec_len + q] * spectra[(k - 1) * spec_len + q];
            }
        }
        let mut suffix = noise_spec;
        let mut loo = vec![Complex::new(0.0, 0.0); spec_len];
        let mut inv_scratch = inv.make_scratch_vec();
        let mut cdf = vec![0.0; len + 1];
        let norm = 1.0 / len as f64;
        let step = self.grid.spacing();
        let left = -self.grid.half_width();
        for k in (0..deg).rev() {
            for q in 0..spec_len {
                loo[q] = prefix[k * spec_len + q] * suffix[q];
            }
            for q in 0..spec_len {
                suffix[q] *= spectra[k * spec_len + q];
            }
            loo[0].im = 0.0;
            loo[spec_len - 1].im = 0.0;
            inv.process_with_scratch(&mut loo, &mut buf, &mut inv_scratch).expect("fft length matches plan");

            // Cumulative distribution in natural order (bin o covers
            // [(o - len/2 - 1/2) h, (o - len/2 + 1/2) h)).
            for o in 0..len {
                let w = (buf[pos(o as i64 + lo)] * norm).max(0.0);
                cdf[o + 1] = cdf[o] + w;
            }
            let cdf_at = |y: f64| -> f64 {
                let r = y / h + 0.5 + (len / 2) as f64;
                if r <= 0.0 {
                    0.0
                } else if r >= len as f64 {
                    cdf[len]
                } else {
                    let o = r.floor() as usize;
                    cdf[o] + (r - o as f64) * (cdf[o + 1] - cdf[o])
                }
            };

            // Remaining sum, centered: z - (center - c mu) - c s.
            let c = coefs[k];
            let offset = z - center + c * moments[k].0;
            let dst = &mut out[k * gp..(k + 1) * gp];
            let mut prev = cdf_at(offset - c * left);
            let mut sum = 0.0;
            for (j, d) in dst.iter_mut().enumerate() {
                let next = cdf_at(offset - c * (left + (j + 1) as f64 * step));
                let mass = (prev - next).abs();
                *d = mass;
                sum += mass;
                prev = next;
            }
            if sum > 0.0 && sum.is_finite() {
                let inv_sum = 1.0 / sum;
                dst.iter_mut().for_each(|d| *d = (*d * inv_sum).ln().max(LOG_FLOOR));
            } else {
                // The measurement places no mass on the grid; stay neutral.
                dst.iter_mut().for_each(|d| *d = -(gp as f64).ln());
            }
        }
    }
}

/// Runs belief propagation until the estimate settles or `max_iter` is
/// reached. On non-convergence the iterate with the smallest step is
/// returned.
pub fn bp_decode(ws: &WhitenedSystem, prior: &MessagePrior, grid: Grid, opts: BpOptions) -> Result<DecodeResult> {
    let mut dec = BpDecoder::new(ws, prior, grid, opts)?;
    let mut best: Option<(f64, DVector<f64>)> = None;
    for _ in 0..opts.max_iter {
        let step = dec.iterate()?;
        if step <= opts.eps_rec {
            let s_hat = dec.s_hat.clone();
            return Ok(DecodeResult {
                x_hat: &ws.phi * &s_hat,
                s_hat,
                iterations: dec.state.iteration,
                converged: true,
                history: dec.history,
            });
        }
        if best.as_ref().map_or(true, |(b, _)| step < *b) {
            best = Some((step, dec.s_hat.clone()));
        }
    }
    let s_hat = best.map_or_else(|| dec.s_hat.clone(), |(_, s)| s);
    Ok(DecodeResult {
        x_hat: &ws.phi * &s_hat,
        s_hat,
        iterations: dec.state.iteration,
        converged: false,
        history: dec.history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn scalar_system(theta: f64, z: f64) -> WhitenedSystem {
        WhitenedSystem::from_parts(
            DMatrix::from_element(1, 1, theta),
            DVector::from_element(1, z),
            DMatrix::identity(1, 1),
        )
        .unwrap()
    }

    #[test]
    fn symmetric_posterior_has_zero_mean() {
        let prior = MessagePrior::new(1, 0.5, 5.0).unwrap();
        let ws = scalar_system(1.0, 0.0);
        let res = bp_decode(&ws, &prior, default_grid(&prior), BpOptions::for_prior(&prior)).unwrap();
        assert!(res.s_hat[0].abs() < 1e-9, "{}", res.s_hat[0]);
        assert!(res.converged);
    }

    #[test]
    fn beliefs_stay_normalized() {
        let prior = MessagePrior::new(4, 1.0, 5.0).unwrap();
        let theta = DMatrix::from_row_slice(3, 4, &[1.0, -0.5, 0.2, 0.0, 0.3, 1.2, -0.7, 0.4, -1.1, 0.0, 0.6, 0.9]);
        let z = DVector::from_vec(vec![2.0, -1.0, 0.5]);
        let ws = WhitenedSystem::from_parts(theta, z, DMatrix::identity(4, 4)).unwrap();
        let mut dec = BpDecoder::new(&ws, &prior, default_grid(&prior), BpOptions::for_prior(&prior)).unwrap();
        assert_eq!(dec.state().edge_count(), 10);
        for _ in 0..5 {
            dec.iterate().unwrap();
            let st = dec.state();
            for e in 0..st.edge_count() {
                let f = st.forward(e);
                assert!(f.iter().all(|&w| w >= 0.0 && w.is_finite()));
                assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-8);
                let b = st.backward(e);
                assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-8);
            }
        }
        assert!(dec.history().iter().all(|h| h.is_finite()));
    }

    #[test]
    fn diagonal_system_matches_scalar_posterior() {
        let prior = MessagePrior::new(3, 1.5, 5.0).unwrap();
        let theta = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 0.5]));
        let z = DVector::from_vec(vec![2.5, -3.0, 0.4]);
        let ws = WhitenedSystem::from_parts(theta.clone(), z.clone(), DMatrix::identity(3, 3)).unwrap();
        let grid = default_grid(&prior);
        let res = bp_decode(&ws, &prior, grid, BpOptions::for_prior(&prior)).unwrap();
        // Scalar posterior mean under the smoothed prior, by quadrature.
        let p = prior.sparsity();
        for v in 0..3 {
            let (t, zv) = (theta[(v, v)], z[v]);
            let (mut num, mut den) = (0.0, 0.0);
            let steps = 200_000;
            let r = grid.half_width();
            for j in 0..steps {
                let s = -r + (j as f64 + 0.5) * 2.0 * r / steps as f64;
                let pr = p * (-0.5 * s * s / prior.slab_var()).exp() / prior.slab_var().sqrt()
                    + (1.0 - p) * (-0.5 * s * s / prior.spike_var()).exp() / prior.spike_var().sqrt();
                let w = pr * (-0.5 * (zv - t * s).powi(2)).exp();
                num += w * s;
                den += w;
            }
            let expect = num / den;
            assert!((res.s_hat[v] - expect).abs() <= 2.0 * grid.spacing(), "v={v}: {} vs {expect}", res.s_hat[v]);
        }
    }

    #[test]
    fn isolated_variable_keeps_prior_mean() {
        let prior = MessagePrior::new(2, 1.0, 5.0).unwrap();
        let theta = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let ws = WhitenedSystem::from_parts(theta, DVector::from_element(1, 3.0), DMatrix::identity(2, 2)).unwrap();
        let res = bp_decode(&ws, &prior, default_grid(&prior), BpOptions::for_prior(&prior)).unwrap();
        assert!(res.s_hat[1].abs() < 1e-9);
        assert!(res.s_hat[0] > 1.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let prior = MessagePrior::new(2, 1.0, 5.0).unwrap();
        let ws = scalar_system(1.0, 0.0);
        assert!(BpDecoder::new(&ws, &prior, default_grid(&prior), BpOptions::for_prior(&prior)).is_err());
        let prior1 = MessagePrior::new(1, 0.5, 5.0).unwrap();
        let coarse = Grid::new(8.0 * 5f64.sqrt(), 128).unwrap();
        assert!(BpDecoder::new(&ws, &prior1, coarse, BpOptions::for_prior(&prior1)).is_err());
        let bad = scalar_system(f64::NAN, 0.0);
        assert!(BpDecoder::new(&bad, &prior1, default_grid(&prior1), BpOptions::for_prior(&prior1)).is_err());
    }
}
