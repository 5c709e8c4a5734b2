use nalgebra::{DMatrix, DVector};

use crate::error::{QncError, Result};
use crate::message::MessagePrior;
use crate::whitening::WhitenedSystem;

use super::DecodeResult;

pub const ORACLE_MAX_N: usize = 14;

/// Exact posterior mean under the unsmoothed spike-and-slab prior, by
/// enumerating all `2^n` supports. For support `q`,
/// `z' | q ~ N(0, slab_var Theta_q Theta_q^T + I)` and
/// `E[s_q | z', q] = slab_var Theta_q^T (slab_var Theta_q Theta_q^T + I)^{-1} z'`.
pub fn exact_mmse_oracle(ws: &WhitenedSystem, prior: &MessagePrior) -> Result<DecodeResult> {
    let (m, n) = (ws.m(), ws.n());
    if n > ORACLE_MAX_N {
        return Err(QncError::OracleTooLarge { n, max: ORACLE_MAX_N });
    }
    if prior.n() != n {
        return Err(QncError::Dimension(format!("prior dimension {} vs {n} variables", prior.n())));
    }
    let p = prior.sparsity();
    let (log_on, log_off) = (p.ln(), (1.0 - p).ln());
    let var = prior.slab_var();

    let mut log_w = Vec::with_capacity(1 << n);
    let mut means: Vec<DVector<f64>> = Vec::with_capacity(1 << n);
    for mask in 0u32..(1u32 << n) {
        let support: Vec<usize> = (0..n).filter(|&v| mask & (1 << v) != 0).collect();
        let k = support.len();
        let lp = scaled_log(k, log_on) + scaled_log(n - k, log_off);
        if lp == f64::NEG_INFINITY {
            continue;
        }
        let theta_q = ws.theta.select_columns(&support);
        let cov = &theta_q * theta_q.transpose() * var + DMatrix::identity(m, m);
        let chol = cov
            .cholesky()
            .ok_or_else(|| QncError::NonFinite { iteration: 0, detail: "support covariance".into() })?;
        let alpha = chol.solve(&ws.z);
        let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        log_w.push(lp - 0.5 * log_det - 0.5 * ws.z.dot(&alpha));
        let cond = theta_q.tr_mul(&alpha) * var;
        let mut mean = DVector::zeros(n);
        for (slot, &v) in support.iter().enumerate() {
            mean[v] = cond[slot];
        }
        means.push(mean);
    }
    let top = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return Err(QncError::NonFinite { iteration: 0, detail: "support weights".into() });
    }
    let mut s_hat = DVector::zeros(n);
    let mut total = 0.0;
    for (lw, mean) in log_w.iter().zip(&means) {
        let w = (lw - top).exp();
        total += w;
        s_hat.axpy(w, mean, 1.0);
    }
    s_hat /= total;
    Ok(DecodeResult {
        x_hat: &ws.phi * &s_hat,
        s_hat,
        iterations: 1,
        converged: true,
        history: Vec::new(),
    })
}

/// `count * log_p`, treating `0 * -inf` as 0.
fn scaled_log(count: usize, log_p: f64) -> f64 {
    if count == 0 {
        0.0
    } else {
        count as f64 * log_p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;
    use rand_distr::StandardNormal;

    fn system(theta: DMatrix<f64>, z: DVector<f64>) -> WhitenedSystem {
        let n = theta.ncols();
        WhitenedSystem::from_parts(theta, z, DMatrix::identity(n, n)).unwrap()
    }

    #[test]
    fn all_spike_prior_gives_zero() {
        let prior = MessagePrior::new(3, 0.0, 5.0).unwrap();
        let ws = system(DMatrix::identity(3, 3), DVector::from_vec(vec![4.0, -2.0, 9.0]));
        let res = exact_mmse_oracle(&ws, &prior).unwrap();
        assert_eq!(res.s_hat, DVector::zeros(3));
    }

    #[test]
    fn scalar_wiener_filter() {
        let prior = MessagePrior::new(1, 1.0, 5.0).unwrap();
        let ws = system(DMatrix::identity(1, 1), DVector::from_element(1, 1.7));
        let res = exact_mmse_oracle(&ws, &prior).unwrap();
        assert!((res.s_hat[0] - 5.0 * 1.7 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn permutation_equivariant() {
        let mut rng = crate::seed::rng(3);
        let theta = DMatrix::from_fn(4, 6, |_, _| rng.sample::<f64, _>(StandardNormal));
        let z = DVector::from_fn(4, |_, _| rng.sample::<f64, _>(StandardNormal));
        let prior = MessagePrior::new(6, 1.5, 5.0).unwrap();
        let base = exact_mmse_oracle(&system(theta.clone(), z.clone()), &prior).unwrap();
        let perm = [3, 0, 5, 1, 4, 2];
        let permuted = theta.select_columns(&perm);
        let res = exact_mmse_oracle(&system(permuted, z), &prior).unwrap();
        for (slot, &v) in perm.iter().enumerate() {
            assert!((res.s_hat[slot] - base.s_hat[v]).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_brute_force_quadrature_in_one_dimension() {
        let prior = MessagePrior::new(1, 0.3, 2.0).unwrap();
        let ws = system(DMatrix::from_element(1, 1, 1.3), DVector::from_element(1, 2.2));
        let res = exact_mmse_oracle(&ws, &prior).unwrap();
        // Point mass handled analytically, slab by a fine Riemann sum.
        let lik = |s: f64| (-0.5 * (2.2 - 1.3 * s).powi(2)).exp();
        let (mut num, mut den) = (0.0, 0.7 * lik(0.0));
        let steps = 400_000;
        for j in 0..steps {
            let s = -20.0 + (j as f64 + 0.5) * 40.0 / steps as f64;
            let w = 0.3 * (-0.25 * s * s).exp() / (4.0 * std::f64::consts::PI).sqrt() * lik(s) * 40.0 / steps as f64;
            num += w * s;
            den += w;
        }
        assert!((res.s_hat[0] - num / den).abs() < 1e-8);
    }

    #[test]
    fn rejects_large_systems() {
        let prior = MessagePrior::new(15, 1.0, 1.0).unwrap();
        let ws = system(DMatrix::zeros(2, 15), DVector::zeros(2));
        assert!(matches!(exact_mmse_oracle(&ws, &prior), Err(QncError::OracleTooLarge { .. })));
    }
}
