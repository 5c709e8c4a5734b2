//! Quadratically constrained l1 minimization,
//! `min ||s||_1  s.t.  ||Theta' s - z'||_2 <= eps`.
//!
//! Solved through the equivalent penalized problem
//! `min 0.5 ||Theta' s - z'||^2 + lambda ||s||_1`: the residual norm of its
//! solution grows monotonically with `lambda`, so `lambda` is bracketed by
//! halving it from `max |Theta'^T z'|` and then bisected on a log scale
//! (warm-starting each solve) until the residual sits within 1% of `eps`. Each penalized problem is solved by cyclic coordinate descent on
//! the cached Gram matrix.

use nalgebra::{DMatrix, DVector};

use crate::error::{QncError, Result};
use crate::whitening::WhitenedSystem;

use super::DecodeResult;

/// Ratio between consecutive penalties on the initial path.
const PATH_FACTOR: f64 = 0.5;
/// Smallest penalty tried, relative to `max |Theta^T z|`.
const LAMBDA_FLOOR: f64 = 1e-12;

/// Radius containing a `chi_m` whitened-noise norm with about 99%
/// probability: `sqrt(m) + 2 (2m)^(1/4)`.
pub fn default_noise_radius(m: usize) -> f64 {
    let m = m as f64;
    m.sqrt() + 2.0 * (2.0 * m).powf(0.25)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct L1Options {
    /// Constraint radius; `None` uses [`default_noise_radius`].
    pub eps_noise: Option<f64>,
    /// Relative tolerance of the residual norm against the radius.
    pub radius_tol: f64,
    pub max_bisections: usize,
    /// Inner stopping rule on the relative duality gap.
    pub gap_tol: f64,
    /// Cap on coordinate-descent sweeps per penalized solve.
    pub max_inner: usize,
}

impl Default for L1Options {
    fn default() -> Self {
        Self { eps_noise: None, radius_tol: 0.01, max_bisections: 60, gap_tol: 1e-9, max_inner: 20_000 }
    }
}

struct Lasso<'a> {
    theta: &'a DMatrix<f64>,
    z: &'a DVector<f64>,
    /// `Theta^T Theta` and `Theta^T z`.
    gram: DMatrix<f64>,
    corr: DVector<f64>,
    gap_tol: f64,
    max_inner: usize,
}

struct LassoSolution {
    s: DVector<f64>,
    residual: f64,
    iterations: usize,
    converged: bool,
    objective: Vec<f64>,
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

impl Lasso<'_> {
    fn objective(&self, resid: &DVector<f64>, s: &DVector<f64>, lambda: f64) -> f64 {
        0.5 * resid.norm_squared() + lambda * s.lp_norm(1)
    }

    /// Relative duality gap at `s` with residual `resid = Theta s - z`.
    fn gap(&self, resid: &DVector<f64>, s: &DVector<f64>, lambda: f64) -> f64 {
        let primal = self.objective(resid, s, lambda);
        let corr = self.theta.tr_mul(resid).amax();
        let scale = if corr > lambda { lambda / corr } else { 1.0 };
        // Dual point nu = -scale * resid, D(nu) = nu^T z - 0.5 ||nu||^2.
        let dual = -scale * resid.dot(self.z) - 0.5 * scale * scale * resid.norm_squared();
        (primal - dual) / primal.max(f64::MIN_POSITIVE)
    }

    /// Cyclic coordinate descent; one sweep updates every coordinate once
    /// by exact minimization, so the objective never increases.
    fn solve(&self, lambda: f64, start: &DVector<f64>) -> LassoSolution {
        let n = start.len();
        let mut s = start.clone();
        // grad = Theta^T (Theta s - z), kept current across updates.
        let mut grad = &self.gram * &s - &self.corr;
        let mut resid = self.theta * &s - self.z;
        let mut objective = vec![self.objective(&resid, &s, lambda)];
        let mut converged = false;
        let mut sweeps = 0;
        while sweeps < self.max_inner {
            sweeps += 1;
            for j in 0..n {
                let d = self.gram[(j, j)];
                if d <= 0.0 {
                    continue;
                }
                let new = soft_threshold(s[j] - grad[j] / d, lambda / d);
                let delta = new - s[j];
                if delta != 0.0 {
                    s[j] = new;
                    grad.axpy(delta, &self.gram.column(j), 1.0);
                }
            }
            resid = self.theta * &s - self.z;
            grad = self.theta.tr_mul(&resid);
            objective.push(self.objective(&resid, &s, lambda));
            if self.gap(&resid, &s, lambda) <= self.gap_tol {
                converged = true;
                break;
            }
        }
        LassoSolution { residual: resid.norm(), s, iterations: sweeps, converged, objective }
    }
}

pub fn l1_decode(ws: &WhitenedSystem, opts: L1Options) -> Result<DecodeResult> {
    let (m, n) = (ws.m(), ws.n());
    let eps = opts.eps_noise.unwrap_or_else(|| default_noise_radius(m));
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(QncError::InvalidArgument(format!("noise radius {eps}")));
    }
    let finish = |s_hat: DVector<f64>, iterations, converged, history| DecodeResult {
        x_hat: &ws.phi * &s_hat,
        s_hat,
        iterations,
        converged,
        history,
    };
    let z_norm = ws.z.norm();
    if z_norm <= eps || m == 0 {
        return Ok(finish(DVector::zeros(n), 0, true, vec![0.0]));
    }
    let lambda_max = ws.theta.tr_mul(&ws.z).amax();
    if lambda_max == 0.0 {
        // z is orthogonal to every column; nothing better than zero exists.
        return Ok(finish(DVector::zeros(n), 0, false, vec![0.5 * z_norm * z_norm]));
    }
    let lasso = Lasso {
        theta: &ws.theta,
        z: &ws.z,
        gram: ws.theta.tr_mul(&ws.theta),
        corr: ws.theta.tr_mul(&ws.z),
        gap_tol: opts.gap_tol,
        max_inner: opts.max_inner,
    };

    // Walk down the path from lambda_max until the residual drops to eps,
    // then bisect log(lambda) inside the last step. Every solve starts from
    // the sparser solution at the upper end of the bracket.
    let floor = lambda_max * LAMBDA_FLOOR;
    let (mut hi, mut hi_s) = (lambda_max, DVector::zeros(n));
    let mut lo = None;
    let mut total_iter = 0;
    let mut best: Option<LassoSolution> = None;
    let consider = |sol: LassoSolution, best: &mut Option<LassoSolution>| {
        let miss = ((sol.residual - eps) / eps).abs();
        let hit = miss <= opts.radius_tol;
        if best.as_ref().map_or(true, |b| miss < ((b.residual - eps) / eps).abs()) {
            *best = Some(sol);
        }
        hit
    };
    let mut hit = false;
    while lo.is_none() && hi > floor {
        let lambda = (hi * PATH_FACTOR).max(floor);
        let sol = lasso.solve(lambda, &hi_s);
        total_iter += sol.iterations;
        if sol.residual > eps {
            hi = lambda;
            hi_s.copy_from(&sol.s);
        } else {
            lo = Some(lambda);
        }
        if consider(sol, &mut best) {
            hit = true;
            break;
        }
    }
    if let (false, Some(mut lo)) = (hit, lo) {
        for _ in 0..opts.max_bisections {
            let lambda = (lo * hi).sqrt();
            let sol = lasso.solve(lambda, &hi_s);
            total_iter += sol.iterations;
            if sol.residual > eps {
                hi = lambda;
                hi_s.copy_from(&sol.s);
            } else {
                lo = lambda;
            }
            if consider(sol, &mut best) {
                hit = true;
                break;
            }
        }
    }
    let sol = best.expect("at least one penalized solve");
    let converged = hit && sol.converged;
    Ok(finish(sol.s, total_iter, converged, sol.objective))
}
