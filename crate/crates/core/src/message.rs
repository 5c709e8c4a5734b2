//! Spike-and-slab message model.
//!
//! Each coefficient `s_v` is zero with probability `1 - k/n` and drawn from
//! `N(0, slab_var)` otherwise. Sensors observe `x = phi * s` with `phi`
//! orthonormal. For belief propagation the point mass is widened to a narrow
//! Gaussian of variance `spike_var` so every belief is an ordinary density.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{QncError, Result};
use crate::grid::Grid;
use crate::seed;

/// Spike variance relative to the slab variance.
pub const SPIKE_VARIANCE_RATIO: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MessagePrior {
    n: usize,
    k: f64,
    slab_var: f64,
    spike_var: f64,
}

impl MessagePrior {
    pub fn new(n: usize, k: f64, slab_var: f64) -> Result<Self> {
        Self::with_spike(n, k, slab_var, slab_var * SPIKE_VARIANCE_RATIO)
    }

    /// `k` may be zero (all-spike prior) even though a useful model has `k > 0`.
    pub fn with_spike(n: usize, k: f64, slab_var: f64, spike_var: f64) -> Result<Self> {
        if n == 0 {
            return Err(QncError::InvalidArgument("prior dimension must be positive".into()));
        }
        if !(0.0..=n as f64).contains(&k) {
            return Err(QncError::InvalidArgument(format!("sparsity k={k} outside [0, {n}]")));
        }
        if !(slab_var > 0.0) || !slab_var.is_finite() {
            return Err(QncError::InvalidArgument(format!("slab variance {slab_var}")));
        }
        if !(spike_var > 0.0) || spike_var > slab_var * 1e-3 * (1.0 + 1e-12) {
            return Err(QncError::InvalidArgument(format!(
                "spike variance {spike_var} must be in (0, slab_var * 1e-3]"
            )));
        }
        Ok(Self { n, k, slab_var, spike_var })
    }

    pub fn from_sparsity_factor(n: usize, factor: f64, slab_var: f64) -> Result<Self> {
        Self::new(n, factor * n as f64, slab_var)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    /// `k / n`, the probability that a coefficient is active.
    pub fn sparsity(&self) -> f64 {
        self.k / self.n as f64
    }

    pub fn slab_var(&self) -> f64 {
        self.slab_var
    }

    pub fn spike_var(&self) -> f64 {
        self.spike_var
    }

    /// `E[X_v^2] = (k/n) * slab_var`.
    pub fn message_power(&self) -> f64 {
        self.sparsity() * self.slab_var
    }
}

/// Orthonormal `n x n` matrix `phi`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsifyingTransform {
    phi: DMatrix<f64>,
}

impl SparsifyingTransform {
    pub fn from_matrix(phi: DMatrix<f64>) -> Result<Self> {
        if !phi.is_square() {
            return Err(QncError::Dimension("sparsifying transform must be square".into()));
        }
        let gram = phi.transpose() * &phi;
        let err = (gram - DMatrix::identity(phi.nrows(), phi.nrows())).amax();
        if err > 1e-10 {
            return Err(QncError::InvalidArgument(format!(
                "transform is not orthonormal (max Gram error {err:e})"
            )));
        }
        Ok(Self { phi })
    }

    pub fn identity(n: usize) -> Self {
        Self { phi: DMatrix::identity(n, n) }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub fn dim(&self) -> usize {
        self.phi.nrows()
    }
}

/// Orthonormalizes a square standard-normal matrix. The signs of the QR
/// factor are fixed by the diagonal of `R`, which makes the result Haar
/// distributed.
pub fn random_orthonormal(n: usize, seed: u64) -> Result<SparsifyingTransform> {
    if n == 0 {
        return Err(QncError::InvalidArgument("transform dimension must be positive".into()));
    }
    let mut rng = seed::rng(seed);
    let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    Ok(SparsifyingTransform { phi: orthonormalize(g) })
}

/// Orthonormal factor of a full-rank square or tall matrix (columns).
pub(crate) fn orthonormalize(g: DMatrix<f64>) -> DMatrix<f64> {
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..q.ncols() {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

#[derive(Debug, Clone, PartialEq)]
pub struct MessageEnsemble {
    pub q: Vec<bool>,
    pub s: DVector<f64>,
    pub x: DVector<f64>,
}

impl MessageEnsemble {
    pub fn support_size(&self) -> usize {
        self.q.iter().filter(|&&b| b).count()
    }

    /// Columnar text: one `v q s x` line per node, one-based `v`.
    pub fn to_columns(&self) -> String {
        let mut out = String::from("v q s x\n");
        for v in 0..self.q.len() {
            let _ = writeln!(out, "{} {} {} {}", v + 1, u8::from(self.q[v]), self.s[v], self.x[v]);
        }
        out
    }

    pub fn from_columns(text: &str) -> Result<Self> {
        let (mut q, mut s, mut x) = (Vec::new(), Vec::new(), Vec::new());
        for (i, line) in text.lines().enumerate().skip(1) {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.is_empty() {
                continue;
            }
            let bad = |msg: &str| QncError::Parse { line: i + 1, msg: msg.into() };
            if f.len() != 4 {
                return Err(bad("expected `v q s x`"));
            }
            if f[0].parse::<usize>().ok() != Some(q.len() + 1) {
                return Err(bad("rows must be ordered by v"));
            }
            q.push(match f[1] {
                "0" => false,
                "1" => true,
                _ => return Err(bad("q must be 0 or 1")),
            });
            s.push(f[2].parse::<f64>().map_err(|_| bad("bad s"))?);
            x.push(f[3].parse::<f64>().map_err(|_| bad("bad x"))?);
        }
        Ok(Self { q, s: DVector::from_vec(s), x: DVector::from_vec(x) })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_columns()).map_err(|e| QncError::io(path, e))
    }
}

pub fn sample_messages(
    prior: &MessagePrior,
    phi: &SparsifyingTransform,
    seed: u64,
) -> Result<MessageEnsemble> {
    if prior.n() != phi.dim() {
        return Err(QncError::Dimension(format!(
            "prior dimension {} vs transform dimension {}",
            prior.n(),
            phi.dim()
        )));
    }
    let mut rng = seed::rng(seed);
    let p = prior.sparsity();
    let sd = prior.slab_var().sqrt();
    let n = prior.n();
    let mut q = Vec::with_capacity(n);
    let mut s = DVector::zeros(n);
    for v in 0..n {
        let active = rng.gen_bool(p.clamp(0.0, 1.0));
        // The slab draw is consumed either way so the support pattern does
        // not shift the amplitudes of later coefficients.
        let amp: f64 = rng.sample(StandardNormal);
        q.push(active);
        if active {
            s[v] = sd * amp;
        }
    }
    let x = phi.matrix() * &s;
    Ok(MessageEnsemble { q, s, x })
}

/// Discretized prior masses on `grid`: slab `N(0, slab_var)` with weight
/// `k/n` plus spike `N(0, spike_var)` with weight `1 - k/n`, renormalized.
pub fn prior_pdf(prior: &MessagePrior, grid: &Grid) -> Result<Vec<f64>> {
    let spike_sd = prior.spike_var().sqrt();
    if grid.spacing() > spike_sd {
        return Err(QncError::GridTooCoarse { spacing: grid.spacing(), spike_sd });
    }
    let slab_sd = prior.slab_var().sqrt();
    if grid.half_width() < 6.0 * slab_sd * (1.0 - 1e-12) {
        return Err(QncError::InvalidArgument(format!(
            "grid half-width {} below 6 slab standard deviations ({})",
            grid.half_width(),
            6.0 * slab_sd
        )));
    }
    let p = prior.sparsity();
    let gauss = |x: f64, var: f64| (-0.5 * x * x / var).exp() / (2.0 * std::f64::consts::PI * var).sqrt();
    let mut mass: Vec<f64> = grid
        .values()
        .into_iter()
        .map(|s| (p * gauss(s, prior.slab_var()) + (1.0 - p) * gauss(s, prior.spike_var())) * grid.spacing())
        .collect();
    crate::grid::normalize(&mut mass);
    Ok(mass)
}
