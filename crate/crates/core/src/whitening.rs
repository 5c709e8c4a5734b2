//! Eigendecomposition-based whitening of the effective measurement noise.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{QncError, Result};
use crate::measurement::{effective_noise_covariance, MeasurementSystem};
use crate::message::SparsifyingTransform;

/// Relative eigenvalue floor.
pub const EIGEN_FLOOR: f64 = 1e-8;
/// Noise level substituted when the covariance is identically zero.
pub const NOISELESS_FLOOR: f64 = 1e-12;

/// Unit-noise system `z' = Theta' s + n'` with `Theta'` already composed
/// with the sparsifying transform.
#[derive(Debug, Clone)]
pub struct WhitenedSystem {
    pub z: DVector<f64>,
    pub theta: DMatrix<f64>,
    /// Transform mapping coefficient estimates back to messages.
    pub phi: DMatrix<f64>,
    pub floor_count: usize,
    /// `U_N`, columns are noise eigenvectors.
    pub eigvecs: DMatrix<f64>,
    /// `Lambda_N` after flooring.
    pub eigvals: DVector<f64>,
}

impl WhitenedSystem {
    /// System that is already white: `z = theta s + n` with `n ~ N(0, I)`.
    pub fn from_parts(theta: DMatrix<f64>, z: DVector<f64>, phi: DMatrix<f64>) -> Result<Self> {
        if theta.nrows() != z.len() {
            return Err(QncError::Dimension(format!("{} measurements vs {} rows", z.len(), theta.nrows())));
        }
        if phi.nrows() != theta.ncols() || !phi.is_square() {
            return Err(QncError::Dimension("transform does not match sensing matrix".into()));
        }
        let m = z.len();
        Ok(Self {
            z,
            theta,
            phi,
            floor_count: 0,
            eigvecs: DMatrix::identity(m, m),
            eigvals: DVector::from_element(m, 1.0),
        })
    }

    pub fn m(&self) -> usize {
        self.theta.nrows()
    }

    pub fn n(&self) -> usize {
        self.theta.ncols()
    }

    /// `Lambda_N^{-1/2} U_N^T v`.
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = self.eigvecs.tr_mul(v);
        for (o, l) in out.iter_mut().zip(self.eigvals.iter()) {
            *o /= l.sqrt();
        }
        out
    }

    /// `U_N Lambda_N^{1/2} z'`, the inverse of [`apply`](Self::apply).
    pub fn unwhiten(&self, w: &DVector<f64>) -> DVector<f64> {
        let scaled = DVector::from_iterator(w.len(), w.iter().zip(self.eigvals.iter()).map(|(a, l)| a * l.sqrt()));
        &self.eigvecs * scaled
    }
}

/// Whitens with the model covariance of `ms`.
pub fn whiten(ms: &MeasurementSystem, z_tot: &DVector<f64>, phi: &SparsifyingTransform) -> Result<WhitenedSystem> {
    whiten_with_covariance(&effective_noise_covariance(ms), &ms.psi, z_tot, phi)
}

/// Eigendecomposes `cov = U L U^T`, floors eigenvalues below
/// `EIGEN_FLOOR * max` and returns `z' = L^{-1/2} U^T z` and
/// `Theta' = L^{-1/2} U^T Psi phi`.
pub fn whiten_with_covariance(
    cov: &DMatrix<f64>,
    psi: &DMatrix<f64>,
    z_tot: &DVector<f64>,
    phi: &SparsifyingTransform,
) -> Result<WhitenedSystem> {
    let m = psi.nrows();
    if cov.nrows() != m || cov.ncols() != m || z_tot.len() != m {
        return Err(QncError::Dimension(format!(
            "covariance {}x{}, measurements {}, rows {m}",
            cov.nrows(),
            cov.ncols(),
            z_tot.len()
        )));
    }
    if phi.dim() != psi.ncols() {
        return Err(QncError::Dimension("transform does not match measurement matrix".into()));
    }
    let (eigvecs, eigvals, floor_count) = if cov.amax() == 0.0 {
        (DMatrix::identity(m, m), DVector::from_element(m, NOISELESS_FLOOR), 0)
    } else {
        let eig = SymmetricEigen::new(cov.clone());
        let floor = EIGEN_FLOOR * eig.eigenvalues.max();
        let mut count = 0;
        let vals = eig.eigenvalues.map(|l| {
            if l < floor {
                count += 1;
                floor
            } else {
                l
            }
        });
        (eig.eigenvectors, vals, count)
    };
    let mut ws = WhitenedSystem {
        z: DVector::zeros(m),
        theta: DMatrix::zeros(m, psi.ncols()),
        phi: phi.matrix().clone(),
        floor_count,
        eigvecs,
        eigvals,
    };
    ws.z = ws.apply(z_tot);
    let mut theta = ws.eigvecs.tr_mul(&(psi * phi.matrix()));
    for (i, mut row) in theta.row_iter_mut().enumerate() {
        row /= ws.eigvals[i].sqrt();
    }
    ws.theta = theta;
    Ok(ws)
}
