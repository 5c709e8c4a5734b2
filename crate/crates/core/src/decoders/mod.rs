//! Message recovery from a whitened measurement system.

mod bp;
mod l1;
mod oracle;
mod relaxed;

use nalgebra::DVector;

use crate::error::{QncError, Result};

pub use bp::{bp_decode, default_grid, BeliefState, BpDecoder, BpOptions};
pub use l1::{default_noise_radius, l1_decode, L1Options};
pub use oracle::{exact_mmse_oracle, ORACLE_MAX_N};
pub use relaxed::bp_decode_gaussian;

/// Reported SNR when the reconstruction is exact.
pub const SNR_CAP_DB: f64 = 200.0;

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    pub x_hat: DVector<f64>,
    pub s_hat: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Per-iteration step sizes; for BP `||x^tau - x^(tau-1)||`, for l1 the
    /// objective value after each sweep of the final solve.
    pub history: Vec<f64>,
}

/// `10 log10(||x||^2 / ||x - x_hat||^2)`, capped at [`SNR_CAP_DB`].
pub fn snr(x: &DVector<f64>, x_hat: &DVector<f64>) -> Result<f64> {
    if x.len() != x_hat.len() {
        return Err(QncError::Dimension(format!("{} vs {} entries", x.len(), x_hat.len())));
    }
    let signal = x.norm_squared();
    if signal == 0.0 {
        return Err(QncError::InvalidArgument("SNR of an all-zero signal".into()));
    }
    let err = (x - x_hat).norm_squared();
    if err == 0.0 {
        return Ok(SNR_CAP_DB);
    }
    Ok((10.0 * (signal / err).log10()).min(SNR_CAP_DB))
}
