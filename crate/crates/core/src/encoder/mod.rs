//! Quantized network coding: coefficient schedules, per-edge quantizers and
//! the slotted encoding recursion.

mod coefficients;
mod quantizer;
mod simulate;

pub use coefficients::{
    generate_coefficients, local_orthonormal_block, transfer_all, transfer_coefficients,
    CoefficientSchedule, SparseRow,
};
pub use quantizer::{
    design_quantizers, predicted_variances, EdgeQuantizer, Quantized, QuantizerBank, RANGE_SDS,
};
pub use simulate::{simulate, SimulationTrace};
