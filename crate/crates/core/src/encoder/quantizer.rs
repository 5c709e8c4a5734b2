use crate::error::{QncError, Result};
use crate::message::MessagePrior;
use crate::network::NetworkGraph;

use super::coefficients::{transfer_all, CoefficientSchedule};

/// Range of a quantizer in standard deviations of its predicted input.
pub const RANGE_SDS: f64 = 4.0;

/// Midrise uniform quantizer on `[-range, range]` with `levels` cells.
/// A zero range is the degenerate quantizer that always outputs 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeQuantizer {
    levels: u64,
    range: f64,
}

/// Output of one quantization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quantized {
    pub value: f64,
    pub clipped: bool,
}

impl EdgeQuantizer {
    pub fn new(bits: u32, range: f64) -> Result<Self> {
        if bits == 0 || bits > 52 {
            return Err(QncError::InvalidArgument(format!("quantizer bits {bits} outside 1..=52")));
        }
        if !(range >= 0.0) || !range.is_finite() {
            return Err(QncError::InvalidArgument(format!("quantizer range {range}")));
        }
        Ok(Self { levels: 1u64 << bits, range })
    }

    /// Quantizer with `2^floor(L * capacity)` levels.
    pub fn for_block(block_length: u32, capacity: f64, range: f64) -> Result<Self> {
        let bits = (block_length as f64 * capacity + 1e-9).floor();
        if bits < 1.0 {
            return Err(QncError::InvalidArgument(format!(
                "L * C = {} carries less than one bit",
                block_length as f64 * capacity
            )));
        }
        Self::new(bits as u32, range)
    }

    pub fn levels(&self) -> u64 {
        self.levels
    }

    pub fn range(&self) -> f64 {
        self.range
    }

    pub fn step(&self) -> f64 {
        2.0 * self.range / self.levels as f64
    }

    /// Uniform-noise model variance `step^2 / 12`.
    pub fn noise_variance(&self) -> f64 {
        let d = self.step();
        d * d / 12.0
    }

    pub fn quantize(&self, u: f64) -> Quantized {
        if self.range == 0.0 {
            return Quantized { value: 0.0, clipped: false };
        }
        let step = self.step();
        let clipped = u.abs() > self.range;
        let cell = ((u + self.range) / step).floor();
        let cell = cell.clamp(0.0, (self.levels - 1) as f64);
        Quantized { value: -self.range + (cell + 0.5) * step, clipped }
    }
}

/// Quantizers for every edge and slot `2..=t_final`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizerBank {
    per_slot: Vec<Vec<EdgeQuantizer>>,
}

impl QuantizerBank {
    pub fn get(&self, t: usize, e: usize) -> &EdgeQuantizer {
        &self.per_slot[t - 2][e]
    }

    pub fn t_final(&self) -> usize {
        self.per_slot.len() + 1
    }

    pub fn edge_count(&self) -> usize {
        self.per_slot.first().map_or(0, Vec::len)
    }
}

/// Predicted content variance `(k/n) slab_var sum_v Omega_{e,v}(t)^2`,
/// indexed `[t - 2][e]`.
pub fn predicted_variances(sched: &CoefficientSchedule, prior: &MessagePrior) -> Vec<Vec<f64>> {
    let power = prior.message_power();
    transfer_all(sched, sched.t_final())
        .iter()
        .map(|omega| {
            (0..omega.nrows())
                .map(|e| power * omega.row(e).iter().map(|w| w * w).sum::<f64>())
                .collect()
        })
        .collect()
}

/// Sizes each quantizer to `RANGE_SDS` predicted standard deviations with
/// `2^(L C_e)` levels.
pub fn design_quantizers(
    g: &NetworkGraph,
    sched: &CoefficientSchedule,
    prior: &MessagePrior,
    block_length: u32,
) -> Result<QuantizerBank> {
    if g.edge_count() != sched.edge_count() {
        return Err(QncError::Dimension("schedule does not match graph".into()));
    }
    let per_slot = predicted_variances(sched, prior)
        .into_iter()
        .map(|vars| {
            vars.into_iter()
                .zip(g.edges())
                .map(|(var, edge)| EdgeQuantizer::for_block(block_length, edge.capacity, RANGE_SDS * var.sqrt()))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(QuantizerBank { per_slot })
}
