use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DVector;

use crate::error::{QncError, Result};

use super::coefficients::CoefficientSchedule;
use super::quantizer::QuantizerBank;

/// Edge contents, quantization noises and gateway packets of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTrace {
    /// `Y(t)` for `t = 1..=T`; `y[0]` is the rest state.
    pub y: Vec<DVector<f64>>,
    /// `N(t)` for `t = 2..=T`.
    pub noise: Vec<DVector<f64>>,
    /// `Z(t) = B Y(t)` for `t = 2..=T`.
    pub z: Vec<DVector<f64>>,
    pub clip_count: u64,
    /// Clipped quantizations per slot `t = 2..=T`.
    pub slot_clips: Vec<u64>,
    pub quantization_count: u64,
}

impl SimulationTrace {
    pub fn t_final(&self) -> usize {
        self.y.len()
    }

    pub fn content(&self, t: usize) -> &DVector<f64> {
        &self.y[t - 1]
    }

    pub fn noise_at(&self, t: usize) -> &DVector<f64> {
        &self.noise[t - 2]
    }

    /// Stacked gateway packets `Z_tot(t)` for slots `2..=t`.
    pub fn z_tot(&self, t: usize) -> DVector<f64> {
        stack(&self.z[..t - 1])
    }

    /// Clipped quantizations in slots `2..=t`.
    pub fn clips_through(&self, t: usize) -> u64 {
        self.slot_clips[..t - 1].iter().sum()
    }

    /// Stacked quantization noises `N_tot(t)` for slots `2..=t`.
    pub fn n_tot(&self, t: usize) -> DVector<f64> {
        stack(&self.noise[..t - 1])
    }

    /// Per-slot records `t e Y_e(t) N_e(t)` (one-based edge ids).
    pub fn to_text(&self) -> String {
        let mut out = String::from("t e y n\n");
        for t in 2..=self.t_final() {
            let (y, n) = (self.content(t), self.noise_at(t));
            for e in 0..y.len() {
                let _ = writeln!(out, "{t} {} {} {}", e + 1, y[e], n[e]);
            }
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let edges = self.y.first().map_or(0, DVector::len);
        let packets = self.z.first().map_or(0, DVector::len);
        let mut out = Vec::new();
        out.extend_from_slice(TRACE_MAGIC);
        for v in [self.t_final() as u64, edges as u64, packets as u64, self.clip_count, self.quantization_count] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for c in &self.slot_clips {
            out.extend_from_slice(&c.to_le_bytes());
        }
        for vecs in [&self.y, &self.noise, &self.z] {
            for v in vecs.iter() {
                for x in v.iter() {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| QncError::Parse { line: 0, msg: msg.into() };
        let body = bytes.strip_prefix(TRACE_MAGIC.as_slice()).ok_or_else(|| bad("bad trace magic"))?;
        let mut words = body.chunks_exact(8).map(|c| c.try_into().unwrap());
        let mut next_u64 = || words.next().map(u64::from_le_bytes).ok_or_else(|| bad("truncated trace"));
        let t_final = next_u64()? as usize;
        let edges = next_u64()? as usize;
        let packets = next_u64()? as usize;
        let clip_count = next_u64()?;
        let quantization_count = next_u64()?;
        if t_final < 1 {
            return Err(bad("trace needs at least the rest slot"));
        }
        let slot_clips = (1..t_final).map(|_| next_u64()).collect::<Result<Vec<_>>>()?;
        let mut vecs = |count: usize, len: usize| -> Result<Vec<DVector<f64>>> {
            (0..count)
                .map(|_| {
                    (0..len)
                        .map(|_| next_u64().map(f64::from_bits))
                        .collect::<Result<Vec<_>>>()
                        .map(DVector::from_vec)
                })
                .collect()
        };
        let y = vecs(t_final, edges)?;
        let noise = vecs(t_final - 1, edges)?;
        let z = vecs(t_final - 1, packets)?;
        if body.len() != 8 * (5 + (t_final - 1) + t_final * edges + (t_final - 1) * (edges + packets)) {
            return Err(bad("trailing bytes in trace"));
        }
        Ok(Self { y, noise, z, clip_count, slot_clips, quantization_count })
    }

    pub fn write_text(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| QncError::io(path, e))
    }
}

const TRACE_MAGIC: &[u8; 8] = b"QNCTRC01";

fn stack(parts: &[DVector<f64>]) -> DVector<f64> {
    DVector::from_iterator(parts.iter().map(DVector::len).sum(), parts.iter().flat_map(|v| v.iter().copied()))
}

/// Runs the slotted recursion
/// `Y_e(t) = Q_e[sum_{e'} beta_{e,e'}(t) Y_{e'}(t-1) + alpha_{e,v}(t) x_v]`
/// from the rest state `Y(1) = 0`. With `quantizers = None` the quantizers
/// are bypassed and every recorded noise is zero.
pub fn simulate(
    sched: &CoefficientSchedule,
    quantizers: Option<&QuantizerBank>,
    x: &DVector<f64>,
) -> Result<SimulationTrace> {
    let m = sched.edge_count();
    let t_final = sched.t_final();
    if x.len() != sched.node_count() {
        return Err(QncError::Dimension(format!(
            "message vector has {} entries, schedule expects {}",
            x.len(),
            sched.node_count()
        )));
    }
    if let Some(q) = quantizers {
        if q.t_final() < t_final || q.edge_count() != m {
            return Err(QncError::Dimension("quantizer bank does not cover the schedule".into()));
        }
    }
    let mut y = vec![DVector::zeros(m)];
    let mut noise = Vec::with_capacity(t_final - 1);
    let mut z = Vec::with_capacity(t_final - 1);
    let mut clip_count = 0;
    let mut slot_clips = Vec::with_capacity(t_final - 1);
    let mut quantization_count = 0;
    let mut input = vec![0.0; m];
    for t in 2..=t_final {
        sched.apply_f(t, y[t - 2].as_slice(), &mut input);
        let mut yt = DVector::zeros(m);
        let mut nt = DVector::zeros(m);
        let clips_before = clip_count;
        for e in 0..m {
            let u = input[e] + sched.alpha(t, e) * x[sched.tail(e)];
            match quantizers {
                Some(bank) => {
                    let out = bank.get(t, e).quantize(u);
                    quantization_count += 1;
                    clip_count += u64::from(out.clipped);
                    yt[e] = out.value;
                    nt[e] = out.value - u;
                }
                None => yt[e] = u,
            }
        }
        z.push(DVector::from_iterator(
            sched.gateway_edges().len(),
            sched.gateway_edges().iter().map(|&e| yt[e]),
        ));
        y.push(yt);
        noise.push(nt);
        slot_clips.push(clip_count - clips_before);
    }
    Ok(SimulationTrace { y, noise, z, clip_count, slot_clips, quantization_count })
}
