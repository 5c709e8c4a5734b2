//! Total measurement system at the gateway.
//!
//! Stacking the gateway packets of slots `2..=T` gives
//! `Z_tot = Psi_tot x + Psi_N,tot N_tot`, where `N_tot` stacks the per-edge
//! quantization noises. The noise model is diagonal with the uniform-noise
//! variance `step^2 / 12` of each quantizer.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::encoder::{transfer_all, CoefficientSchedule, QuantizerBank};
use crate::error::{QncError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSystem {
    /// `m x n` total measurement matrix.
    pub psi: DMatrix<f64>,
    /// `m x (T-1)|E|` map from stacked quantization noises to measurements.
    pub psi_noise: DMatrix<f64>,
    /// Diagonal of the quantization-noise covariance, length `(T-1)|E|`.
    pub lambda_q: DVector<f64>,
    packets_per_slot: usize,
    edge_count: usize,
}

impl MeasurementSystem {
    /// Number of stacked measurements, `(T - 1) |In(v0)|`.
    pub fn m(&self) -> usize {
        self.psi.nrows()
    }

    pub fn n(&self) -> usize {
        self.psi.ncols()
    }

    pub fn t_final(&self) -> usize {
        if self.packets_per_slot == 0 {
            return self.lambda_q.len() / self.edge_count.max(1) + 1;
        }
        self.m() / self.packets_per_slot + 1
    }

    pub fn packets_per_slot(&self) -> usize {
        self.packets_per_slot
    }

    /// The same system under the noise model of `bank`. `Psi_tot` and
    /// `Psi_N,tot` do not depend on the quantizers, so a sweep over block
    /// lengths can build them once.
    pub fn with_quantizers(&self, bank: &QuantizerBank) -> Result<Self> {
        let slots = self.t_final() - 1;
        if bank.t_final() < slots + 1 || bank.edge_count() != self.edge_count {
            return Err(QncError::Dimension("quantizer bank does not cover the system".into()));
        }
        let e_count = self.edge_count;
        let lambda_q =
            DVector::from_fn(slots * e_count, |j, _| bank.get(j / e_count + 2, j % e_count).noise_variance());
        Ok(Self { lambda_q, psi: self.psi.clone(), psi_noise: self.psi_noise.clone(), ..*self })
    }

    /// The system seen by a decoder that stops after slot `t`. Measurements
    /// of slot `t` depend only on noises up to `t`, so this is a leading
    /// block of the full system.
    pub fn truncated(&self, t: usize) -> Self {
        assert!((2..=self.t_final()).contains(&t));
        let rows = (t - 1) * self.packets_per_slot;
        let cols = (t - 1) * self.edge_count;
        Self {
            psi: self.psi.rows(0, rows).into_owned(),
            psi_noise: self.psi_noise.view((0, 0), (rows, cols)).into_owned(),
            lambda_q: self.lambda_q.rows(0, cols).into_owned(),
            ..*self
        }
    }
}

/// Assembles `Psi_tot`, `Psi_N,tot` and `Lambda_Q` for slots `2..=T`.
///
/// The block of slot `t` is `B Omega(t)`; the noise injected at slot `t' <= t`
/// reaches it through `B F(t) ... F(t'+1)`. Without quantizers the noise
/// covariance is zero.
pub fn build_measurement_system(
    sched: &CoefficientSchedule,
    quantizers: Option<&QuantizerBank>,
) -> Result<MeasurementSystem> {
    let t_final = sched.t_final();
    let e_count = sched.edge_count();
    let gw = sched.gateway_edges();
    let p = gw.len();
    if let Some(q) = quantizers {
        if q.t_final() < t_final || q.edge_count() != e_count {
            return Err(QncError::Dimension("quantizer bank does not cover the schedule".into()));
        }
    }
    let slots = t_final - 1;
    let m = slots * p;
    let mut psi = DMatrix::zeros(m, sched.node_count());
    for (k, omega) in transfer_all(sched, t_final).iter().enumerate() {
        for (i, &e) in gw.iter().enumerate() {
            psi.row_mut(k * p + i).copy_from(&omega.row(e));
        }
    }

    let mut psi_noise = DMatrix::zeros(m, slots * e_count);
    let mut scratch = vec![0.0; e_count];
    for t in 2..=t_final {
        let row0 = (t - 2) * p;
        // Rows of B F(t) ... F(t'+1), walked backwards from t' = t.
        let mut prop: Vec<Vec<f64>> = gw
            .iter()
            .map(|&e| {
                let mut r = vec![0.0; e_count];
                r[e] = 1.0;
                r
            })
            .collect();
        for tp in (2..=t).rev() {
            let col0 = (tp - 2) * e_count;
            for (i, r) in prop.iter().enumerate() {
                for (c, &w) in r.iter().enumerate() {
                    psi_noise[(row0 + i, col0 + c)] = w;
                }
            }
            if tp > 2 {
                for r in prop.iter_mut() {
                    left_multiply_f(sched, tp, r, &mut scratch);
                    r.copy_from_slice(&scratch);
                }
            }
        }
    }

    let lambda_q = DVector::from_iterator(
        slots * e_count,
        (2..=t_final).flat_map(|t| (0..e_count).map(move |e| (t, e))).map(|(t, e)| {
            quantizers.map_or(0.0, |q| q.get(t, e).noise_variance())
        }),
    );
    Ok(MeasurementSystem { psi, psi_noise, lambda_q, packets_per_slot: p, edge_count: e_count })
}

/// `out = r F(t)` for a row vector `r`.
fn left_multiply_f(sched: &CoefficientSchedule, t: usize, r: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for (e, &w) in r.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        for &(ep, b) in sched.beta_row(t, e) {
            out[ep] += w * b;
        }
    }
}

/// `Psi_N,tot Lambda_Q Psi_N,tot^T`, symmetrized.
pub fn effective_noise_covariance(ms: &MeasurementSystem) -> DMatrix<f64> {
    let mut scaled = ms.psi_noise.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= ms.lambda_q[j].sqrt();
    }
    let cov = &scaled * scaled.transpose();
    (&cov + cov.transpose()) * 0.5
}

/// Dense text export: one row per line, space separated, row-major.
pub fn matrix_to_text(a: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for r in 0..a.nrows() {
        let row: Vec<String> = a.row(r).iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
    out
}

pub fn matrix_from_text(text: &str) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split_whitespace()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| QncError::Parse { line: i + 1, msg: e.to_string() })?;
        if rows.first().is_some_and(|r0| r0.len() != row.len()) {
            return Err(QncError::Parse { line: i + 1, msg: "ragged row".into() });
        }
        rows.push(row);
    }
    let ncols = rows.first().map_or(0, Vec::len);
    Ok(DMatrix::from_row_iterator(rows.len(), ncols, rows.into_iter().flatten()))
}

pub fn write_matrix(a: &DMatrix<f64>, path: &Path) -> Result<()> {
    std::fs::write(path, matrix_to_text(a)).map_err(|e| QncError::io(path, e))
}
