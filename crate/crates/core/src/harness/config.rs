use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::decoders::ORACLE_MAX_N;
use crate::error::{QncError, Result};

pub const DEFAULT_TRIALS: usize = 50;
pub const DEFAULT_SLAB_VAR: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderKind {
    Bp,
    L1,
    Oracle,
}

impl DecoderKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DecoderKind::Bp => "bp",
            DecoderKind::L1 => "l1",
            DecoderKind::Oracle => "oracle",
        }
    }
}

impl fmt::Display for DecoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How BP constraint nodes combine their incoming beliefs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BpRule {
    /// Grid convolution for small `n`, Gaussian sums otherwise.
    #[default]
    Auto,
    Grid,
    Gaussian,
}

/// Largest `n` for which [`BpRule::Auto`] uses grid convolutions.
pub const AUTO_GRID_MAX_N: usize = 32;

impl BpRule {
    pub fn use_grid(self, n: usize) -> bool {
        match self {
            BpRule::Auto => n <= AUTO_GRID_MAX_N,
            BpRule::Grid => true,
            BpRule::Gaussian => false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputPaths {
    pub rows: Option<PathBuf>,
    pub curves: Option<PathBuf>,
    pub plot: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n: usize,
    pub edge_counts: Vec<usize>,
    pub sparsity_factors: Vec<f64>,
    #[serde(default = "default_slab_var")]
    pub slab_var: f64,
    /// Block lengths `L` to sweep.
    pub block_lengths: Vec<u32>,
    /// QNC rows are produced for every decode time `T` in `2..=t_max`.
    pub t_max: usize,
    pub decoders: Vec<DecoderKind>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_capacity")]
    pub capacity: f64,
    #[serde(default)]
    pub bp_rule: BpRule,
    /// Thresholds (dB) for the delay/quality curves written by `run`.
    #[serde(default)]
    pub snr_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub output: OutputPaths,
}

fn default_slab_var() -> f64 {
    DEFAULT_SLAB_VAR
}

fn default_trials() -> usize {
    DEFAULT_TRIALS
}

fn default_capacity() -> f64 {
    crate::network::DEFAULT_CAPACITY
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| QncError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| QncError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(QncError::Config(msg));
        if self.n < 2 {
            return bad(format!("n = {} (need at least 2 nodes)", self.n));
        }
        for (name, empty) in [
            ("edge_counts", self.edge_counts.is_empty()),
            ("sparsity_factors", self.sparsity_factors.is_empty()),
            ("block_lengths", self.block_lengths.is_empty()),
            ("decoders", self.decoders.is_empty()),
        ] {
            if empty {
                return bad(format!("{name} is empty"));
            }
        }
        if self.trials < 1 {
            return bad("trials must be at least 1".into());
        }
        if self.t_max < 2 {
            return bad(format!("t_max = {} (need at least 2)", self.t_max));
        }
        if let Some(&e) = self.edge_counts.iter().find(|&&e| e < 1 || e > self.n * (self.n - 1)) {
            return bad(format!("edge count {e} outside 1..={}", self.n * (self.n - 1)));
        }
        if let Some(f) = self.sparsity_factors.iter().find(|f| !(0.0..=1.0).contains(*f)) {
            return bad(format!("sparsity factor {f} outside [0, 1]"));
        }
        if !(self.slab_var > 0.0 && self.slab_var.is_finite()) {
            return bad(format!("slab_var = {}", self.slab_var));
        }
        if !(self.capacity > 0.0 && self.capacity.is_finite()) {
            return bad(format!("capacity = {}", self.capacity));
        }
        if let Some(&l) = self.block_lengths.iter().find(|&&l| (l as f64 * self.capacity) < 1.0) {
            return bad(format!("block length {l} carries less than one bit per edge"));
        }
        if self.decoders.contains(&DecoderKind::Oracle) && self.n > ORACLE_MAX_N {
            return bad(format!("oracle decoder needs n <= {ORACLE_MAX_N}, got {}", self.n));
        }
        if let Some(grid) = &self.snr_grid {
            if grid.iter().any(|v| !v.is_finite()) {
                return bad("snr_grid holds a non-finite threshold".into());
            }
        }
        Ok(())
    }
}
