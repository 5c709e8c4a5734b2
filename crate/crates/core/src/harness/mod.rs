//! Experiment orchestration: trial sweeps, quality/delay curves and output
//! files.

mod config;
mod curves;
mod output;
mod run;

pub use config::{BpRule, DecoderKind, ExperimentConfig, OutputPaths, AUTO_GRID_MAX_N, DEFAULT_SLAB_VAR, DEFAULT_TRIALS};
pub use curves::{best_delay_per_quality, delay_at, group_stats, CurvePoint, GroupStats};
pub use output::{
    curves_from_csv, curves_to_csv, curves_to_svg, emit_outputs, read_curves, read_rows, rows_from_csv, rows_to_csv,
    CURVE_HEADER, ROW_HEADER,
};
pub use run::{
    mean_snr, rows_for, run_experiment, worker_cap, ResultRow, FORWARDING, MAX_DEPLOYMENT_ATTEMPTS, TRIAL_FAILURE,
    WORKERS_ENV,
};
