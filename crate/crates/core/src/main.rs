use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use qnc_core::harness::{
    best_delay_per_quality, curves_to_csv, emit_outputs, read_curves, read_rows, run_experiment, ExperimentConfig,
    OutputPaths, WORKERS_ENV,
};
use qnc_core::{QncError, Result};

/// Thresholds used by `run` when the config gives no `snr_grid`.
const DEFAULT_SNR_GRID: &str = "0:30:1";

#[derive(Parser)]
#[command(name = "qnc", version, about = "Quantized network coding simulator")]
#[command(after_help = format!("Set {WORKERS_ENV}=<count> to cap the number of worker threads."))]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Build delay/quality curves from a rows CSV.
    Curves {
        #[arg(long)]
        input: PathBuf,
        /// Comma-separated thresholds in dB, or `start:stop:step`.
        #[arg(long, allow_hyphen_values = true)]
        snr_grid: String,
        /// Output CSV; standard output if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw a curves CSV as SVG.
    Plot {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let bad = || QncError::Config(format!("bad SNR grid `{spec}`"));
    let nums = |sep: char| -> Result<Vec<f64>> {
        spec.split(sep).map(|s| s.trim().parse::<f64>().map_err(|_| bad())).collect()
    };
    let grid = if spec.contains(':') {
        let [start, stop, step] = nums(':')?[..] else { return Err(bad()) };
        if !(step > 0.0) || stop < start {
            return Err(bad());
        }
        let count = ((stop - start) / step + 1e-9).floor() as usize;
        (0..=count).map(|i| start + i as f64 * step).collect()
    } else {
        nums(',')?
    };
    if grid.is_empty() || grid.iter().any(|v| !v.is_finite()) {
        return Err(bad());
    }
    Ok(grid)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let grid = match &cfg.snr_grid {
                Some(g) => g.clone(),
                None => parse_grid(DEFAULT_SNR_GRID)?,
            };
            let rows = run_experiment(&cfg)?;
            let curves = best_delay_per_quality(&rows, &grid);
            let paths = if cfg.output == OutputPaths::default() {
                OutputPaths { rows: Some("rows.csv".into()), curves: Some("curves.csv".into()), plot: None }
            } else {
                cfg.output.clone()
            };
            emit_outputs(&rows, &curves, &paths)?;
            let failed = rows.iter().filter(|r| r.error.is_some()).count();
            eprintln!("{} rows ({failed} failed)", rows.len());
        }
        Command::Curves { input, snr_grid, out } => {
            let rows = read_rows(&input)?;
            let curves = best_delay_per_quality(&rows, &parse_grid(&snr_grid)?);
            match out {
                Some(path) => emit_outputs(&[], &curves, &OutputPaths { curves: Some(path), ..Default::default() })?,
                None => {
                    use std::io::Write as _;
                    std::io::stdout().write_all(&curves_to_csv(&curves)?).map_err(|e| QncError::Io {
                        path: "<stdout>".into(),
                        source: e,
                    })?;
                }
            }
        }
        Command::Plot { input, out } => {
            let curves = read_curves(&input)?;
            emit_outputs(&[], &curves, &OutputPaths { plot: Some(out), ..Default::default() })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
