use rayon::prelude::*;

use crate::decoders::{
    bp_decode, bp_decode_gaussian, default_grid, exact_mmse_oracle, l1_decode, snr, BpOptions, DecodeResult,
    L1Options,
};
use crate::encoder::{design_quantizers, generate_coefficients, simulate};
use crate::error::{QncError, Result};
use crate::forwarding::simulate_forwarding;
use crate::measurement::{build_measurement_system, effective_noise_covariance};
use crate::message::{random_orthonormal, sample_messages, MessagePrior};
use crate::network::{generate_reachable_network, shortest_paths};
use crate::seed;
use crate::whitening::{whiten_with_covariance, WhitenedSystem};

use super::config::{DecoderKind, ExperimentConfig};

/// Environment variable capping the number of worker threads.
pub const WORKERS_ENV: &str = "QNC_WORKERS";
/// Deployment draws before a trial gives up on full reachability.
pub const MAX_DEPLOYMENT_ATTEMPTS: usize = 1000;

pub const FORWARDING: &str = "forwarding";
/// Decoder label of rows recording a failed deployment.
pub const TRIAL_FAILURE: &str = "trial";

/// One evaluated `(trial, decoder, L, T)`; forwarding rows leave `T` empty.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub deployment: usize,
    pub edge_count: usize,
    pub sparsity_factor: f64,
    pub decoder: String,
    pub block_length: Option<u32>,
    pub decode_time: Option<usize>,
    pub delay_channel_uses: Option<usize>,
    pub snr_db: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub clip_count: u64,
    pub error: Option<String>,
}

impl ResultRow {
    pub fn is_ok(&self) -> bool {
        self.error.is_none() && self.snr_db.is_some()
    }
}

/// Worker count from [`WORKERS_ENV`], if set to a positive integer.
pub fn worker_cap() -> Option<usize> {
    std::env::var(WORKERS_ENV).ok()?.trim().parse().ok().filter(|&w| w > 0)
}

/// Runs every trial of every `(edge count, sparsity factor)` setting.
///
/// Trials run concurrently; each derives its seeds from the master seed and
/// its own index, so the rows do not depend on scheduling. A deployment is
/// shared by all sparsity factors of the same trial and edge count.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let units: Vec<(usize, f64, usize)> = cfg
        .edge_counts
        .iter()
        .flat_map(|&e| cfg.sparsity_factors.iter().flat_map(move |&f| (0..cfg.trials).map(move |t| (e, f, t))))
        .collect();
    let work = || -> Vec<ResultRow> {
        units.par_iter().flat_map_iter(|&(edges, factor, trial)| run_trial(cfg, edges, factor, trial)).collect()
    };
    match worker_cap() {
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .map_err(|e| QncError::Config(format!("worker pool: {e}")))?;
            Ok(pool.install(work))
        }
        None => Ok(work()),
    }
}

struct TrialSeeds {
    graph: u64,
    coefficients: u64,
    phi: u64,
    messages: u64,
}

impl TrialSeeds {
    fn new(master: u64, trial: usize, edges: usize, factor: f64) -> Self {
        let t = seed::child(master, trial as u64);
        Self {
            graph: seed::purpose(t, &format!("graph/{edges}")),
            coefficients: seed::purpose(t, &format!("coefficients/{edges}")),
            phi: seed::purpose(t, "phi"),
            messages: seed::purpose(t, &format!("messages/{factor}")),
        }
    }
}

fn run_trial(cfg: &ExperimentConfig, edges: usize, factor: f64, trial: usize) -> Vec<ResultRow> {
    let base = ResultRow {
        deployment: trial,
        edge_count: edges,
        sparsity_factor: factor,
        decoder: TRIAL_FAILURE.into(),
        block_length: None,
        decode_time: None,
        delay_channel_uses: None,
        snr_db: None,
        iterations: 0,
        converged: false,
        clip_count: 0,
        error: None,
    };
    let mut rows = Vec::new();
    if let Err(e) = trial_rows(cfg, &base, &mut rows) {
        rows.push(ResultRow { error: Some(e.to_string()), ..base });
    }
    rows
}

fn trial_rows(cfg: &ExperimentConfig, base: &ResultRow, rows: &mut Vec<ResultRow>) -> Result<()> {
    let seeds = TrialSeeds::new(cfg.master_seed, base.deployment, base.edge_count, base.sparsity_factor);
    let g = generate_reachable_network(cfg.n, base.edge_count, cfg.capacity, seeds.graph, MAX_DEPLOYMENT_ATTEMPTS)?;
    let rt = shortest_paths(&g);
    let prior = MessagePrior::from_sparsity_factor(cfg.n, base.sparsity_factor, cfg.slab_var)?;
    let phi = random_orthonormal(cfg.n, seeds.phi)?;
    let x = sample_messages(&prior, &phi, seeds.messages)?.x;
    if x.iter().all(|&v| v == 0.0) {
        return Err(QncError::InvalidArgument("all-zero message vector; SNR undefined".into()));
    }
    let sched = generate_coefficients(&g, cfg.t_max, seeds.coefficients)?;
    let noiseless = build_measurement_system(&sched, None)?;
    let packets = noiseless.packets_per_slot();
    let bp_opts = BpOptions::for_prior(&prior);
    let use_grid = cfg.bp_rule.use_grid(cfg.n);

    for &l in &cfg.block_lengths {
        let qnc = ResultRow { block_length: Some(l), ..base.clone() };
        let fw = simulate_forwarding(&g, &rt, &x, l, &prior).and_then(|f| Ok((snr(&x, &f.x_hat)?, f)));
        rows.push(match fw {
            Ok((db, f)) => ResultRow {
                decoder: FORWARDING.into(),
                delay_channel_uses: Some(f.delay_channel_uses),
                snr_db: Some(db),
                converged: true,
                clip_count: f.clip_count,
                ..qnc.clone()
            },
            Err(e) => ResultRow { decoder: FORWARDING.into(), error: Some(e.to_string()), ..qnc.clone() },
        });

        let slot_rows = design_quantizers(&g, &sched, &prior, l).and_then(|bank| {
            let trace = simulate(&sched, Some(&bank), &x)?;
            let cov = effective_noise_covariance(&noiseless.with_quantizers(&bank)?);
            Ok((trace, cov))
        });
        let (trace, cov) = match slot_rows {
            Ok(parts) => parts,
            Err(e) => {
                for d in &cfg.decoders {
                    rows.push(ResultRow { decoder: d.to_string(), error: Some(e.to_string()), ..qnc.clone() });
                }
                continue;
            }
        };
        for t in 2..=cfg.t_max {
            let m = (t - 1) * packets;
            let row = ResultRow {
                decode_time: Some(t),
                delay_channel_uses: Some(l as usize * (t - 1)),
                clip_count: trace.clips_through(t),
                ..qnc.clone()
            };
            let psi = noiseless.psi.rows(0, m).into_owned();
            let cov_t = cov.view((0, 0), (m, m)).into_owned();
            let ws = whiten_with_covariance(&cov_t, &psi, &trace.z_tot(t), &phi).map_err(|e| e.to_string());
            for &d in &cfg.decoders {
                let res = ws.as_ref().map_err(String::clone).and_then(|ws| {
                    let r = decode(d, ws, &prior, bp_opts, use_grid).map_err(|e| e.to_string())?;
                    Ok((snr(&x, &r.x_hat).map_err(|e| e.to_string())?, r))
                });
                let row = ResultRow { decoder: d.to_string(), ..row.clone() };
                rows.push(match res {
                    Ok((db, r)) => ResultRow {
                        snr_db: Some(db),
                        iterations: r.iterations,
                        converged: r.converged,
                        ..row
                    },
                    Err(e) => ResultRow { error: Some(e), ..row },
                });
            }
        }
    }
    Ok(())
}

fn decode(
    kind: DecoderKind,
    ws: &WhitenedSystem,
    prior: &MessagePrior,
    bp_opts: BpOptions,
    use_grid: bool,
) -> Result<DecodeResult> {
    match kind {
        DecoderKind::Bp if use_grid => bp_decode(ws, prior, default_grid(prior), bp_opts),
        DecoderKind::Bp => bp_decode_gaussian(ws, prior, bp_opts),
        DecoderKind::L1 => l1_decode(ws, L1Options::default()),
        DecoderKind::Oracle => exact_mmse_oracle(ws, prior),
    }
}

/// Rows of one decoder, in emission order.
pub fn rows_for<'a>(rows: &'a [ResultRow], decoder: &'a str) -> impl Iterator<Item = &'a ResultRow> + 'a {
    rows.iter().filter(move |r| r.decoder == decoder)
}

/// Mean of the successful SNRs in `rows`.
pub fn mean_snr<'a>(rows: impl IntoIterator<Item = &'a ResultRow>) -> Option<f64> {
    let vals: Vec<f64> = rows.into_iter().filter_map(|r| r.snr_db).collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(decoders: &str, blocks: &str, t_max: usize, trials: usize) -> ExperimentConfig {
        ExperimentConfig::from_toml(&format!(
            "n = 20\nedge_counts = [80]\nsparsity_factors = [0.2]\nblock_lengths = {blocks}\n\
             t_max = {t_max}\ndecoders = {decoders}\ntrials = {trials}\nmaster_seed = 1\n"
        ))
        .unwrap()
    }

    #[test]
    fn counting_contract() {
        let rows = run_experiment(&small("[\"l1\"]", "[8]", 3, 1)).unwrap();
        assert_eq!(rows.iter().filter(|r| r.decoder == "l1").count(), 2);
        assert_eq!(rows.iter().filter(|r| r.decoder == FORWARDING).count(), 1);
        assert_eq!(rows.len(), 3);
    }

    #[test]
    fn delays_follow_block_length() {
        let rows = run_experiment(&small("[\"l1\", \"bp\"]", "[4, 6]", 4, 2)).unwrap();
        for r in &rows {
            assert!(r.is_ok(), "{r:?}");
            let l = r.block_length.unwrap() as usize;
            match r.decode_time {
                Some(t) => assert_eq!(r.delay_channel_uses, Some(l * (t - 1))),
                None => assert_eq!(r.delay_channel_uses.unwrap() % l, 0),
            }
        }
    }

    #[test]
    fn same_seed_same_rows() {
        let cfg = small("[\"l1\"]", "[4]", 4, 3);
        assert_eq!(run_experiment(&cfg).unwrap(), run_experiment(&cfg).unwrap());
        let mut other = cfg.clone();
        other.master_seed += 1;
        assert_ne!(run_experiment(&cfg).unwrap(), run_experiment(&other).unwrap());
    }

    #[test]
    fn failed_deployment_becomes_error_row() {
        // Two edges cannot connect three nodes to a gateway.
        let mut cfg = small("[\"l1\"]", "[4]", 3, 1);
        cfg.n = 3;
        cfg.edge_counts = vec![1];
        let rows = run_experiment(&cfg).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].decoder, TRIAL_FAILURE);
        assert!(rows[0].error.is_some());
    }
}
