use std::collections::BTreeMap;

use super::run::ResultRow;

/// Cheapest configuration reaching one quality level.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub decoder: String,
    pub snr_db_threshold: f64,
    /// Mean delay of the chosen `(L, T)` group, in channel uses.
    pub delay_channel_uses: f64,
    pub edge_count: usize,
    pub sparsity_factor: f64,
    pub block_length: u32,
    /// Decode time of the chosen group; empty for forwarding.
    pub decode_time: Option<usize>,
    pub mean_snr_db: f64,
    /// Standard error of the mean SNR.
    pub snr_stderr_db: f64,
    pub trials: usize,
}

/// Per-`(setting, decoder, L, T)` averages over successful rows.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupStats {
    pub mean_delay: f64,
    pub mean_snr_db: f64,
    pub snr_stderr_db: f64,
    pub trials: usize,
}

type SettingKey = (usize, u64, String);
type GroupKey = (u32, Option<usize>);

/// Groups successful rows by setting, decoder, `L` and `T`.
pub fn group_stats(rows: &[ResultRow]) -> BTreeMap<SettingKey, BTreeMap<GroupKey, GroupStats>> {
    let mut acc: BTreeMap<SettingKey, BTreeMap<GroupKey, (Vec<f64>, Vec<f64>)>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.is_ok()) {
        let (Some(l), Some(delay), Some(db)) = (r.block_length, r.delay_channel_uses, r.snr_db) else {
            continue;
        };
        let entry = acc
            .entry((r.edge_count, r.sparsity_factor.to_bits(), r.decoder.clone()))
            .or_default()
            .entry((l, r.decode_time))
            .or_default();
        entry.0.push(delay as f64);
        entry.1.push(db);
    }
    acc.into_iter()
        .map(|(setting, groups)| {
            let stats = groups
                .into_iter()
                .map(|(key, (delays, snrs))| {
                    let k = snrs.len() as f64;
                    let mean = snrs.iter().sum::<f64>() / k;
                    let stderr = if snrs.len() > 1 {
                        (snrs.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (k - 1.0) / k).sqrt()
                    } else {
                        0.0
                    };
                    let stats = GroupStats {
                        mean_delay: delays.iter().sum::<f64>() / delays.len() as f64,
                        mean_snr_db: mean,
                        snr_stderr_db: stderr,
                        trials: snrs.len(),
                    };
                    (key, stats)
                })
                .collect();
            (setting, stats)
        })
        .collect()
}

/// For each threshold, the smallest mean delay over all `(L, T)` groups
/// whose mean SNR reaches it, per decoder and setting. Thresholds no group
/// reaches are omitted. Ties prefer the higher SNR, then the smaller `L`.
pub fn best_delay_per_quality(rows: &[ResultRow], snr_grid: &[f64]) -> Vec<CurvePoint> {
    let mut out = Vec::new();
    for ((edge_count, factor_bits, decoder), groups) in group_stats(rows) {
        for &threshold in snr_grid {
            let best = groups
                .iter()
                .filter(|(_, s)| s.mean_snr_db >= threshold)
                .min_by(|(ka, a), (kb, b)| {
                    a.mean_delay
                        .total_cmp(&b.mean_delay)
                        .then(b.mean_snr_db.total_cmp(&a.mean_snr_db))
                        .then(ka.cmp(kb))
                });
            if let Some((&(l, t), s)) = best {
                out.push(CurvePoint {
                    decoder: decoder.clone(),
                    snr_db_threshold: threshold,
                    delay_channel_uses: s.mean_delay,
                    edge_count,
                    sparsity_factor: f64::from_bits(factor_bits),
                    block_length: l,
                    decode_time: t,
                    mean_snr_db: s.mean_snr_db,
                    snr_stderr_db: s.snr_stderr_db,
                    trials: s.trials,
                });
            }
        }
    }
    out
}

/// Delay of `decoder` at `threshold` in `curve`, if reached.
pub fn delay_at(curve: &[CurvePoint], decoder: &str, threshold: f64) -> Option<f64> {
    curve
        .iter()
        .find(|p| p.decoder == decoder && p.snr_db_threshold == threshold)
        .map(|p| p.delay_channel_uses)
}
