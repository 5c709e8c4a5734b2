//! CSV and SVG artifacts.
//!
//! Rows CSV columns, in order: `deployment, edge_count, sparsity_factor,
//! decoder, block_length, decode_time, delay_channel_uses, snr_db,
//! iterations, converged, clip_count, error`. Curve CSV columns start with
//! `decoder, snr_db_threshold, delay_channel_uses` followed by the setting
//! and the chosen configuration. Missing values are empty fields; reals are
//! written with 17 significant digits so they parse back exactly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{QncError, Result};

use super::config::OutputPaths;
use super::curves::CurvePoint;
use super::run::ResultRow;

pub const ROW_HEADER: [&str; 12] = [
    "deployment",
    "edge_count",
    "sparsity_factor",
    "decoder",
    "block_length",
    "decode_time",
    "delay_channel_uses",
    "snr_db",
    "iterations",
    "converged",
    "clip_count",
    "error",
];

pub const CURVE_HEADER: [&str; 10] = [
    "decoder",
    "snr_db_threshold",
    "delay_channel_uses",
    "edge_count",
    "sparsity_factor",
    "block_length",
    "decode_time",
    "mean_snr_db",
    "snr_stderr_db",
    "trials",
];

fn real(v: f64) -> String {
    format!("{v:.16e}")
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

fn csv_err(what: &str) -> impl Fn(csv::Error) -> QncError + '_ {
    move |e| QncError::Csv { path: what.into(), source: e }
}

fn to_csv(header: &[&str], records: impl Iterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(csv_err("<buffer>"))?;
    for rec in records {
        w.write_record(&rec).map_err(csv_err("<buffer>"))?;
    }
    w.into_inner().map_err(|e| QncError::Csv { path: "<buffer>".into(), source: e.into_error().into() })
}

pub fn rows_to_csv(rows: &[ResultRow]) -> Result<Vec<u8>> {
    to_csv(
        &ROW_HEADER,
        rows.iter().map(|r| {
            vec![
                r.deployment.to_string(),
                r.edge_count.to_string(),
                real(r.sparsity_factor),
                r.decoder.clone(),
                opt(r.block_length),
                opt(r.decode_time),
                opt(r.delay_channel_uses),
                opt(r.snr_db.map(real)),
                r.iterations.to_string(),
                r.converged.to_string(),
                r.clip_count.to_string(),
                r.error.clone().unwrap_or_default(),
            ]
        }),
    )
}

pub fn curves_to_csv(points: &[CurvePoint]) -> Result<Vec<u8>> {
    to_csv(
        &CURVE_HEADER,
        points.iter().map(|p| {
            vec![
                p.decoder.clone(),
                real(p.snr_db_threshold),
                real(p.delay_channel_uses),
                p.edge_count.to_string(),
                real(p.sparsity_factor),
                p.block_length.to_string(),
                opt(p.decode_time),
                real(p.mean_snr_db),
                real(p.snr_stderr_db),
                p.trials.to_string(),
            ]
        }),
    )
}

fn records(bytes: &[u8], header: &[&str], what: &str) -> Result<Vec<csv::StringRecord>> {
    let mut r = csv::Reader::from_reader(bytes);
    let found = r.headers().map_err(csv_err(what))?.clone();
    if found.iter().ne(header.iter().copied()) {
        return Err(QncError::Parse { line: 1, msg: format!("{what}: unexpected header") });
    }
    r.records().collect::<std::result::Result<_, _>>().map_err(csv_err(what))
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, line: usize) -> Result<T> {
    rec[i].parse().map_err(|_| QncError::Parse { line, msg: format!("bad value `{}` in column {}", &rec[i], i + 1) })
}

fn opt_field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, line: usize) -> Result<Option<T>> {
    if rec[i].is_empty() {
        Ok(None)
    } else {
        field(rec, i, line).map(Some)
    }
}

pub fn rows_from_csv(bytes: &[u8]) -> Result<Vec<ResultRow>> {
    records(bytes, &ROW_HEADER, "rows")?
        .iter()
        .enumerate()
        .map(|(k, rec)| {
            let line = k + 2;
            Ok(ResultRow {
                deployment: field(rec, 0, line)?,
                edge_count: field(rec, 1, line)?,
                sparsity_factor: field(rec, 2, line)?,
                decoder: rec[3].to_string(),
                block_length: opt_field(rec, 4, line)?,
                decode_time: opt_field(rec, 5, line)?,
                delay_channel_uses: opt_field(rec, 6, line)?,
                snr_db: opt_field(rec, 7, line)?,
                iterations: field(rec, 8, line)?,
                converged: field(rec, 9, line)?,
                clip_count: field(rec, 10, line)?,
                error: (!rec[11].is_empty()).then(|| rec[11].to_string()),
            })
        })
        .collect()
}

pub fn curves_from_csv(bytes: &[u8]) -> Result<Vec<CurvePoint>> {
    records(bytes, &CURVE_HEADER, "curves")?
        .iter()
        .enumerate()
        .map(|(k, rec)| {
            let line = k + 2;
            Ok(CurvePoint {
                decoder: rec[0].to_string(),
                snr_db_threshold: field(rec, 1, line)?,
                delay_channel_uses: field(rec, 2, line)?,
                edge_count: field(rec, 3, line)?,
                sparsity_factor: field(rec, 4, line)?,
                block_length: field(rec, 5, line)?,
                decode_time: opt_field(rec, 6, line)?,
                mean_snr_db: field(rec, 7, line)?,
                snr_stderr_db: field(rec, 8, line)?,
                trials: field(rec, 9, line)?,
            })
        })
        .collect()
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

/// SNR (vertical) against delay (horizontal), one series per decoder and
/// setting.
pub fn curves_to_svg(points: &[CurvePoint]) -> String {
    let (w, h, left, right, top, bottom) = (720.0, 480.0, 70.0, 190.0, 30.0, 60.0);
    let mut series: BTreeMap<(usize, u64, &str), Vec<(f64, f64)>> = BTreeMap::new();
    for p in points {
        series
            .entry((p.edge_count, p.sparsity_factor.to_bits(), p.decoder.as_str()))
            .or_default()
            .push((p.delay_channel_uses, p.snr_db_threshold));
    }
    let xs = points.iter().map(|p| p.delay_channel_uses);
    let ys = points.iter().map(|p| p.snr_db_threshold);
    let x_max = xs.fold(1.0, f64::max);
    let (y_min, y_max) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), y| (a.min(y), b.max(y)));
    let (y_min, y_max) = if y_min.is_finite() && y_max > y_min { (y_min, y_max) } else { (0.0, 1.0) };
    let px = |x: f64| left + x / x_max * (w - left - right);
    let py = |y: f64| h - bottom - (y - y_min) / (y_max - y_min) * (h - top - bottom);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let (x0, y0, x1, y1) = (left, h - bottom, w - right, top);
    let _ = writeln!(s, r#"<path d="M{x0} {y1} L{x0} {y0} L{x1} {y0}" stroke="black" fill="none"/>"#);
    for k in 0..=5 {
        let xv = x_max * k as f64 / 5.0;
        let yv = y_min + (y_max - y_min) * k as f64 / 5.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">{:.0}</text>"#,
            px(xv),
            y0 + 16.0,
            xv
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="end">{:.1}</text>"#,
            x0 - 6.0,
            py(yv) + 4.0,
            yv
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" font-size="13" text-anchor="middle">delay (channel uses)</text>"#,
        (x0 + x1) / 2.0,
        h - 18.0
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.1}" font-size="13" text-anchor="middle" transform="rotate(-90 18 {:.1})">SNR (dB)</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );
    let many = series.keys().map(|k| (k.0, k.1)).collect::<std::collections::BTreeSet<_>>().len() > 1;
    for (k, ((edges, bits, decoder), pts)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" stroke="{color}" fill="none" stroke-width="1.5"/>"#, path.join(" "));
        for &(x, y) in pts {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{color}"/>"#, px(x), py(y));
        }
        let label = if many {
            format!("{decoder} (|E|={edges}, k/n={})", f64::from_bits(*bits))
        } else {
            decoder.to_string()
        };
        let ly = top + 16.0 * k as f64;
        let _ = writeln!(s, r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/>"#, x1 + 12.0, x1 + 30.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" font-size="11">{label}</text>"#, x1 + 36.0, ly + 4.0);
    }
    s.push_str("</svg>\n");
    s
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| QncError::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| QncError::io(path, e))
}

/// Writes whichever of the rows CSV, curve CSV and plot have a path.
pub fn emit_outputs(rows: &[ResultRow], curves: &[CurvePoint], paths: &OutputPaths) -> Result<()> {
    if let Some(p) = &paths.rows {
        write(p, &rows_to_csv(rows)?)?;
    }
    if let Some(p) = &paths.curves {
        write(p, &curves_to_csv(curves)?)?;
    }
    if let Some(p) = &paths.plot {
        write(p, curves_to_svg(curves).as_bytes())?;
    }
    Ok(())
}

pub fn read_rows(path: &Path) -> Result<Vec<ResultRow>> {
    let bytes = std::fs::read(path).map_err(|e| QncError::io(path, e))?;
    rows_from_csv(&bytes)
}

pub fn read_curves(path: &Path) -> Result<Vec<CurvePoint>> {
    let bytes = std::fs::read(path).map_err(|e| QncError::io(path, e))?;
    curves_from_csv(&bytes)
}
