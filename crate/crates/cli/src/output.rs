use std::fs;
use std::path::Path;

use chibar_core::sim::EcdfPoint;
use chibar_core::{CellResult, WeightVector};
use serde::Serialize;

use crate::error::CliError;

#[derive(Serialize)]
pub struct Manifest<'a, C: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'a str,
    pub args: Vec<String>,
    pub config: &'a C,
    pub seed: u64,
    pub timestamp: String,
}

impl<'a, C: Serialize> Manifest<'a, C> {
    pub fn new(command: &'a str, config: &'a C, seed: u64) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            args: std::env::args().collect(),
            config,
            seed,
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        }
    }
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::io(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn write_rows<R: Serialize>(
    path: &Path,
    rows: impl IntoIterator<Item = R>,
) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

#[derive(Serialize)]
struct WeightRow<'a> {
    j: usize,
    weight: f64,
    method: &'a str,
    raw_sum: f64,
}

/// `weights.csv`: `j, weight, method, raw_sum`.
pub fn write_weights(path: &Path, w: &WeightVector) -> Result<(), CliError> {
    write_rows(
        path,
        w.weights.iter().enumerate().map(|(j, &weight)| WeightRow {
            j,
            weight,
            method: w.method.as_str(),
            raw_sum: w.raw_sum,
        }),
    )
}

#[derive(Serialize)]
struct EcdfRow {
    t: f64,
    #[serde(rename = "F_emp")]
    f_emp: f64,
    #[serde(rename = "F_mix")]
    f_mix: f64,
}

/// `ecdf.csv`: `t, F_emp, F_mix`.
pub fn write_ecdf(path: &Path, table: &[EcdfPoint]) -> Result<(), CliError> {
    write_rows(
        path,
        table.iter().map(|p| EcdfRow {
            t: p.t,
            f_emp: p.f_emp,
            f_mix: p.f_mix,
        }),
    )
}

#[derive(Serialize)]
struct SweepRow<'a> {
    suite: &'a str,
    cell: String,
    k: usize,
    m: usize,
    cov: String,
    method: String,
    seed: u64,
    delta: f64,
    d_inf: f64,
    tail_ratio: f64,
    q50_emp: f64,
    q50_mix: f64,
    q95_emp: f64,
    q95_mix: f64,
    n_draws: usize,
    clipped_mass: f64,
}

/// `sweep.csv`, one row per cell; `delta` is the anisotropy `δ(Σ)`.
pub fn write_sweep(path: &Path, suite: &str, results: &[CellResult]) -> Result<(), CliError> {
    write_rows(
        path,
        results.iter().map(|r| SweepRow {
            suite,
            cell: r.cell.name(),
            k: r.cell.k,
            m: r.cell.m,
            cov: r.cell.cov.label(),
            method: r.cell.method.to_string(),
            seed: r.report.seed,
            delta: r.anisotropy,
            d_inf: r.report.d_inf,
            tail_ratio: r.report.tail_ratio,
            q50_emp: r.report.q50_emp,
            q50_mix: r.report.q50_mix,
            q95_emp: r.report.q95_emp,
            q95_mix: r.report.q95_mix,
            n_draws: r.report.n_draws,
            clipped_mass: r.weights.clipped_mass,
        }),
    )
}
