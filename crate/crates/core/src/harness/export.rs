use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ExperimentResult;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    /// Data rows (CSV, header excluded) or 1 for a JSON document.
    pub rows: usize,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub files: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Serialize)]
struct EnvelopeRow<'a> {
    timestamp: &'a str,
    t_r: f64,
    plan_hi: f64,
    plan_lo: f64,
    comfort_min: f64,
    comfort_max: f64,
    benchmark_t_r: f64,
}

#[derive(Serialize)]
struct PowerRow<'a> {
    timestamp: &'a str,
    #[serde(rename = "P_s")]
    p_s: f64,
    #[serde(rename = "P_d")]
    p_d: f64,
    #[serde(rename = "P_f")]
    p_f: f64,
    benchmark_p_f: f64,
}

fn write_csv<T: Serialize>(dir: &Path, name: &str, headers: &[&str], rows: impl IntoIterator<Item = T>) -> Result<ManifestEntry> {
    let path = dir.join(name);
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_path(&path).map_err(|e| Error::csv(&path, e))?;
    wtr.write_record(headers).map_err(|e| Error::csv(&path, e))?;
    let mut n = 0;
    for r in rows {
        wtr.serialize(r).map_err(|e| Error::csv(&path, e))?;
        n += 1;
    }
    wtr.flush().map_err(|e| Error::io(&path, e))?;
    entry(&path, name, n)
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<ManifestEntry> {
    let path = dir.join(name);
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    entry(&path, name, 1)
}

fn entry(path: &Path, name: &str, rows: usize) -> Result<ManifestEntry> {
    let bytes = std::fs::metadata(path).map_err(|e| Error::io(path, e))?.len();
    Ok(ManifestEntry { file: name.to_string(), rows, bytes })
}

/// Writes per-level logs, plot-ready series, a JSON summary and the
/// manifest into `dir` (created if missing). Output depends only on the
/// result, so re-exporting gives the same bytes.
pub fn export_results(result: &ExperimentResult, dir: &Path) -> Result<Manifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    files.push(write_csv(
        dir,
        "level1_schedule.csv",
        &["day", "issued_at", "timestamp", "u", "r_u", "r_d", "R_u", "R_d", "x_hi", "x_lo", "energy_price", "reserve_price", "converged"],
        &result.level1,
    )?);
    files.push(write_csv(
        dir,
        "level2_slots.csv",
        &[
            "timestamp", "cell", "measured_t_r", "est_t_r", "est_t_m", "u_setpoint", "P_s", "R_u", "R_d", "plan_hi", "plan_lo", "mean_p_d", "mean_p_f",
            "applied_flow", "energy_wh", "t_r", "t_m", "comfort_min", "comfort_max", "converged",
        ],
        &result.level2,
    )?);
    files.push(write_csv(dir, "level3_tracking.csv", &["t", "w", "P_d", "P_f", "N_f", "branch"], &result.level3)?);

    let pairs = result.cell_rows("regulation").zip(result.cell_rows("benchmark"));
    files.push(write_csv(
        dir,
        "plot_envelopes.csv",
        &["timestamp", "t_r", "plan_hi", "plan_lo", "comfort_min", "comfort_max", "benchmark_t_r"],
        pairs.clone().map(|(r, b)| EnvelopeRow {
            timestamp: &r.timestamp,
            t_r: r.t_r,
            plan_hi: r.plan_hi,
            plan_lo: r.plan_lo,
            comfort_min: r.comfort_min,
            comfort_max: r.comfort_max,
            benchmark_t_r: b.t_r,
        }),
    )?);
    files.push(write_csv(
        dir,
        "plot_power.csv",
        &["timestamp", "P_s", "P_d", "P_f", "benchmark_p_f"],
        pairs.map(|(r, b)| PowerRow { timestamp: &r.timestamp, p_s: r.p_s, p_d: r.mean_p_d, p_f: r.mean_p_f, benchmark_p_f: b.mean_p_f }),
    )?);
    files.push(write_json(dir, "summary.json", &result.summary)?);

    let manifest = Manifest { files };
    write_json(dir, MANIFEST_FILE, &manifest)?;
    Ok(manifest)
}
