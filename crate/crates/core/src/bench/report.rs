use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{float, ExperimentReport, LabeledArtifacts, TrialRecord};
use crate::error::{Error, Result};
use crate::ilqr::SolveArtifacts;

/// Version of the report layout written by [`write_outputs`].
pub const FORMAT_VERSION: u32 = 1;

const HISTOGRAM_BINS: usize = 30;

/// Fraction of a cell's trials with `E` below a threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRate {
    pub threshold: f64,
    pub rate: f64,
}

/// One log-spaced histogram bin `[lower, upper)` of the error ratio.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

/// Aggregates for one trajectory at one covariance. Means skip diverged
/// trials; `diverged` counts how many were skipped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub traj: String,
    pub cov: f64,
    pub trials: usize,
    pub diverged: usize,
    pub mean_e: Option<f64>,
    pub mean_e_position: Option<f64>,
    pub mean_f: Option<f64>,
    #[serde(with = "float")]
    pub max_e: f64,
    pub success: Vec<ThresholdRate>,
    pub histogram: Vec<HistogramBin>,
}

/// Success rate against covariance for one trajectory and threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuccessCurve {
    pub traj: String,
    pub threshold: f64,
    /// `(covariance, rate)` in ascending covariance order.
    pub points: Vec<(f64, f64)>,
    /// Smallest covariance with any trial at or above the threshold.
    pub first_failure: Option<f64>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    (count > 0).then(|| sum / count as f64)
}

/// Fraction of samples strictly below each threshold; non-finite samples
/// always fail.
pub fn success_rates(samples: &[f64], thresholds: &[f64]) -> Vec<ThresholdRate> {
    thresholds
        .iter()
        .map(|&threshold| {
            let passed = samples.iter().filter(|e| **e < threshold).count();
            let rate = if samples.is_empty() { 0.0 } else { passed as f64 / samples.len() as f64 };
            ThresholdRate { threshold, rate }
        })
        .collect()
}

/// Log-spaced bins over the range of the finite, positive samples. Zero
/// ratios land in the first bin; infinite ones are left out.
pub fn histogram(samples: &[f64]) -> Vec<HistogramBin> {
    let finite: Vec<f64> = samples.iter().copied().filter(|e| e.is_finite() && *e >= 0.0).collect();
    let positive: Vec<f64> = finite.iter().copied().filter(|e| *e > 0.0).collect();
    if positive.is_empty() {
        return Vec::new();
    }
    let lo = positive.iter().copied().fold(f64::INFINITY, f64::min).ln();
    let mut hi = positive.iter().copied().fold(0.0, f64::max).ln();
    if hi - lo < 1e-12 {
        hi = lo + 1e-12;
    }
    let width = (hi - lo) / HISTOGRAM_BINS as f64;
    let mut bins: Vec<HistogramBin> = (0..HISTOGRAM_BINS)
        .map(|k| HistogramBin {
            lower: (lo + width * k as f64).exp(),
            upper: (lo + width * (k + 1) as f64).exp(),
            count: 0,
        })
        .collect();
    for e in finite {
        let k = if e > 0.0 { ((e.ln() - lo) / width).floor() as usize } else { 0 };
        bins[k.min(HISTOGRAM_BINS - 1)].count += 1;
    }
    bins
}

/// Groups trial records by `(trajectory, covariance)` in first-seen order.
pub fn summarize(trials: &[TrialRecord], thresholds: &[f64]) -> Vec<CellSummary> {
    let mut keys: Vec<(String, f64)> = Vec::new();
    for t in trials {
        if !keys.iter().any(|(l, c)| *l == t.traj && *c == t.cov) {
            keys.push((t.traj.clone(), t.cov));
        }
    }
    keys.into_iter()
        .map(|(traj, cov)| {
            let cell: Vec<&TrialRecord> = trials.iter().filter(|t| t.traj == traj && t.cov == cov).collect();
            let ok = || cell.iter().filter(|t| !t.diverged);
            let e: Vec<f64> = cell.iter().map(|t| t.e).collect();
            CellSummary {
                traj,
                cov,
                trials: cell.len(),
                diverged: cell.iter().filter(|t| t.diverged).count(),
                mean_e: mean(ok().map(|t| t.e)),
                mean_e_position: mean(ok().map(|t| t.e_position)),
                mean_f: mean(ok().map(|t| t.f)),
                max_e: e.iter().copied().fold(0.0, f64::max),
                success: success_rates(&e, thresholds),
                histogram: histogram(&e),
            }
        })
        .collect()
}

/// Success rate against covariance per trajectory and threshold.
pub fn success_curves(cells: &[CellSummary], thresholds: &[f64]) -> Vec<SuccessCurve> {
    let mut labels: Vec<&str> = Vec::new();
    for c in cells {
        if !labels.contains(&c.traj.as_str()) {
            labels.push(&c.traj);
        }
    }
    let mut curves = Vec::new();
    for label in labels {
        let mut mine: Vec<&CellSummary> = cells.iter().filter(|c| c.traj == label).collect();
        mine.sort_by(|a, b| a.cov.total_cmp(&b.cov));
        for (k, &threshold) in thresholds.iter().enumerate() {
            let points: Vec<(f64, f64)> = mine
                .iter()
                .map(|c| (c.cov, c.success.get(k).map_or(0.0, |r| r.rate)))
                .collect();
            let first_failure = points.iter().find(|(_, rate)| *rate < 1.0).map(|(cov, _)| *cov);
            curves.push(SuccessCurve {
                traj: label.to_string(),
                threshold,
                points,
                first_failure,
            });
        }
    }
    curves
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Io(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| io_error(path, e))
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))
}

fn trials_csv(trials: &[TrialRecord]) -> String {
    let mut out = String::from("trial_id,traj,cov,E,F,diverged\n");
    for t in trials {
        let _ = writeln!(out, "{},{},{:e},{:e},{:e},{}", t.trial_id, t.traj, t.cov, t.e, t.f, t.diverged);
    }
    out
}

/// Per-knot nominal: time, mode, state and input columns.
pub fn trajectory_csv(artifacts: &SolveArtifacts) -> String {
    let traj = &artifacts.trajectory;
    let n = traj.states.first().map_or(0, |x| x.len());
    let m = traj.inputs.first().map_or(0, |u| u.len());
    let mut out = String::from("step,t,mode");
    for j in 0..n {
        let _ = write!(out, ",x{j}");
    }
    for j in 0..m {
        let _ = write!(out, ",u{j}");
    }
    out.push('\n');
    for (i, x) in traj.states.iter().enumerate() {
        let mode = traj.modes.get(i).or(traj.modes.last()).map_or(0, |m| m.0);
        let _ = write!(out, "{i},{:e},{mode}", traj.times[i]);
        for v in x.iter() {
            let _ = write!(out, ",{v:e}");
        }
        match traj.inputs.get(i) {
            Some(u) => u.iter().for_each(|v| {
                let _ = write!(out, ",{v:e}");
            }),
            None => (0..m).for_each(|_| out.push(',')),
        }
        out.push('\n');
    }
    out
}

/// Writes `report.json`, `trials.csv`, `config.json`, and for every solved
/// trajectory `solve_<label>.csv` plus `artifacts_<label>.json`.
pub fn write_outputs(dir: &Path, report: &ExperimentReport, solved: &[LabeledArtifacts]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    write_file(&dir.join("report.json"), &to_json(report)?)?;
    write_file(&dir.join("config.json"), &to_json(&report.config)?)?;
    write_file(&dir.join("trials.csv"), &trials_csv(&report.trials))?;
    for entry in solved {
        write_file(&dir.join(format!("solve_{}.csv", entry.label)), &trajectory_csv(&entry.artifacts))?;
        write_file(&dir.join(format!("artifacts_{}.json", entry.label)), &to_json(entry)?)?;
    }
    Ok(())
}

/// Loads every `artifacts_*.json` in `dir`, sorted by label.
pub fn read_artifacts(dir: &Path) -> Result<Vec<LabeledArtifacts>> {
    let entries = fs::read_dir(dir).map_err(|e| io_error(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| io_error(dir, e))?.path();
        let name = path.file_name().and_then(|s| s.to_str()).unwrap_or_default();
        if !(name.starts_with("artifacts_") && name.ends_with(".json")) {
            continue;
        }
        let text = fs::read_to_string(&path).map_err(|e| io_error(&path, e))?;
        let parsed: LabeledArtifacts = serde_json::from_str(&text).map_err(|e| io_error(&path, e))?;
        out.push(parsed);
    }
    if out.is_empty() {
        return Err(Error::Io(format!("{}: no artifacts_*.json files", dir.display())));
    }
    out.sort_by(|a, b| a.label.cmp(&b.label));
    Ok(out)
}
