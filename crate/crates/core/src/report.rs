//! Run artifacts and time-to-accuracy comparisons.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::ReportError;
use crate::sim::{ExperimentOutcome, RoundRecord};
use crate::stats::{mean, std_dev};

/// Column order of `rounds.csv`.
pub const ROUNDS_CSV_HEADER: [&str; 10] = [
    "round",
    "wallclock_s",
    "deadline_s",
    "loss_threshold",
    "ltr",
    "ddlr",
    "n_completed",
    "n_timed_out",
    "U_R",
    "test_accuracy",
];

/// One parsed line of `rounds.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRow {
    pub round: usize,
    pub wallclock_s: f64,
    pub deadline_s: f64,
    pub loss_threshold: f64,
    pub ltr: f64,
    pub ddlr: f64,
    pub n_completed: usize,
    pub n_timed_out: usize,
    #[serde(rename = "U_R")]
    pub u_r: f64,
    pub test_accuracy: f64,
}

impl From<&RoundRecord> for RoundRow {
    fn from(r: &RoundRecord) -> Self {
        Self {
            round: r.round,
            wallclock_s: r.wallclock,
            deadline_s: r.deadline,
            loss_threshold: r.loss_threshold,
            ltr: r.ltr,
            ddlr: r.ddlr,
            n_completed: r.completed.len(),
            n_timed_out: r.timed_out.len(),
            u_r: r.u_r,
            test_accuracy: r.test_accuracy,
        }
    }
}

/// Writes the header and one line per record. Floats use Rust's `Display`
/// (shortest round-trip), so `inf` marks an unbounded deadline.
pub fn write_rounds_csv<W: Write>(records: &[RoundRecord], out: W) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(ROUNDS_CSV_HEADER)?;
    for r in records {
        w.write_record([
            r.round.to_string(),
            r.wallclock.to_string(),
            r.deadline.to_string(),
            r.loss_threshold.to_string(),
            r.ltr.to_string(),
            r.ddlr.to_string(),
            r.completed.len().to_string(),
            r.timed_out.len().to_string(),
            r.u_r.to_string(),
            r.test_accuracy.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rounds_csv(path: &Path) -> Result<Vec<RoundRow>, ReportError> {
    let csv_err = |source| ReportError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().collect::<Result<Vec<RoundRow>, _>>().map_err(csv_err)
}

/// First wall-clock time at which accuracy reaches `target`.
pub fn time_to_accuracy(rows: &[RoundRow], target: f64) -> Option<f64> {
    rows.iter().find(|r| r.test_accuracy >= target).map(|r| r.wallclock_s)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetTime {
    pub target: f64,
    /// `None` when the target was never reached.
    pub wallclock_s: Option<f64>,
}

/// Contents of `summary.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub label: String,
    pub method: String,
    pub deadline_policy: String,
    pub seed: u64,
    pub rounds: usize,
    pub final_accuracy: f64,
    pub wallclock_s: f64,
    pub time_to_accuracy: Vec<TargetTime>,
}

impl RunSummary {
    pub fn new(cfg: &ExperimentConfig, outcome: &ExperimentOutcome) -> Self {
        let rows: Vec<RoundRow> = outcome.records.iter().map(RoundRow::from).collect();
        let last = rows.last();
        Self {
            label: cfg.run_label(),
            method: cfg.method.as_str().to_string(),
            deadline_policy: cfg.deadline_policy.as_str().to_string(),
            seed: cfg.seed,
            rounds: rows.len(),
            final_accuracy: last.map_or(f64::NAN, |r| r.test_accuracy),
            wallclock_s: last.map_or(0.0, |r| r.wallclock_s),
            time_to_accuracy: cfg
                .targets
                .iter()
                .map(|&t| TargetTime {
                    target: t,
                    wallclock_s: time_to_accuracy(&rows, t),
                })
                .collect(),
        }
    }
}

/// A finished run read back from disk.
#[derive(Clone, Debug, PartialEq)]
pub struct RunData {
    pub dir: PathBuf,
    pub summary: RunSummary,
    pub rows: Vec<RoundRow>,
}

/// Every directory under `root` (itself included) holding both
/// `summary.json` and `rounds.csv`, in path order.
pub fn load_runs(root: &Path) -> Result<Vec<RunData>, ReportError> {
    let mut dirs = Vec::new();
    collect_run_dirs(root, &mut dirs)?;
    dirs.sort();
    let mut runs = Vec::with_capacity(dirs.len());
    for dir in dirs {
        let path = dir.join("summary.json");
        let text = fs::read_to_string(&path).map_err(|source| ReportError::Io {
            path: path.clone(),
            source,
        })?;
        let summary = serde_json::from_str(&text).map_err(|source| ReportError::Json { path, source })?;
        let rows = read_rounds_csv(&dir.join("rounds.csv"))?;
        runs.push(RunData { dir, summary, rows });
    }
    if runs.is_empty() {
        return Err(ReportError::NoRuns(root.to_path_buf()));
    }
    Ok(runs)
}

fn collect_run_dirs(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), ReportError> {
    let io = |source| ReportError::Io {
        path: dir.to_path_buf(),
        source,
    };
    if dir.join("summary.json").is_file() && dir.join("rounds.csv").is_file() {
        out.push(dir.to_path_buf());
    }
    for entry in fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        if path.is_dir() {
            collect_run_dirs(&path, out)?;
        }
    }
    Ok(())
}

/// Speedup of a method over a baseline at `target`.
///
/// Both times are wall clock to first reach the target. A run that never
/// gets there contributes its total wall clock instead, which yields a
/// ratio below one for a method that ran longer than the baseline needed.
pub fn speedup(baseline: &[RoundRow], method: &[RoundRow], target: f64) -> f64 {
    let total = |rows: &[RoundRow]| rows.last().map_or(f64::NAN, |r| r.wallclock_s);
    let b = time_to_accuracy(baseline, target).unwrap_or_else(|| total(baseline));
    let m = time_to_accuracy(method, target).unwrap_or_else(|| total(method));
    b / m
}

/// Per-label results, mean and population std across seeds.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub label: String,
    pub seeds: usize,
    pub target_mean: f64,
    pub speedup_mean: f64,
    pub speedup_std: f64,
    pub final_accuracy_mean: f64,
    pub final_accuracy_std: f64,
    /// Seeds on which the target was reached.
    pub reached: usize,
}

/// Compares every label against `baseline_label`, pairing runs by seed.
///
/// Without an explicit `target`, each seed uses the baseline run's final
/// accuracy. Seeds with no baseline run are skipped.
pub fn compare(runs: &[RunData], baseline_label: &str, target: Option<f64>) -> Result<Vec<ComparisonRow>, ReportError> {
    let baselines: BTreeMap<u64, &RunData> = runs
        .iter()
        .filter(|r| r.summary.label == baseline_label)
        .map(|r| (r.summary.seed, r))
        .collect();
    if baselines.is_empty() {
        return Err(ReportError::MissingBaseline(baseline_label.to_string()));
    }
    let mut by_label: BTreeMap<&str, Vec<&RunData>> = BTreeMap::new();
    for r in runs {
        by_label.entry(r.summary.label.as_str()).or_default().push(r);
    }
    let mut rows = Vec::new();
    for (label, group) in by_label {
        let mut speedups = Vec::new();
        let mut finals = Vec::new();
        let mut targets = Vec::new();
        let mut reached = 0;
        for run in group {
            let Some(base) = baselines.get(&run.summary.seed) else {
                continue;
            };
            let t = target.unwrap_or(base.summary.final_accuracy);
            if time_to_accuracy(&run.rows, t).is_some() {
                reached += 1;
            }
            speedups.push(speedup(&base.rows, &run.rows, t));
            finals.push(run.summary.final_accuracy);
            targets.push(t);
        }
        if speedups.is_empty() {
            continue;
        }
        rows.push(ComparisonRow {
            label: label.to_string(),
            seeds: speedups.len(),
            target_mean: mean(&targets),
            speedup_mean: mean(&speedups),
            speedup_std: std_dev(&speedups),
            final_accuracy_mean: mean(&finals),
            final_accuracy_std: std_dev(&finals),
            reached,
        });
    }
    Ok(rows)
}

pub fn write_comparison_csv<W: Write>(rows: &[ComparisonRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Fixed-width text rendering of a comparison.
pub fn format_table(rows: &[ComparisonRow]) -> String {
    let width = rows.iter().map(|r| r.label.len()).max().unwrap_or(0).max(5);
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<width$}  {:>5}  {:>7}  {:>15}  {:>15}  {:>7}",
        "label", "seeds", "target", "speedup", "final_acc", "reached"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<width$}  {:>5}  {:>7.4}  {:>15}  {:>15}  {:>4}/{:<2}",
            r.label,
            r.seeds,
            r.target_mean,
            format!("{:.2} ± {:.2}", r.speedup_mean, r.speedup_std),
            format!("{:.4} ± {:.4}", r.final_accuracy_mean, r.final_accuracy_std),
            r.reached,
            r.seeds
        );
    }
    s
}
