//! The report stage: curves, charts and tables built from evaluation and
//! classification directories.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use reachgrasp::numfmt::fmt_num;
use reachgrasp::report::{
    curves_by_model, read_accuracy_csv, render_curve_svg, write_curves_csv, AccuracyRow, CurveSpec, EvalCurve, Metric,
    SvgStyle,
};
use thiserror::Error;

use crate::artifacts::{read_eval_index, read_metric_columns, POSTURE_METRICS, REACH_METRICS};
use crate::staging::write_file;

#[derive(Debug, Error)]
pub enum ReportStageError {
    #[error("missing artifact for model {model}: {path} not found")]
    MissingArtifact { model: String, path: PathBuf },
    #[error("missing artifact for model {model}: no evaluation directory lists it")]
    UnlistedModel { model: String },
}

/// Everything the summary and the checks need from a built report.
#[derive(Debug, Default)]
pub struct ReportData {
    pub curves: Vec<EvalCurve>,
    /// Records per `(metric, model)` whose offset lies in the curve span.
    pub in_span: BTreeMap<(String, String), usize>,
    /// Mean final-step MSE and mean step displacement per posture model.
    pub posture_means: BTreeMap<String, (f64, f64)>,
    pub accuracy: Vec<AccuracyRow>,
    pub sweep: Vec<AccuracyRow>,
}

impl ReportData {
    pub fn curve(&self, metric: Metric, model: &str) -> Option<&EvalCurve> {
        self.curves.iter().find(|c| c.metric == metric && c.model == model)
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

fn title(metric: Metric) -> &'static str {
    match metric {
        Metric::DistanceM => "Grasp position error",
        Metric::TimeErrorS => "Time-to-grasp error",
        Metric::AbsTimeErrorS => "Absolute time-to-grasp error",
        Metric::Mse => "Grasp posture MSE",
        Metric::EuclidM => "Fingertip distance error",
    }
}

/// Builds curves from the evaluation directories (and tables from the
/// classification directory) into `out`. `expected` names models as
/// `family/TAG`; each must be listed and present.
pub fn build_report(eval_dirs: &[PathBuf], classify_dir: Option<&Path>, expected: &[String], spec: &CurveSpec, out: &Path) -> Result<ReportData> {
    let mut listed = Vec::new();
    for dir in eval_dirs {
        for e in read_eval_index(dir)? {
            listed.push((format!("{}/{}", e.family, e.model), e, dir.clone()));
        }
    }
    for want in expected {
        if !listed.iter().any(|(name, _, _)| name == want) {
            return Err(ReportStageError::UnlistedModel { model: want.clone() }.into());
        }
    }
    let mut records: BTreeMap<Metric, Vec<(String, f64, f64)>> = BTreeMap::new();
    let mut data = ReportData::default();
    for (name, entry, dir) in &listed {
        let path = dir.join(&entry.file);
        if !path.is_file() {
            return Err(ReportStageError::MissingArtifact { model: name.clone(), path }.into());
        }
        let metrics: &[Metric] = if entry.family == "reach" { &REACH_METRICS } else { &POSTURE_METRICS };
        let columns: Vec<&str> = metrics.iter().map(|m| m.as_str()).collect();
        let cols = read_metric_columns(&path, &columns)?;
        for (m, col) in metrics.iter().zip(&cols) {
            let n = col.iter().filter(|(o, _)| spec.bucket_of(*o).is_some()).count();
            data.in_span.insert((m.as_str().to_string(), entry.model.clone()), n);
            records.entry(*m).or_default().extend(col.iter().map(|&(o, v)| (entry.model.clone(), o, v)));
        }
        if entry.family == "posture" {
            let extra = read_metric_columns(&path, &["mse", "step_displacement"])?;
            data.posture_means.insert(entry.model.clone(), (mean(extra[0].iter().map(|p| p.1)), mean(extra[1].iter().map(|p| p.1))));
        }
    }
    for (metric, recs) in &records {
        let curves = curves_by_model(*metric, recs, spec)?;
        let svg = render_curve_svg(&curves, &SvgStyle::for_metric(*metric, title(*metric)));
        write_file(&out.join(format!("{}.svg", metric.as_str())), svg)?;
        data.curves.extend(curves);
    }
    let mut buf = Vec::new();
    write_curves_csv(&data.curves, &mut buf)?;
    write_file(&out.join("curves.csv"), buf)?;

    if let Some(dir) = classify_dir {
        let mut names: Vec<String> = fs::read_dir(dir)
            .with_context(|| format!("reading {}", dir.display()))?
            .filter_map(|e| e.ok().map(|e| e.file_name().to_string_lossy().into_owned()))
            .filter(|n| n.ends_with(".csv"))
            .collect();
        names.sort();
        if !names.iter().any(|n| n == "accuracy.csv") {
            return Err(ReportStageError::MissingArtifact { model: "classification".into(), path: dir.join("accuracy.csv") }.into());
        }
        for n in &names {
            let bytes = fs::read(dir.join(n)).with_context(|| format!("reading {}", dir.join(n).display()))?;
            match n.as_str() {
                "accuracy.csv" => data.accuracy = read_accuracy_csv(bytes.as_slice())?,
                "window_sweep.csv" => data.sweep = read_accuracy_csv(bytes.as_slice())?,
                _ => {}
            }
            write_file(&out.join(n), bytes)?;
        }
    }
    Ok(data)
}

/// One asserted property and its outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckLine {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl CheckLine {
    pub fn new(name: &str, pass: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), pass, detail: detail.into() }
    }

    pub fn line(&self) -> String {
        format!("{} {}: {}", if self.pass { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

/// Provenance lines at the top of the summary.
pub struct SummaryHeader {
    pub config_hash: String,
    pub seed: u64,
    pub stage_seeds: Vec<(&'static str, u64)>,
    pub upstream: Vec<String>,
}

fn cell(v: f64) -> String {
    if v != 0.0 && v.abs() < 0.01 {
        format!("{v:.2e}")
    } else {
        format!("{v:.4}")
    }
}

pub fn summary_text(header: &SummaryHeader, data: &ReportData, checks: &[CheckLine]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "config_hash: {}", header.config_hash);
    let _ = writeln!(s, "seed: {}", header.seed);
    for (name, seed) in &header.stage_seeds {
        let _ = writeln!(s, "seed.{name}: {seed}");
    }
    for u in &header.upstream {
        let _ = writeln!(s, "input: {u}");
    }
    let mut metrics: Vec<Metric> = data.curves.iter().map(|c| c.metric).collect();
    metrics.dedup();
    for metric in metrics {
        let _ = writeln!(s, "\n[{}] bucket means by window end (s before grasp)", metric.as_str());
        let mut printed_header = false;
        for c in data.curves.iter().filter(|c| c.metric == metric) {
            if !printed_header {
                let cols: Vec<String> = c.buckets.iter().map(|b| format!("{:>10}", fmt_num(b.t_lo))).collect();
                let _ = writeln!(s, "{:<14}{}", "model", cols.join(""));
                printed_header = true;
            }
            let cols: Vec<String> = c.buckets.iter().map(|b| format!("{:>10}", cell(b.mean))).collect();
            let _ = writeln!(s, "{:<14}{}", c.model, cols.join(""));
        }
    }
    if !data.posture_means.is_empty() {
        let _ = writeln!(s, "\n[posture] mean over evaluation windows");
        let _ = writeln!(s, "{:<14}{:>14}{:>20}", "model", "mse", "step_displacement");
        for (m, (mse, disp)) in &data.posture_means {
            let _ = writeln!(s, "{:<14}{:>14}{:>20}", m, fmt_num(*mse), fmt_num(*disp));
        }
    }
    for (title, rows) in [("classification accuracy", &data.accuracy), ("accuracy by frame window", &data.sweep)] {
        if rows.is_empty() {
            continue;
        }
        let _ = writeln!(s, "\n[{title}]");
        let _ = writeln!(s, "{:<16}{:>8}{:>9}{:>9}{:>9}{:>9}", "name", "n", "object", "size", "task", "overall");
        for r in rows {
            let f = |v: f64| format!("{v:.3}");
            let _ = writeln!(s, "{:<16}{:>8}{:>9}{:>9}{:>9}{:>9}", r.name, r.n, f(r.object), f(r.size), f(r.task), f(r.overall));
        }
    }
    if !checks.is_empty() {
        let _ = writeln!(s, "\n[checks]");
        for c in checks {
            let _ = writeln!(s, "{}", c.line());
        }
    }
    s
}
