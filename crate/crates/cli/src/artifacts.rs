//! On-disk formats of trained models and per-window evaluation records.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use reachgrasp::neural::{Checkpoint, EpochStats};
use reachgrasp::numfmt::fmt_num;
use reachgrasp::posture::PostureBaseline;
use reachgrasp::reach::MjtSettings;
use reachgrasp::report::{abs_time_error, distance_error, time_error, Metric};
use reachgrasp::Vec3;
use serde::{Deserialize, Serialize};

use crate::config::{PostureModelName, ReachModelName};
use crate::staging::write_file;

pub const MODEL_FILE: &str = "model.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const EVAL_INDEX: &str = "index.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum ModelArtifact {
    Reach {
        model: ReachModelName,
        /// Onset and fitting settings of the MJT predictor (also the side
        /// inputs of LSTM-MJT).
        mjt: MjtSettings,
        network: Option<Checkpoint>,
    },
    Posture {
        model: PostureModelName,
        network: Option<Checkpoint>,
        baseline: Option<PostureBaseline>,
    },
}

impl ModelArtifact {
    pub fn family(&self) -> &'static str {
        match self {
            ModelArtifact::Reach { .. } => "reach",
            ModelArtifact::Posture { .. } => "posture",
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            ModelArtifact::Reach { model, .. } => model.tag(),
            ModelArtifact::Posture { model, .. } => model.tag(),
        }
    }

    /// Directory name inside a `models/` folder.
    pub fn dir_name(&self) -> String {
        format!("{}_{}", self.family(), self.tag())
    }

    pub fn save(&self, dir: &Path, history: &[EpochStats]) -> Result<()> {
        write_file(&dir.join(MODEL_FILE), serde_json::to_string(self)? + "\n")?;
        write_history(&dir.join(HISTORY_FILE), history)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MODEL_FILE);
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

fn write_history(path: &Path, history: &[EpochStats]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(["epoch", "loss"])?;
    for h in history {
        w.write_record([h.epoch.to_string(), fmt_num(h.loss)])?;
    }
    write_file(path, w.into_inner()?)
}

/// One reach prediction at one window end.
#[derive(Debug, Clone, PartialEq)]
pub struct ReachRecord {
    pub trial_id: String,
    pub offset: f64,
    pub pred: Vec3,
    pub pred_time: f64,
    pub truth: Vec3,
    pub true_time: f64,
    /// Whether the window's MJT fit succeeded (always true for the LSTM).
    pub mjt_valid: bool,
}

impl ReachRecord {
    pub fn metric(&self, m: Metric) -> f64 {
        match m {
            Metric::DistanceM => distance_error(self.pred, self.truth),
            Metric::TimeErrorS => time_error(self.pred_time, self.true_time),
            Metric::AbsTimeErrorS => abs_time_error(self.pred_time, self.true_time),
            Metric::Mse | Metric::EuclidM => f64::NAN,
        }
    }
}

/// One posture prediction at one window end.
#[derive(Debug, Clone, PartialEq)]
pub struct PostureRecord {
    pub trial_id: String,
    pub offset: f64,
    pub mse: f64,
    pub euclid: f64,
    /// Mean distance between successive per-step predictions; NaN for the
    /// fixed-length baselines, which predict once.
    pub step_displacement: f64,
}

pub const REACH_METRICS: [Metric; 3] = [Metric::DistanceM, Metric::TimeErrorS, Metric::AbsTimeErrorS];
pub const POSTURE_METRICS: [Metric; 2] = [Metric::Mse, Metric::EuclidM];

const REACH_HEADER: [&str; 14] = [
    "trial_id",
    "window_end_offset",
    "pred_x",
    "pred_y",
    "pred_z",
    "pred_time_s",
    "true_x",
    "true_y",
    "true_z",
    "true_time_s",
    "distance_m",
    "time_error_s",
    "abs_time_error_s",
    "mjt_valid",
];

const POSTURE_HEADER: [&str; 5] = ["trial_id", "window_end_offset", "mse", "euclid_m", "step_displacement"];

fn writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new())
}

pub fn reach_csv(records: &[ReachRecord]) -> Result<Vec<u8>> {
    let mut w = writer();
    w.write_record(REACH_HEADER)?;
    for r in records {
        let mut row = vec![r.trial_id.clone(), fmt_num(r.offset)];
        row.extend([r.pred.x, r.pred.y, r.pred.z, r.pred_time, r.truth.x, r.truth.y, r.truth.z, r.true_time].map(fmt_num));
        row.extend(REACH_METRICS.map(|m| fmt_num(r.metric(m))));
        row.push(r.mjt_valid.to_string());
        w.write_record(row)?;
    }
    Ok(w.into_inner()?)
}

pub fn posture_csv(records: &[PostureRecord]) -> Result<Vec<u8>> {
    let mut w = writer();
    w.write_record(POSTURE_HEADER)?;
    for r in records {
        w.write_record([r.trial_id.clone(), fmt_num(r.offset), fmt_num(r.mse), fmt_num(r.euclid), fmt_num(r.step_displacement)])?;
    }
    Ok(w.into_inner()?)
}

/// `(offset, value)` pairs of the named columns of an evaluation CSV.
pub fn read_metric_columns(path: &Path, columns: &[&str]) -> Result<Vec<Vec<(f64, f64)>>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let header = r.headers()?.clone();
    let find = |name: &str| header.iter().position(|h| h == name).with_context(|| format!("{}: no column {name}", path.display()));
    let off = find("window_end_offset")?;
    let idx: Vec<usize> = columns.iter().map(|c| find(c)).collect::<Result<_>>()?;
    let mut out = vec![Vec::new(); columns.len()];
    for (line, rec) in r.records().enumerate() {
        let rec = rec.with_context(|| format!("{}: row {}", path.display(), line + 2))?;
        let num = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.parse().ok())
                .with_context(|| format!("{}: row {}: bad number in column {}", path.display(), line + 2, &header[i]))
        };
        let o = num(off)?;
        for (k, &i) in idx.iter().enumerate() {
            out[k].push((o, num(i)?));
        }
    }
    Ok(out)
}

/// Entry of an evaluation directory's index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalEntry {
    pub family: String,
    pub model: String,
    pub file: String,
}

pub fn eval_file_name(family: &str, tag: &str) -> String {
    format!("{family}_{tag}.csv")
}

pub fn read_eval_index(dir: &Path) -> Result<Vec<EvalEntry>> {
    let path = dir.join(EVAL_INDEX);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let entries: Vec<EvalEntry> = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if entries.is_empty() {
        bail!("{}: no evaluated models", path.display());
    }
    Ok(entries)
}
