//! The trial file format: one canonical JSON document per trial.
//!
//! Numbers are written as plain decimals with at most nine significant digits
//! and one frame per line, so a canonically formatted file survives
//! `load -> write` byte-for-byte.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Deserialize;
use thiserror::Error;

use super::{Dataset, Frame, HandFrame, Trial, TrialMeta, ValidationError, Vec3};
use crate::numfmt::fmt_num;

/// File-name suffix of trial documents inside a dataset directory.
pub const TRIAL_SUFFIX: &str = ".trial.json";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: malformed trial document: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {source}")]
    Validation { path: PathBuf, source: ValidationError },
    #[error("{0}: no *{TRIAL_SUFFIX} files")]
    EmptyDirectory(PathBuf),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TrialDoc {
    meta: TrialMeta,
    frames: Vec<Frame>,
}

/// Parses a trial document from a string. `origin` only labels errors.
pub fn parse_trial(text: &str, origin: &Path) -> Result<Trial, DataError> {
    let doc: TrialDoc =
        serde_json::from_str(text).map_err(|source| DataError::Parse { path: origin.to_path_buf(), source })?;
    Trial::new(doc.meta, doc.frames).map_err(|source| DataError::Validation { path: origin.to_path_buf(), source })
}

pub fn load_trial(path: impl AsRef<Path>) -> Result<Trial, DataError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| DataError::Io { path: path.to_path_buf(), source })?;
    parse_trial(&text, path)
}

fn push_vec(out: &mut String, v: Vec3) {
    let _ = write!(out, "[{},{},{}]", fmt_num(v.x), fmt_num(v.y), fmt_num(v.z));
}

fn push_hand(out: &mut String, h: &HandFrame) {
    let fields = [
        ("palm_center", h.palm_center),
        ("tip_thumb", h.tip_thumb),
        ("tip_index", h.tip_index),
        ("tip_middle", h.tip_middle),
        ("tip_ring", h.tip_ring),
        ("tip_pinky", h.tip_pinky),
        ("prox_thumb", h.prox_thumb),
        ("prox_index", h.prox_index),
        ("index_local_z", h.index_local_z),
    ];
    out.push('{');
    for (i, (name, v)) in fields.into_iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        let _ = write!(out, "\"{name}\":");
        push_vec(out, v);
    }
    out.push('}');
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("strings always serialize")
}

/// Renders the canonical text of a trial document.
pub fn trial_to_string(trial: &Trial) -> String {
    let m = trial.meta();
    let mut out = String::with_capacity(64 + trial.frames().len() * 420);
    let _ = writeln!(
        out,
        "{{\"meta\":{{\"user_id\":{},\"task\":{},\"object\":{},\"size\":{},\"grasp_time\":{},\"trial_id\":{}}},\"frames\":[",
        json_str(&m.user_id),
        json_str(&m.task),
        json_str(&m.object),
        json_str(m.size.as_str()),
        fmt_num(m.grasp_time),
        json_str(&m.trial_id),
    );
    for (i, f) in trial.frames().iter().enumerate() {
        let _ = write!(out, "{{\"t\":{},\"object_center\":", fmt_num(f.t));
        push_vec(&mut out, f.object_center);
        out.push_str(",\"right\":");
        push_hand(&mut out, &f.right);
        out.push_str(",\"left\":");
        match &f.left {
            Some(h) => push_hand(&mut out, h),
            None => out.push_str("null"),
        }
        out.push('}');
        if i + 1 < trial.frames().len() {
            out.push(',');
        }
        out.push('\n');
    }
    out.push_str("]}\n");
    out
}

pub fn write_trial(trial: &Trial, path: impl AsRef<Path>) -> Result<(), DataError> {
    let path = path.as_ref();
    fs::write(path, trial_to_string(trial)).map_err(|source| DataError::Io { path: path.to_path_buf(), source })
}

/// Canonical file name of a trial inside a dataset directory.
pub fn trial_file_name(trial: &Trial) -> String {
    format!("{}{TRIAL_SUFFIX}", trial.id())
}

/// Loads every `*.trial.json` in `dir`, in path-sorted order.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset, DataError> {
    let dir = dir.as_ref();
    let entries = fs::read_dir(dir).map_err(|source| DataError::Io { path: dir.to_path_buf(), source })?;
    let mut paths = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|source| DataError::Io { path: dir.to_path_buf(), source })?;
        let path = entry.path();
        if path.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with(TRIAL_SUFFIX)) {
            paths.push(path);
        }
    }
    if paths.is_empty() {
        return Err(DataError::EmptyDirectory(dir.to_path_buf()));
    }
    paths.sort();
    let trials = paths.par_iter().map(load_trial).collect::<Result<Vec<_>, _>>()?;
    Dataset::new(trials, dir.display().to_string())
        .map_err(|source| DataError::Validation { path: dir.to_path_buf(), source })
}

/// Writes every trial of `ds` into `dir` (which must exist).
pub fn write_dataset(ds: &Dataset, dir: impl AsRef<Path>) -> Result<(), DataError> {
    let dir = dir.as_ref();
    ds.trials().iter().try_for_each(|t| write_trial(t, dir.join(trial_file_name(t))))
}
