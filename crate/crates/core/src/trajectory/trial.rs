use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Vec3;
use crate::numfmt::round_sig;

/// Allowed deviation of `index_local_z` from unit length.
pub const UNIT_TOLERANCE: f64 = 1e-6;

/// Tracked points of one hand at one instant (meters, world frame).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HandFrame {
    pub palm_center: Vec3,
    pub tip_thumb: Vec3,
    pub tip_index: Vec3,
    pub tip_middle: Vec3,
    pub tip_ring: Vec3,
    pub tip_pinky: Vec3,
    pub prox_thumb: Vec3,
    pub prox_index: Vec3,
    /// Local z axis of the index finger (unit length).
    pub index_local_z: Vec3,
}

impl HandFrame {
    /// Fingertips in thumb, index, middle, ring, pinky order.
    pub fn tips(&self) -> [Vec3; 5] {
        [self.tip_thumb, self.tip_index, self.tip_middle, self.tip_ring, self.tip_pinky]
    }

    /// Fingertip positions relative to the palm center, thumb first.
    pub fn tips_from_palm(&self) -> [Vec3; 5] {
        self.tips().map(|t| t - self.palm_center)
    }

    /// Applies `f` to every position (not to the `index_local_z` direction).
    pub fn map_points(&self, f: impl Fn(Vec3) -> Vec3) -> HandFrame {
        HandFrame {
            palm_center: f(self.palm_center),
            tip_thumb: f(self.tip_thumb),
            tip_index: f(self.tip_index),
            tip_middle: f(self.tip_middle),
            tip_ring: f(self.tip_ring),
            tip_pinky: f(self.tip_pinky),
            prox_thumb: f(self.prox_thumb),
            prox_index: f(self.prox_index),
            index_local_z: self.index_local_z,
        }
    }

    pub fn translated(&self, by: Vec3) -> HandFrame {
        self.map_points(|p| p + by)
    }

    fn named_points(&self) -> [(&'static str, Vec3); 9] {
        [
            ("palm_center", self.palm_center),
            ("tip_thumb", self.tip_thumb),
            ("tip_index", self.tip_index),
            ("tip_middle", self.tip_middle),
            ("tip_ring", self.tip_ring),
            ("tip_pinky", self.tip_pinky),
            ("prox_thumb", self.prox_thumb),
            ("prox_index", self.prox_index),
            ("index_local_z", self.index_local_z),
        ]
    }

    fn quantized(&self) -> HandFrame {
        let q = |v: Vec3| v.map(round_sig);
        HandFrame { index_local_z: q(self.index_local_z), ..self.map_points(q) }
    }
}

/// One tracking sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Frame {
    /// Seconds since trial start.
    pub t: f64,
    pub object_center: Vec3,
    pub right: HandFrame,
    pub left: Option<HandFrame>,
}

impl Frame {
    pub fn translated(&self, by: Vec3) -> Frame {
        Frame {
            t: self.t,
            object_center: self.object_center + by,
            right: self.right.translated(by),
            left: self.left.map(|h| h.translated(by)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SizeLabel {
    Small,
    Medium,
    Large,
}

impl SizeLabel {
    pub const ALL: [SizeLabel; 3] = [SizeLabel::Small, SizeLabel::Medium, SizeLabel::Large];

    pub fn as_str(self) -> &'static str {
        match self {
            SizeLabel::Small => "Small",
            SizeLabel::Medium => "Medium",
            SizeLabel::Large => "Large",
        }
    }
}

impl fmt::Display for SizeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SizeLabel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        SizeLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| format!("unknown size label {s:?}"))
    }
}

/// Labels and the prediction anchor of a trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialMeta {
    pub user_id: String,
    pub task: String,
    pub object: String,
    pub size: SizeLabel,
    /// Time of contact in seconds since trial start.
    pub grasp_time: f64,
    pub trial_id: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationError {
    #[error("trial has {0} frames, at least 2 are required")]
    TooFewFrames(usize),
    #[error("frame {frame}: field {field} is not finite")]
    NonFinite { frame: usize, field: String },
    #[error("frame {frame}: t = {t} is negative")]
    NegativeTime { frame: usize, t: f64 },
    #[error("frame {frame}: t = {t} does not increase over the previous frame ({prev})")]
    NonIncreasing { frame: usize, t: f64, prev: f64 },
    #[error("frame {frame}: {field} has length {norm}, expected 1")]
    NotUnit { frame: usize, field: String, norm: f64 },
    #[error("grasp_time {grasp_time} outside ({first}, {last}]")]
    GraspTimeOutOfRange { grasp_time: f64, first: f64, last: f64 },
    #[error("meta.{0} is empty")]
    EmptyLabel(&'static str),
    #[error("duplicate trial_id {0:?}")]
    DuplicateTrialId(String),
}

/// A validated reach-to-grasp episode. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    meta: TrialMeta,
    frames: Vec<Frame>,
}

impl Trial {
    pub fn new(meta: TrialMeta, frames: Vec<Frame>) -> Result<Self, ValidationError> {
        validate(&meta, &frames)?;
        Ok(Self { meta, frames })
    }

    pub fn meta(&self) -> &TrialMeta {
        &self.meta
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn id(&self) -> &str {
        &self.meta.trial_id
    }

    pub fn grasp_time(&self) -> f64 {
        self.meta.grasp_time
    }

    /// Index of the last frame with `t <= grasp_time`.
    pub fn grasp_frame(&self) -> usize {
        self.frames.partition_point(|f| f.t <= self.meta.grasp_time) - 1
    }

    /// Right palm position at `t`, linearly interpolated and clamped to the
    /// recorded range.
    pub fn palm_at(&self, t: f64) -> Vec3 {
        self.interpolate(t, |f| f.right.palm_center)
    }

    /// Linear interpolation of an arbitrary per-frame quantity.
    pub fn interpolate<T>(&self, t: f64, get: impl Fn(&Frame) -> T) -> T
    where
        T: std::ops::Add<Output = T> + std::ops::Sub<Output = T> + std::ops::Mul<f64, Output = T> + Copy,
    {
        let f = &self.frames;
        if t <= f[0].t {
            return get(&f[0]);
        }
        let i = f.partition_point(|fr| fr.t <= t);
        if i >= f.len() {
            return get(&f[f.len() - 1]);
        }
        let (a, b) = (&f[i - 1], &f[i]);
        if a.t == t {
            return get(a);
        }
        let s = (t - a.t) / (b.t - a.t);
        get(a) + (get(b) - get(a)) * s
    }

    /// Every position shifted by `by`; timestamps and labels unchanged.
    pub fn translated(&self, by: Vec3) -> Trial {
        Trial {
            meta: self.meta.clone(),
            frames: self.frames.iter().map(|f| f.translated(by)).collect(),
        }
    }

    /// The trial as it reads back from disk: every number rounded to the
    /// file format's significant digits.
    pub fn quantized(&self) -> Trial {
        let frames = self
            .frames
            .iter()
            .map(|f| Frame {
                t: round_sig(f.t),
                object_center: f.object_center.map(round_sig),
                right: f.right.quantized(),
                left: f.left.map(|h| h.quantized()),
            })
            .collect();
        let mut meta = self.meta.clone();
        meta.grasp_time = round_sig(meta.grasp_time);
        Trial { meta, frames }
    }

    pub fn with_meta(&self, meta: TrialMeta) -> Result<Trial, ValidationError> {
        Trial::new(meta, self.frames.clone())
    }
}

fn validate(meta: &TrialMeta, frames: &[Frame]) -> Result<(), ValidationError> {
    for (name, value) in [
        ("user_id", &meta.user_id),
        ("task", &meta.task),
        ("object", &meta.object),
        ("trial_id", &meta.trial_id),
    ] {
        if value.trim().is_empty() {
            return Err(ValidationError::EmptyLabel(name));
        }
    }
    if frames.len() < 2 {
        return Err(ValidationError::TooFewFrames(frames.len()));
    }
    for (i, f) in frames.iter().enumerate() {
        if !f.t.is_finite() {
            return Err(ValidationError::NonFinite { frame: i, field: "t".into() });
        }
        if f.t < 0.0 {
            return Err(ValidationError::NegativeTime { frame: i, t: f.t });
        }
        if i > 0 && f.t <= frames[i - 1].t {
            return Err(ValidationError::NonIncreasing { frame: i, t: f.t, prev: frames[i - 1].t });
        }
        if !f.object_center.is_finite() {
            return Err(ValidationError::NonFinite { frame: i, field: "object_center".into() });
        }
        for (side, hand) in [("right", Some(&f.right)), ("left", f.left.as_ref())] {
            let Some(hand) = hand else { continue };
            for (name, p) in hand.named_points() {
                if !p.is_finite() {
                    return Err(ValidationError::NonFinite { frame: i, field: format!("{side}.{name}") });
                }
            }
            let norm = hand.index_local_z.norm();
            if (norm - 1.0).abs() > UNIT_TOLERANCE {
                return Err(ValidationError::NotUnit { frame: i, field: format!("{side}.index_local_z"), norm });
            }
        }
    }
    let (first, last) = (frames[0].t, frames[frames.len() - 1].t);
    if !(meta.grasp_time > first && meta.grasp_time <= last) {
        return Err(ValidationError::GraspTimeOutOfRange { grasp_time: meta.grasp_time, first, last });
    }
    Ok(())
}

/// A collection of trials with unique ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    trials: Vec<Trial>,
    provenance: String,
}

impl Dataset {
    pub fn new(trials: Vec<Trial>, provenance: impl Into<String>) -> Result<Self, ValidationError> {
        let mut seen = BTreeSet::new();
        for t in &trials {
            if !seen.insert(t.id()) {
                return Err(ValidationError::DuplicateTrialId(t.id().to_string()));
            }
        }
        Ok(Self { trials, provenance: provenance.into() })
    }

    pub fn trials(&self) -> &[Trial] {
        &self.trials
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    /// Distinct user ids in sorted order.
    pub fn users(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.trials.iter().map(|t| t.meta().user_id.as_str()).collect();
        set.into_iter().map(String::from).collect()
    }

    /// The trials whose ids satisfy `keep`, in original order.
    pub fn subset(&self, keep: impl Fn(&Trial) -> bool) -> Dataset {
        Dataset {
            trials: self.trials.iter().filter(|t| keep(t)).cloned().collect(),
            provenance: self.provenance.clone(),
        }
    }
}
