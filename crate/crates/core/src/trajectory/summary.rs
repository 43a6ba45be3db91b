use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Dataset, Trial};

/// Width of a frame-count histogram bin.
pub const LENGTH_BIN: usize = 10;

#[derive(Debug, Error, PartialEq)]
#[error("dataset is empty")]
pub struct EmptyDataset;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

impl Range {
    fn of(values: impl IntoIterator<Item = f64>) -> Range {
        let (mut min, mut max, mut sum, mut n) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0usize);
        for v in values {
            min = min.min(v);
            max = max.max(v);
            sum += v;
            n += 1;
        }
        Range { min, max, mean: sum / n as f64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub n_trials: usize,
    pub frames: Range,
    /// `(first frame count in bin, trials)` for bins of [`LENGTH_BIN`] frames.
    pub length_histogram: Vec<(usize, usize)>,
    /// Palm path length per trial (m).
    pub palm_travel: Range,
    pub trials_per_user: BTreeMap<String, usize>,
}

/// Path length of the right palm center.
pub fn palm_travel(trial: &Trial) -> f64 {
    trial
        .frames()
        .windows(2)
        .map(|w| w[1].right.palm_center.distance(w[0].right.palm_center))
        .sum()
}

pub fn dataset_summary(ds: &Dataset) -> Result<SummaryStats, EmptyDataset> {
    if ds.is_empty() {
        return Err(EmptyDataset);
    }
    let lengths: Vec<usize> = ds.trials().iter().map(|t| t.frames().len()).collect();
    let mut hist: BTreeMap<usize, usize> = BTreeMap::new();
    for &n in &lengths {
        *hist.entry(n / LENGTH_BIN * LENGTH_BIN).or_default() += 1;
    }
    let mut per_user = BTreeMap::new();
    for t in ds.trials() {
        *per_user.entry(t.meta().user_id.clone()).or_default() += 1;
    }
    Ok(SummaryStats {
        n_trials: ds.len(),
        frames: Range::of(lengths.iter().map(|&n| n as f64)),
        length_histogram: hist.into_iter().collect(),
        palm_travel: Range::of(ds.trials().iter().map(palm_travel)),
        trials_per_user: per_user,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::{synth_trial, SizeLabel, SynthConfig, TrialMeta, Vec3};

    fn meta(id: &str) -> TrialMeta {
        TrialMeta {
            user_id: "u1".into(),
            task: "Hold".into(),
            object: "Cube".into(),
            size: SizeLabel::Small,
            grasp_time: 0.0,
            trial_id: id.into(),
        }
    }

    #[test]
    fn single_trial_of_120_frames() {
        let cfg = SynthConfig::new(Vec3::ZERO, Vec3::new(0.3, 0.2, 0.1), 119.0 / 60.0);
        let ds = Dataset::new(vec![synth_trial(&cfg, meta("a")).unwrap()], "test").unwrap();
        let s = dataset_summary(&ds).unwrap();
        assert_eq!((s.frames.min, s.frames.max, s.frames.mean), (120.0, 120.0, 120.0));
        assert_eq!(s.length_histogram, vec![(120, 1)]);
        assert_eq!(s.trials_per_user["u1"], 1);
    }

    #[test]
    fn straight_path_length_is_chord_length() {
        let xf = Vec3::new(0.3, 0.2, 0.1);
        let cfg = SynthConfig::new(Vec3::new(0.1, 1.0, 0.0), xf + Vec3::new(0.1, 1.0, 0.0), 1.2);
        let trial = synth_trial(&cfg, meta("a")).unwrap();
        assert!((palm_travel(&trial) - xf.norm()).abs() <= 1e-9);
        let moved = trial.translated(Vec3::new(5.0, -2.0, 1.0));
        assert!((palm_travel(&moved) - palm_travel(&trial)).abs() <= 1e-9);
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let ds = Dataset::new(vec![], "none").unwrap();
        assert_eq!(dataset_summary(&ds), Err(EmptyDataset));
    }
}
