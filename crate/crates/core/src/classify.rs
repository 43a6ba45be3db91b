//! Per-frame classification of object, size and task from grasp features,
//! with tree, forest and 1-nearest-neighbour classifiers under trial-grouped
//! k-fold and leave-one-user-out cross-validation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cart::{ClassForest, ClassTree, ForestParams, TreeParams};
use crate::features::{trial_features, Hands};
use crate::kinematics::{KinematicsError, SavgolSpec};
use crate::report::{AccuracyRow, ConfusionMatrix};
use crate::trajectory::Dataset;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClassifyError {
    #[error("window {0} selects no frames")]
    EmptyWindow(FrameWindow),
    #[error("leave-one-user-out needs at least 2 users, found {0}")]
    TooFewUsers(usize),
    #[error("{k}-fold split needs at least {k} trials, found {trials}")]
    TooFewTrials { k: usize, trials: usize },
    #[error("no training samples")]
    EmptyDataset,
    #[error("feature length {got} differs from {expected}")]
    FeatureLength { expected: usize, got: usize },
    #[error("bad frame window {0:?}; expected a..b with negative offsets")]
    BadWindow(String),
    #[error("trial {trial}: {source}")]
    Kinematics { trial: String, source: KinematicsError },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Object,
    Size,
    Task,
}

impl Target {
    pub const ALL: [Target; 3] = [Target::Object, Target::Size, Target::Task];

    pub fn as_str(self) -> &'static str {
        match self {
            Target::Object => "object",
            Target::Size => "size",
            Target::Task => "task",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub features: Vec<f64>,
    pub object: String,
    pub size: String,
    pub task: String,
    pub user_id: String,
    pub trial_id: String,
    /// Frames before grasp: -1 is the grasp frame, -2 the one before.
    pub frame_offset: i64,
}

impl LabeledSample {
    pub fn label(&self, target: Target) -> &str {
        match target {
            Target::Object => &self.object,
            Target::Size => &self.size,
            Target::Task => &self.task,
        }
    }
}

/// Inclusive range of frame offsets, `nearest` closer to grasp than
/// `farthest` (e.g. -1 and -5).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameWindow {
    pub nearest: i64,
    pub farthest: i64,
}

impl FrameWindow {
    pub fn new(a: i64, b: i64) -> Result<Self, ClassifyError> {
        if a >= 0 || b >= 0 {
            return Err(ClassifyError::BadWindow(format!("{a}..{b}")));
        }
        Ok(Self { nearest: a.max(b), farthest: a.min(b) })
    }

    pub fn len(&self) -> usize {
        (self.nearest - self.farthest + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Consecutive windows of `width` frames receding from grasp.
    pub fn sweep(width: usize, count: usize) -> Vec<FrameWindow> {
        (0..count as i64)
            .map(|k| FrameWindow { nearest: -1 - k * width as i64, farthest: -(k + 1) * width as i64 })
            .collect()
    }
}

impl fmt::Display for FrameWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.nearest, self.farthest)
    }
}

impl FromStr for FrameWindow {
    type Err = ClassifyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ClassifyError::BadWindow(s.to_string());
        let (a, b) = s.split_once("..").ok_or_else(bad)?;
        FrameWindow::new(a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?)
    }
}

/// One sample per frame inside the window for every trial; trials shorter
/// than the window contribute the frames they have.
pub fn build_classification_samples(
    ds: &Dataset,
    window: FrameWindow,
    hands: Hands,
    spec: &SavgolSpec,
    rate: f64,
) -> Result<Vec<LabeledSample>, ClassifyError> {
    let per: Vec<Vec<LabeledSample>> = ds
        .trials()
        .par_iter()
        .map(|trial| {
            let feats = trial_features(trial, hands, spec, rate).map_err(|source| ClassifyError::Kinematics { trial: trial.id().to_string(), source })?;
            let g = trial.grasp_frame() as i64;
            let meta = trial.meta();
            Ok((window.farthest..=window.nearest)
                .rev()
                .filter_map(|off| {
                    let i = g + 1 + off;
                    (i >= 0).then(|| LabeledSample {
                        features: feats[i as usize].flattened(),
                        object: meta.object.clone(),
                        size: meta.size.as_str().to_string(),
                        task: meta.task.clone(),
                        user_id: meta.user_id.clone(),
                        trial_id: meta.trial_id.clone(),
                        frame_offset: off,
                    })
                })
                .collect())
        })
        .collect::<Result<_, ClassifyError>>()?;
    let out: Vec<LabeledSample> = per.into_iter().flatten().collect();
    if out.is_empty() {
        return Err(ClassifyError::EmptyWindow(window));
    }
    Ok(out)
}

/// A fitted classifier over dense class ids.
pub trait Predictor: Send + Sync {
    fn predict(&self, x: &[f64]) -> usize;
}

/// Fits a [`Predictor`] on row-major features `x` (`d` columns) and class
/// ids below `n_classes`. Class ids follow lexicographic label order, so
/// "smallest id" is "lexicographically smallest label".
pub trait Learner: Sync {
    fn name(&self) -> String;
    fn fit(&self, x: &[f64], d: usize, labels: &[usize], n_classes: usize, seed: u64) -> Result<Box<dyn Predictor>, ClassifyError>;
}

pub struct Constant(pub usize);

impl Predictor for Constant {
    fn predict(&self, _x: &[f64]) -> usize {
        self.0
    }
}

impl Predictor for ClassTree {
    fn predict(&self, x: &[f64]) -> usize {
        ClassTree::predict(self, x)
    }
}

impl Predictor for ClassForest {
    fn predict(&self, x: &[f64]) -> usize {
        ClassForest::predict(self, x)
    }
}

/// 1-nearest neighbour, Euclidean; ties go to the smallest sample index.
pub struct NearestNeighbor {
    pub x: Vec<f64>,
    pub d: usize,
    pub labels: Vec<usize>,
}

impl Predictor for NearestNeighbor {
    fn predict(&self, q: &[f64]) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (i, row) in self.x.chunks_exact(self.d).enumerate() {
            let dist: f64 = row.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
            if dist < best.0 {
                best = (dist, i);
            }
        }
        self.labels[best.1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ClassifierSpec {
    Tree(TreeParams),
    Forest(ForestParams),
    Knn,
}

impl ClassifierSpec {
    pub fn tree() -> Self {
        ClassifierSpec::Tree(TreeParams::default())
    }

    pub fn forest() -> Self {
        ClassifierSpec::Forest(ForestParams::default())
    }
}

impl Learner for ClassifierSpec {
    fn name(&self) -> String {
        match self {
            ClassifierSpec::Tree(_) => "tree",
            ClassifierSpec::Forest(_) => "forest",
            ClassifierSpec::Knn => "knn",
        }
        .into()
    }

    fn fit(&self, x: &[f64], d: usize, labels: &[usize], n_classes: usize, seed: u64) -> Result<Box<dyn Predictor>, ClassifyError> {
        if labels.is_empty() {
            return Err(ClassifyError::EmptyDataset);
        }
        if x.len() != labels.len() * d {
            return Err(ClassifyError::FeatureLength { expected: labels.len() * d, got: x.len() });
        }
        let present: BTreeSet<usize> = labels.iter().copied().collect();
        if present.len() == 1 && !matches!(self, ClassifierSpec::Knn) {
            log::warn!("only one class in the training labels; using a constant classifier");
            return Ok(Box::new(Constant(labels[0])));
        }
        Ok(match self {
            ClassifierSpec::Tree(p) => Box::new(ClassTree::fit(x, d, labels, n_classes, *p, seed)),
            ClassifierSpec::Forest(p) => Box::new(ClassForest::fit(x, d, labels, n_classes, p, seed)),
            ClassifierSpec::Knn => Box::new(NearestNeighbor { x: x.to_vec(), d, labels: labels.to_vec() }),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitKind {
    Kfold { k: usize },
    LeaveOneUserOut,
}

impl SplitKind {
    pub fn as_str(&self) -> String {
        match self {
            SplitKind::Kfold { k } => format!("kfold{k}"),
            SplitKind::LeaveOneUserOut => "louo".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub kind: SplitKind,
    pub seed: u64,
    /// Sample indices per fold, ascending.
    pub folds: Vec<Vec<usize>>,
}

/// Trial-grouped k-fold (seeded shuffle of trials dealt round-robin) or one
/// fold per user.
pub fn make_split(samples: &[LabeledSample], kind: SplitKind, seed: u64) -> Result<SplitPlan, ClassifyError> {
    let groups: BTreeMap<(String, String), Vec<usize>> = match kind {
        SplitKind::Kfold { .. } => {
            let mut g: BTreeMap<(String, String), Vec<usize>> = BTreeMap::new();
            for (i, s) in samples.iter().enumerate() {
                g.entry((s.user_id.clone(), s.trial_id.clone())).or_default().push(i);
            }
            g
        }
        SplitKind::LeaveOneUserOut => {
            let mut g: BTreeMap<(String, String), Vec<usize>> = BTreeMap::new();
            for (i, s) in samples.iter().enumerate() {
                g.entry((s.user_id.clone(), String::new())).or_default().push(i);
            }
            g
        }
    };
    let folds = match kind {
        SplitKind::Kfold { k } => {
            if k == 0 || groups.len() < k {
                return Err(ClassifyError::TooFewTrials { k, trials: groups.len() });
            }
            let mut trials: Vec<&Vec<usize>> = groups.values().collect();
            trials.shuffle(&mut crate::rng::stream(seed, &[]));
            let mut folds = vec![Vec::new(); k];
            for (j, t) in trials.into_iter().enumerate() {
                folds[j % k].extend(t);
            }
            folds
        }
        SplitKind::LeaveOneUserOut => {
            if groups.len() < 2 {
                return Err(ClassifyError::TooFewUsers(groups.len()));
            }
            groups.into_values().collect()
        }
    };
    let folds = folds
        .into_iter()
        .map(|mut f| {
            f.sort_unstable();
            f
        })
        .collect();
    Ok(SplitPlan { kind, seed, folds })
}

/// Sorted distinct labels of a target.
pub fn label_set(samples: &[LabeledSample], target: Target) -> Vec<String> {
    samples.iter().map(|s| s.label(target).to_string()).collect::<BTreeSet<_>>().into_iter().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldFailure {
    pub fold: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub classifier: String,
    pub split: SplitKind,
    /// Test samples from folds that trained successfully.
    pub n_tested: usize,
    pub accuracy: BTreeMap<Target, f64>,
    /// Fraction of samples with every target correct.
    pub overall: f64,
    pub confusion: BTreeMap<Target, ConfusionMatrix>,
    pub failed: Vec<FoldFailure>,
}

impl CvResult {
    pub fn row(&self, name: &str) -> AccuracyRow {
        AccuracyRow {
            name: name.to_string(),
            n: self.n_tested,
            object: self.accuracy[&Target::Object],
            size: self.accuracy[&Target::Size],
            task: self.accuracy[&Target::Task],
            overall: self.overall,
        }
    }
}

struct FoldOutcome {
    /// Per test sample: whether each target was right.
    correct: Vec<[bool; 3]>,
    confusion: Vec<ConfusionMatrix>,
}

fn run_fold(
    samples: &[LabeledSample],
    test: &[usize],
    learner: &dyn Learner,
    classes: &[(Vec<String>, Vec<usize>)],
    seed: u64,
    fold: usize,
) -> Result<FoldOutcome, ClassifyError> {
    let d = samples[0].features.len();
    let mut is_test = vec![false; samples.len()];
    test.iter().for_each(|&i| is_test[i] = true);
    let train: Vec<usize> = (0..samples.len()).filter(|&i| !is_test[i]).collect();
    if train.is_empty() {
        return Err(ClassifyError::EmptyDataset);
    }
    let x: Vec<f64> = train.iter().flat_map(|&i| samples[i].features.iter().copied()).collect();
    let mut correct = vec![[false; 3]; test.len()];
    let mut confusion = Vec::new();
    for (t, (labels, ids)) in classes.iter().enumerate() {
        let y: Vec<usize> = train.iter().map(|&i| ids[i]).collect();
        let model = learner.fit(&x, d, &y, labels.len(), crate::rng::derive_seed(seed, &[fold as u64, t as u64]))?;
        let mut cm = ConfusionMatrix::new(labels.clone());
        for (slot, &i) in test.iter().enumerate() {
            let p = model.predict(&samples[i].features);
            cm.add(ids[i], p);
            correct[slot][t] = p == ids[i];
        }
        confusion.push(cm);
    }
    Ok(FoldOutcome { correct, confusion })
}

/// Trains on each fold's complement and tests on the fold, for all three
/// targets. Folds run in parallel; a fold whose training fails is recorded
/// and skipped.
pub fn evaluate_cv(samples: &[LabeledSample], plan: &SplitPlan, learner: &dyn Learner) -> Result<CvResult, ClassifyError> {
    let Some(first) = samples.first() else {
        return Err(ClassifyError::EmptyDataset);
    };
    let d = first.features.len();
    if let Some(s) = samples.iter().find(|s| s.features.len() != d) {
        return Err(ClassifyError::FeatureLength { expected: d, got: s.features.len() });
    }
    let classes: Vec<(Vec<String>, Vec<usize>)> = Target::ALL
        .iter()
        .map(|&t| {
            let labels = label_set(samples, t);
            let ids = samples.iter().map(|s| labels.binary_search_by(|l| l.as_str().cmp(s.label(t))).unwrap()).collect();
            (labels, ids)
        })
        .collect();
    let outcomes: Vec<Result<FoldOutcome, ClassifyError>> =
        plan.folds.par_iter().enumerate().map(|(f, test)| run_fold(samples, test, learner, &classes, plan.seed, f)).collect();
    let mut confusion: Vec<ConfusionMatrix> = classes.iter().map(|(l, _)| ConfusionMatrix::new(l.clone())).collect();
    let mut right = [0usize; 3];
    let mut all_right = 0;
    let mut n = 0;
    let mut failed = Vec::new();
    for (fold, out) in outcomes.into_iter().enumerate() {
        match out {
            Ok(o) => {
                for c in &o.correct {
                    n += 1;
                    for t in 0..3 {
                        right[t] += c[t] as usize;
                    }
                    all_right += c.iter().all(|&b| b) as usize;
                }
                for (acc, cm) in confusion.iter_mut().zip(&o.confusion) {
                    acc.merge(cm);
                }
            }
            Err(e) => {
                log::warn!("fold {fold} failed: {e}");
                failed.push(FoldFailure { fold, error: e.to_string() });
            }
        }
    }
    let frac = |k: usize| if n == 0 { f64::NAN } else { k as f64 / n as f64 };
    Ok(CvResult {
        classifier: learner.name(),
        split: plan.kind,
        n_tested: n,
        accuracy: Target::ALL.iter().enumerate().map(|(t, &tg)| (tg, frac(right[t]))).collect(),
        overall: frac(all_right),
        confusion: Target::ALL.into_iter().zip(confusion).collect(),
        failed,
    })
}

/// Accuracy per frame window under trial-grouped k-fold CV. Windows with no
/// frames (or too few trials to split) get a row with count 0 and NaN
/// accuracies.
pub fn window_sweep_accuracy(
    ds: &Dataset,
    windows: &[FrameWindow],
    learner: &dyn Learner,
    hands: Hands,
    savgol: &SavgolSpec,
    rate: f64,
    k: usize,
    seed: u64,
) -> Result<Vec<AccuracyRow>, ClassifyError> {
    let empty = |w: &FrameWindow| AccuracyRow { name: w.to_string(), n: 0, object: f64::NAN, size: f64::NAN, task: f64::NAN, overall: f64::NAN };
    windows
        .iter()
        .map(|w| {
            let samples = match build_classification_samples(ds, *w, hands, savgol, rate) {
                Ok(s) => s,
                Err(ClassifyError::EmptyWindow(_)) => return Ok(empty(w)),
                Err(e) => return Err(e),
            };
            let plan = match make_split(&samples, SplitKind::Kfold { k }, seed) {
                Ok(p) => p,
                Err(ClassifyError::TooFewTrials { .. }) => return Ok(AccuracyRow { n: samples.len(), ..empty(w) }),
                Err(e) => return Err(e),
            };
            let r = evaluate_cv(&samples, &plan, learner)?;
            Ok(AccuracyRow { n: samples.len(), ..r.row(&w.to_string()) })
        })
        .collect()
}
