//! Grasp posture prediction: the five palm-to-fingertip vectors at grasp,
//! from LSTM models (with or without the temporal smoothness penalty) and
//! fixed-window linear, tree and forest baselines.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cart::{ForestParams, RegForest, RegTree, TreeParams};
use crate::neural::{LossSpec, NetSpec, NeuralError, SeqSample, SequenceModel, TrainConfig};
use crate::reach::{first_dt, fit_sequence_model, plan_windows, Trained, WindowError, WindowPolicy, WindowSpan};
use crate::trajectory::{Trial, Vec3};

/// Per-step input width: 15 vector components and the frame spacing.
pub const POSTURE_INPUT: usize = 16;
/// Output width: five vectors.
pub const POSTURE_OUTPUT: usize = 15;
/// Default smoothness weight of the temporal variant.
pub const DEFAULT_LAMBDA: f64 = 0.1;
/// Span of the fixed-length baseline window (s).
pub const FIXED_SPAN: f64 = 0.5;
/// Resampled steps in the fixed-length baseline window.
pub const FIXED_STEPS: usize = 30;
/// Ridge added to singular least-squares designs.
pub const RIDGE: f64 = 1e-8;

pub type Posture = [Vec3; 5];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PostureError {
    #[error(transparent)]
    Window(#[from] WindowError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error("no training samples")]
    EmptyDataset,
    #[error("fixed-window samples must all have {expected} features, got {got}")]
    Width { expected: usize, got: usize },
    #[error("the temporal variant needs a positive smoothness weight")]
    ZeroLambda,
}

/// Fingertip positions relative to the palm, as 15 scalars.
pub fn posture_flat(p: &Posture) -> [f64; 15] {
    let mut out = [0.0; 15];
    for (j, v) in p.iter().enumerate() {
        out[3 * j..3 * j + 3].copy_from_slice(&[v.x, v.y, v.z]);
    }
    out
}

pub fn posture_from_flat(v: &[f64]) -> Posture {
    std::array::from_fn(|j| Vec3::new(v[3 * j], v[3 * j + 1], v[3 * j + 2]))
}

/// One sliding-window posture sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostureSample {
    pub trial_id: String,
    pub times: Vec<f64>,
    /// Fingertip-minus-palm vectors per step, thumb first.
    pub vectors: Vec<Posture>,
    pub dts: Vec<f64>,
    pub end_time: f64,
    /// Window end relative to grasp (s, <= 0).
    pub window_end_offset: f64,
    pub targets: Posture,
}

impl PostureSample {
    pub fn steps(&self) -> usize {
        self.times.len()
    }

    /// Network sequence; every step is supervised with the grasp posture.
    pub fn to_seq(&self) -> SeqSample {
        let target = posture_flat(&self.targets);
        let mut inputs = Vec::with_capacity(POSTURE_INPUT * self.steps());
        let mut targets = Vec::with_capacity(POSTURE_OUTPUT * self.steps());
        for (v, &dt) in self.vectors.iter().zip(&self.dts) {
            inputs.extend(posture_flat(v));
            inputs.push(dt);
            targets.extend(target);
        }
        SeqSample { steps: self.steps(), inputs, statics: vec![], targets }
    }

    /// The last [`FIXED_SPAN`] seconds resampled to [`FIXED_STEPS`] evenly
    /// spaced points (linear interpolation, held at the first step when the
    /// window is shorter), flattened step-major.
    pub fn fixed_features(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(FIXED_STEPS * POSTURE_OUTPUT);
        for k in 0..FIXED_STEPS {
            let t = self.end_time - FIXED_SPAN * (1.0 - k as f64 / (FIXED_STEPS - 1) as f64);
            out.extend(posture_flat(&self.vectors_at(t)));
        }
        out
    }

    fn vectors_at(&self, t: f64) -> Posture {
        let n = self.steps();
        if t <= self.times[0] {
            return self.vectors[0];
        }
        let i = self.times.partition_point(|&s| s <= t);
        if i >= n {
            return self.vectors[n - 1];
        }
        let s = (t - self.times[i - 1]) / (self.times[i] - self.times[i - 1]);
        std::array::from_fn(|j| self.vectors[i - 1][j] + (self.vectors[i][j] - self.vectors[i - 1][j]) * s)
    }
}

fn grasp_posture(trial: &Trial) -> Posture {
    let g = trial.grasp_time();
    std::array::from_fn(|j| trial.interpolate(g, |f| f.right.tips_from_palm()[j]))
}

fn sample_from_span(trial: &Trial, span: &WindowSpan, targets: Posture) -> PostureSample {
    let frames = &trial.frames()[span.first..=span.last];
    let mut dts = Vec::with_capacity(frames.len());
    dts.push(first_dt(trial, span.first));
    dts.extend(frames.windows(2).map(|w| w[1].t - w[0].t));
    PostureSample {
        trial_id: trial.id().to_string(),
        times: frames.iter().map(|f| f.t).collect(),
        vectors: frames.iter().map(|f| f.right.tips_from_palm()).collect(),
        dts,
        end_time: span.end_time,
        window_end_offset: span.end_time - trial.grasp_time(),
        targets,
    }
}

/// Sliding-window samples under the same policy as the reach builder.
pub fn build_posture_windows(trial: &Trial, policy: &WindowPolicy) -> Result<Vec<PostureSample>, WindowError> {
    let targets = grasp_posture(trial);
    Ok(plan_windows(trial, policy)?.iter().map(|s| sample_from_span(trial, s, targets)).collect())
}

/// The single window covering the whole history up to grasp.
pub fn full_posture_window(trial: &Trial) -> Result<PostureSample, WindowError> {
    let start = crate::reach::history_start(trial);
    let policy = WindowPolicy { stride: 1.0, min_len: (trial.grasp_time() - start).max(1e-9) };
    let spans = plan_windows(trial, &policy)?;
    let span = spans.last().ok_or_else(|| WindowError::TrialTooShort { trial: trial.id().to_string() })?;
    Ok(sample_from_span(trial, span, grasp_posture(trial)))
}

/// Windows of many trials, in trial order.
pub fn build_posture_dataset(trials: &[Trial], policy: &WindowPolicy) -> Result<Vec<PostureSample>, WindowError> {
    let per: Vec<_> = trials.par_iter().map(|t| build_posture_windows(t, policy)).collect::<Result<_, _>>()?;
    Ok(per.into_iter().flatten().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostureArch {
    pub hidden: usize,
    pub dense: usize,
}

impl Default for PostureArch {
    fn default() -> Self {
        Self { hidden: 64, dense: 32 }
    }
}

pub fn posture_spec(arch: &PostureArch) -> NetSpec {
    NetSpec { input_size: POSTURE_INPUT, hidden: arch.hidden, proj: Some(arch.dense), branches: vec![], body: vec![], output_size: POSTURE_OUTPUT }
}

/// Per-step MSE over the 15 outputs plus `lambda` times the smoothness term.
pub fn posture_loss(lambda: f64) -> LossSpec {
    LossSpec { lambda_smooth: lambda, ..LossSpec::mse(POSTURE_OUTPUT) }
}

fn train_with(tag: &str, samples: &[PostureSample], config: &TrainConfig, arch: &PostureArch) -> Result<Trained, PostureError> {
    let seqs: Vec<SeqSample> = samples.iter().map(PostureSample::to_seq).collect();
    Ok(fit_sequence_model(tag, posture_spec(arch), &seqs, &posture_loss(config.lambda_smooth), config)?)
}

/// Plain variant: the smoothness weight in `config` is ignored (set to 0).
pub fn train_posture_lstm(samples: &[PostureSample], config: &TrainConfig, arch: &PostureArch) -> Result<Trained, PostureError> {
    let config = TrainConfig { lambda_smooth: 0.0, ..config.clone() };
    train_with("LSTM", samples, &config, arch)
}

pub fn train_posture_lstm_temporal(samples: &[PostureSample], config: &TrainConfig, arch: &PostureArch) -> Result<Trained, PostureError> {
    if config.lambda_smooth <= 0.0 {
        return Err(PostureError::ZeroLambda);
    }
    train_with("LSTM_TEMPORAL", samples, config, arch)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosturePrediction {
    pub fingers: Posture,
    /// Prediction after every input step; the last entry is `fingers`.
    pub steps: Vec<Posture>,
}

/// Eval-mode forward over the window.
pub fn predict_posture(model: &SequenceModel, sample: &PostureSample) -> Result<PosturePrediction, PostureError> {
    let mut seq = sample.to_seq();
    seq.targets.clear();
    let y = model.predict(&seq)?;
    let steps: Vec<Posture> = y.chunks_exact(POSTURE_OUTPUT).map(posture_from_flat).collect();
    Ok(PosturePrediction { fingers: steps[steps.len() - 1], steps })
}

/// Mean over successive steps of the 15-dimensional distance between
/// consecutive predictions (0 for a single step).
pub fn mean_step_displacement(steps: &[Posture]) -> f64 {
    if steps.len() < 2 {
        return 0.0;
    }
    let total: f64 = steps
        .windows(2)
        .map(|w| w[0].iter().zip(&w[1]).map(|(a, b)| (*b - *a).norm_squared()).sum::<f64>().sqrt())
        .sum();
    total / (steps.len() - 1) as f64
}

/// Ordinary least squares with an intercept, solved on centered features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    /// `outputs x features`, row-major.
    pub coef: Vec<f64>,
    pub intercept: Vec<f64>,
    pub n_features: usize,
    /// The design was singular and [`RIDGE`] was added.
    pub ridge_applied: bool,
}

impl LinearModel {
    pub fn fit(x: &[f64], d: usize, y: &[f64], width: usize) -> Result<Self, PostureError> {
        if d == 0 || x.is_empty() {
            return Err(PostureError::EmptyDataset);
        }
        let n = x.len() / d;
        let xm = DMatrix::from_row_slice(n, d, x);
        let ym = DMatrix::from_row_slice(n, width, y);
        let x_mean = xm.row_mean();
        let y_mean = ym.row_mean();
        let mut xc = xm;
        let mut yc = ym;
        for mut r in xc.row_iter_mut() {
            r -= &x_mean;
        }
        for mut r in yc.row_iter_mut() {
            r -= &y_mean;
        }
        let gram = xc.transpose() * &xc;
        let rhs = xc.transpose() * &yc;
        let (beta, ridge_applied) = match gram.clone().cholesky().filter(|c| well_conditioned(c.l_dirty())) {
            Some(c) => (c.solve(&rhs), false),
            None => {
                log::warn!("singular least-squares design; adding ridge {RIDGE}");
                let scale = gram.diagonal().max().max(1.0);
                let reg = gram + DMatrix::identity(d, d) * (RIDGE * scale);
                let c = reg.cholesky().ok_or(PostureError::EmptyDataset)?;
                (c.solve(&rhs), true)
            }
        };
        let intercept = DVector::from_iterator(width, y_mean.iter().copied()) - beta.transpose() * DVector::from_iterator(d, x_mean.iter().copied());
        Ok(Self { coef: row_major(&beta.transpose()), intercept: intercept.iter().copied().collect(), n_features: d, ridge_applied })
    }

    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        self.intercept
            .iter()
            .enumerate()
            .map(|(k, b)| b + self.coef[k * self.n_features..(k + 1) * self.n_features].iter().zip(x).map(|(c, v)| c * v).sum::<f64>())
            .collect()
    }
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()).collect()
}

/// Rejects Cholesky factors whose pivots collapse relative to the largest.
fn well_conditioned(l: &DMatrix<f64>) -> bool {
    let diag = l.diagonal();
    let max = diag.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    max > 0.0 && diag.iter().all(|v| v.abs() > 1e-7 * max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Linear,
    Tree,
    Forest,
}

impl BaselineKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BaselineKind::Linear => "LINEAR",
            BaselineKind::Tree => "TREE",
            BaselineKind::Forest => "FOREST",
        }
    }
}

/// Growth settings of the tree baselines.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineParams {
    pub tree: TreeParams,
    pub forest: ForestParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PostureBaseline {
    Linear(LinearModel),
    Tree(RegTree),
    Forest(RegForest),
}

impl PostureBaseline {
    pub fn predict_features(&self, x: &[f64]) -> Vec<f64> {
        match self {
            PostureBaseline::Linear(m) => m.predict(x),
            PostureBaseline::Tree(m) => m.predict(x),
            PostureBaseline::Forest(m) => m.predict(x),
        }
    }

    pub fn predict(&self, sample: &PostureSample) -> Posture {
        posture_from_flat(&self.predict_features(&sample.fixed_features()))
    }
}

/// Fits a baseline on flattened fixed-length inputs `x` (`n x d`) and
/// 15-wide targets.
pub fn train_baseline_raw(x: &[f64], d: usize, y: &[f64], kind: BaselineKind, params: &BaselineParams, seed: u64) -> Result<PostureBaseline, PostureError> {
    if x.is_empty() || d == 0 {
        return Err(PostureError::EmptyDataset);
    }
    if !x.len().is_multiple_of(d) || x.len() / d != y.len() / POSTURE_OUTPUT {
        return Err(PostureError::Width { expected: d, got: x.len() % d });
    }
    Ok(match kind {
        BaselineKind::Linear => PostureBaseline::Linear(LinearModel::fit(x, d, y, POSTURE_OUTPUT)?),
        BaselineKind::Tree => PostureBaseline::Tree(RegTree::fit(x, d, y, POSTURE_OUTPUT, params.tree, seed)),
        BaselineKind::Forest => PostureBaseline::Forest(RegForest::fit(x, d, y, POSTURE_OUTPUT, &params.forest, seed)),
    })
}

pub fn train_posture_baseline(samples: &[PostureSample], kind: BaselineKind, params: &BaselineParams, seed: u64) -> Result<PostureBaseline, PostureError> {
    if samples.is_empty() {
        return Err(PostureError::EmptyDataset);
    }
    let rows: Vec<Vec<f64>> = samples.par_iter().map(PostureSample::fixed_features).collect();
    let y: Vec<f64> = samples.iter().flat_map(|s| posture_flat(&s.targets)).collect();
    train_baseline_raw(&rows.concat(), FIXED_STEPS * POSTURE_OUTPUT, &y, kind, params, seed)
}
