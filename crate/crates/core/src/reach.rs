//! Grasp position and time-to-grasp prediction from the right palm path:
//! the sliding-window sample builder and the MJT, LSTM and LSTM-MJT
//! predictors.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{detect_onset_with, speed_profile_points, KinematicsError, SavgolSpec, NOMINAL_RATE, ONSET_DEBOUNCE, ONSET_THRESHOLD};
use crate::mjt::{fit_mjt, mjt_position, MjtError, MjtFit, MIN_POINTS};
use crate::neural::{
    fit_normalization, train, BranchSpec, EpochStats, LossKind, LossSpec, LossTerm, NetSpec, NeuralError, SeqSample,
    SequenceModel, TrainConfig,
};
use crate::trajectory::{Trial, Vec3};

/// Longest history fed to the predictors (s).
pub const HORIZON: f64 = 2.0;
/// Remaining-time stand-in when the MJT fit fails (s).
pub const TIME_CAP: f64 = 2.0;
const TIME_EPS: f64 = 1e-9;
/// Coarsest grid spacing of the movement-start search (s).
pub const ONSET_GRID_STEP: f64 = 0.05;
const GOLDEN_TOL: f64 = 1e-6;
const GOLDEN_MAX_ITER: usize = 40;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WindowError {
    #[error("trial {trial}: fewer than 2 frames before grasp")]
    TrialTooShort { trial: String },
    #[error("window stride and minimum length must be positive and finite")]
    BadPolicy,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReachError {
    #[error(transparent)]
    Window(#[from] WindowError),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Mjt(#[from] MjtError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error("{got} MJT inputs for {expected} samples")]
    MjtInputCount { expected: usize, got: usize },
}

/// Where windows end: from `start + min_len` to the grasp in steps of
/// `stride` (both in seconds).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowPolicy {
    pub stride: f64,
    pub min_len: f64,
}

impl WindowPolicy {
    /// One window per frame.
    pub fn training() -> Self {
        Self { stride: 1.0 / NOMINAL_RATE, min_len: 1.0 / NOMINAL_RATE }
    }

    /// Quarter-second steps whose ends fall mid-bucket when the full
    /// two-second history is available.
    pub fn evaluation() -> Self {
        Self { stride: 0.25, min_len: 0.125 }
    }

    fn validate(&self) -> Result<(), WindowError> {
        if self.stride > 0.0 && self.stride.is_finite() && self.min_len > 0.0 && self.min_len.is_finite() {
            Ok(())
        } else {
            Err(WindowError::BadPolicy)
        }
    }
}

/// Frame range `first..=last` of one window and its end time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowSpan {
    pub first: usize,
    pub last: usize,
    pub end_time: f64,
}

/// Number of windows for a history of `span` seconds.
pub fn window_count(span: f64, policy: &WindowPolicy) -> usize {
    if span + TIME_EPS < policy.min_len {
        return 0;
    }
    ((span - policy.min_len) / policy.stride + TIME_EPS).floor() as usize + 1
}

/// Start time of the usable history: two seconds before grasp, or the
/// first frame for shorter trials.
pub fn history_start(trial: &Trial) -> f64 {
    (trial.grasp_time() - HORIZON).max(trial.frames()[0].t)
}

/// Window spans of a trial; windows that would hold no frame are dropped.
pub fn plan_windows(trial: &Trial, policy: &WindowPolicy) -> Result<Vec<WindowSpan>, WindowError> {
    policy.validate()?;
    let frames = trial.frames();
    let grasp = trial.grasp_time();
    if frames.partition_point(|f| f.t <= grasp + TIME_EPS) < 2 {
        return Err(WindowError::TrialTooShort { trial: trial.id().to_string() });
    }
    let start = history_start(trial);
    let first = frames.partition_point(|f| f.t < start - TIME_EPS);
    let count = window_count(grasp - start, policy);
    let mut spans = Vec::with_capacity(count);
    for k in 0..count {
        let mut end = start + policy.min_len + k as f64 * policy.stride;
        if (end - grasp).abs() <= TIME_EPS || end > grasp {
            end = grasp;
        }
        let upto = frames.partition_point(|f| f.t <= end + TIME_EPS);
        if upto == 0 || upto - 1 < first {
            continue;
        }
        spans.push(WindowSpan { first, last: upto - 1, end_time: end });
    }
    Ok(spans)
}

/// One sliding-window reach sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReachSample {
    pub trial_id: String,
    pub times: Vec<f64>,
    pub positions: Vec<Vec3>,
    /// Spacing to the previous frame; the first entry looks back before the
    /// window when possible.
    pub dts: Vec<f64>,
    /// Absolute window end (s).
    pub end_time: f64,
    /// Window end relative to grasp (s, <= 0).
    pub window_end_offset: f64,
    pub target_position: Vec3,
    /// Time left until grasp at the window end (s).
    pub target_time: f64,
}

impl ReachSample {
    pub fn steps(&self) -> usize {
        self.times.len()
    }

    pub fn grasp_time(&self) -> f64 {
        self.end_time + self.target_time
    }

    pub fn last_position(&self) -> Vec3 {
        self.positions[self.positions.len() - 1]
    }

    /// Observations as `(t, P(t))` pairs.
    pub fn observed(&self) -> Vec<(f64, Vec3)> {
        self.times.iter().copied().zip(self.positions.iter().copied()).collect()
    }

    /// Network sequence `[P, dt]` per step. Every step is supervised with
    /// the displacement from its own position to the grasp position and its
    /// own time to grasp.
    pub fn to_seq(&self, statics: Vec<Vec<f64>>) -> SeqSample {
        let grasp = self.grasp_time();
        let mut inputs = Vec::with_capacity(4 * self.steps());
        let mut targets = Vec::with_capacity(4 * self.steps());
        for ((p, &dt), &t) in self.positions.iter().zip(&self.dts).zip(&self.times) {
            inputs.extend([p.x, p.y, p.z, dt]);
            let d = self.target_position - *p;
            targets.extend([d.x, d.y, d.z, grasp - t]);
        }
        SeqSample { steps: self.steps(), inputs, statics, targets }
    }

    /// The sample cut at `last` (inclusive step index), ending there.
    pub fn prefix(&self, last: usize, end_time: f64) -> ReachSample {
        let grasp = self.grasp_time();
        ReachSample {
            trial_id: self.trial_id.clone(),
            times: self.times[..=last].to_vec(),
            positions: self.positions[..=last].to_vec(),
            dts: self.dts[..=last].to_vec(),
            end_time,
            window_end_offset: end_time - grasp,
            target_position: self.target_position,
            target_time: grasp - end_time,
        }
    }
}

pub(crate) fn first_dt(trial: &Trial, first: usize) -> f64 {
    let f = trial.frames();
    if first > 0 {
        f[first].t - f[first - 1].t
    } else {
        f[1].t - f[0].t
    }
}

fn sample_from_span(trial: &Trial, span: &WindowSpan) -> ReachSample {
    let frames = &trial.frames()[span.first..=span.last];
    let grasp = trial.grasp_time();
    let mut dts = Vec::with_capacity(frames.len());
    dts.push(first_dt(trial, span.first));
    dts.extend(frames.windows(2).map(|w| w[1].t - w[0].t));
    ReachSample {
        trial_id: trial.id().to_string(),
        times: frames.iter().map(|f| f.t).collect(),
        positions: frames.iter().map(|f| f.right.palm_center).collect(),
        dts,
        end_time: span.end_time,
        window_end_offset: span.end_time - grasp,
        target_position: trial.palm_at(grasp),
        target_time: grasp - span.end_time,
    }
}

/// Sliding-window samples of one trial.
pub fn build_reach_windows(trial: &Trial, policy: &WindowPolicy) -> Result<Vec<ReachSample>, WindowError> {
    Ok(plan_windows(trial, policy)?.iter().map(|s| sample_from_span(trial, s)).collect())
}

/// The single window covering the whole history up to grasp. With per-step
/// supervision it carries the targets of every shorter window sharing its
/// start.
pub fn full_reach_window(trial: &Trial) -> Result<ReachSample, WindowError> {
    let start = history_start(trial);
    let policy = WindowPolicy { stride: 1.0, min_len: (trial.grasp_time() - start).max(TIME_EPS) };
    let spans = plan_windows(trial, &policy)?;
    let span = spans.last().ok_or_else(|| WindowError::TrialTooShort { trial: trial.id().to_string() })?;
    Ok(sample_from_span(trial, span))
}

/// Windows of many trials, in trial order (built in parallel).
pub fn build_dataset_windows(trials: &[Trial], policy: &WindowPolicy) -> Result<Vec<ReachSample>, WindowError> {
    let per: Vec<_> = trials.par_iter().map(|t| build_reach_windows(t, policy)).collect::<Result<_, _>>()?;
    Ok(per.into_iter().flatten().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ReachModel {
    #[serde(rename = "MJT")]
    Mjt,
    #[serde(rename = "LSTM")]
    Lstm,
    #[serde(rename = "LSTM_MJT")]
    LstmMjt,
}

impl ReachModel {
    pub const ALL: [ReachModel; 3] = [ReachModel::Mjt, ReachModel::Lstm, ReachModel::LstmMjt];

    pub fn as_str(self) -> &'static str {
        match self {
            ReachModel::Mjt => "MJT",
            ReachModel::Lstm => "LSTM",
            ReachModel::LstmMjt => "LSTM_MJT",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReachPrediction {
    pub position: Vec3,
    /// Predicted time left until grasp (s, >= 0).
    pub time_remaining: f64,
    pub model: ReachModel,
}

/// Onset detection and fitting parameters of the MJT predictor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MjtSettings {
    pub savgol: SavgolSpec,
    pub rate: f64,
    pub onset_threshold: f64,
    pub debounce: usize,
    /// How far before the detected threshold crossing the movement start is
    /// searched (s).
    pub onset_search: f64,
    /// Also search start times after the crossing.
    pub search_after_crossing: bool,
}

impl Default for MjtSettings {
    fn default() -> Self {
        Self {
            savgol: SavgolSpec::velocity(1.0 / NOMINAL_RATE),
            rate: NOMINAL_RATE,
            onset_threshold: ONSET_THRESHOLD,
            debounce: ONSET_DEBOUNCE,
            onset_search: 0.4,
            search_after_crossing: true,
        }
    }
}

/// Mean observed position over `[from, t0]`, the resting position a start at
/// `t0` implies.
fn rest_position(obs: &[(f64, Vec3)], from: f64, t0: f64) -> Vec3 {
    let rest: Vec<Vec3> = obs.iter().filter(|o| o.0 >= from - TIME_EPS && o.0 <= t0 + TIME_EPS).map(|o| o.1).collect();
    if rest.is_empty() {
        return interpolate(obs, t0);
    }
    rest.iter().fold(Vec3::ZERO, |a, &p| a + p) * (1.0 / rest.len() as f64)
}

fn interpolate(obs: &[(f64, Vec3)], t: f64) -> Vec3 {
    let i = obs.partition_point(|&(ti, _)| ti <= t);
    if i == 0 {
        return obs[0].1;
    }
    if i >= obs.len() {
        return obs[obs.len() - 1].1;
    }
    let ((a, pa), (b, pb)) = (obs[i - 1], obs[i]);
    pa.lerp(pb, (t - a) / (b - a))
}

/// MJT fit with the movement start chosen by a one-dimensional search.
///
/// The 3 cm/s crossing lags the true start of a minimum-jerk reach, and on
/// noisy data it can fire during the rest before the movement. The start
/// time is therefore searched from `onset_search` seconds before the
/// crossing up to the last time that still leaves enough points to fit
/// (only up to the crossing when `search_after_crossing` is off), on a grid
/// of at most [`ONSET_GRID_STEP`] spacing refined by golden section to a
/// microsecond. For each candidate, `x0` is the mean observed position from
/// the earliest candidate up to that time and the fit is scored by its squared residual over the common set of observations
/// from the earliest candidate on, where times before the candidate start
/// count against the resting position `x0`.
pub fn fit_mjt_with_onset(obs: &[(f64, Vec3)], now: f64, settings: &MjtSettings) -> Result<MjtFit, ReachError> {
    let times: Vec<f64> = obs.iter().map(|o| o.0).collect();
    let points: Vec<Vec3> = obs.iter().map(|o| o.1).collect();
    let speed = speed_profile_points(&times, &points, &settings.savgol, settings.rate)?;
    let onset = detect_onset_with(&speed, settings.onset_threshold, settings.debounce)?;
    let crossing = speed.time(onset).clamp(times[0], times[times.len() - 1]);
    let last_known = points[points.len() - 1];
    let lo = (crossing - settings.onset_search).max(times[0]);
    let hi = if settings.search_after_crossing && times.len() >= MIN_POINTS {
        times[times.len() - MIN_POINTS].max(crossing)
    } else {
        crossing
    };
    let common = &obs[obs.partition_point(|o| o.0 < lo)..];

    let attempt = |t0: f64| -> Option<(f64, MjtFit)> {
        let fit = fit_mjt(obs, t0, rest_position(obs, lo, t0), last_known, now).ok()?;
        let cost: f64 = common.iter().map(|&(t, p)| (mjt_position(&fit.params, t) - p).norm_squared()).sum();
        Some((cost, fit))
    };
    let better = |a: &Option<(f64, MjtFit)>, b: &Option<(f64, MjtFit)>| match (a, b) {
        (Some(x), Some(y)) => x.0 < y.0,
        (Some(_), None) => true,
        _ => false,
    };

    if hi - lo <= TIME_EPS {
        return Ok(fit_mjt(obs, crossing, rest_position(obs, lo, crossing), last_known, now)?);
    }
    let grid = (((hi - lo) / ONSET_GRID_STEP).ceil() as usize).max(8);
    let h = (hi - lo) / grid as f64;
    let mut best_k = 0;
    let mut best = None;
    for k in 0..=grid {
        let r = attempt(lo + k as f64 * h);
        if better(&r, &best) {
            best = r;
            best_k = k;
        }
    }
    let center = lo + best_k as f64 * h;
    let (mut a, mut b) = ((center - h).max(lo), (center + h).min(hi));
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (attempt(c), attempt(d));
    for _ in 0..GOLDEN_MAX_ITER {
        if b - a <= GOLDEN_TOL {
            break;
        }
        if better(&fc, &fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = attempt(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = attempt(d);
        }
        if better(&fc, &best) {
            best = fc.clone();
        }
        if better(&fd, &best) {
            best = fd.clone();
        }
    }
    best.map(|(_, f)| f).ok_or(ReachError::Mjt(MjtError::NoFeasibleFit))
}

/// MJT prediction from the window's own observations.
pub fn predict_reach_mjt(sample: &ReachSample, settings: &MjtSettings) -> Result<ReachPrediction, ReachError> {
    let fit = fit_mjt_with_onset(&sample.observed(), sample.end_time, settings)?;
    Ok(ReachPrediction { position: fit.params.xf, time_remaining: fit.remaining(sample.end_time), model: ReachModel::Mjt })
}

/// MJT side inputs of one LSTM-MJT sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MjtInput {
    pub position: Vec3,
    pub time: f64,
    pub valid: bool,
}

impl MjtInput {
    /// The MJT prediction, or the last observed position and the time cap
    /// flagged invalid when the fit failed.
    pub fn from_result(result: &Result<ReachPrediction, ReachError>, sample: &ReachSample) -> Self {
        match result {
            Ok(p) => Self { position: p.position, time: p.time_remaining.min(TIME_CAP), valid: true },
            Err(_) => Self { position: sample.last_position(), time: TIME_CAP, valid: false },
        }
    }

    /// Branch inputs: the MJT end point relative to `last` (the window's
    /// last position) and the remaining time, each with the validity flag.
    pub fn statics(&self, last: Vec3) -> Vec<Vec<f64>> {
        let flag = if self.valid { 1.0 } else { 0.0 };
        let d = self.position - last;
        vec![vec![d.x, d.y, d.z, flag], vec![self.time, flag]]
    }
}

/// Layer widths of the reach networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReachArch {
    pub hidden: usize,
    pub dense: usize,
    pub position_branch: usize,
    pub time_branch: usize,
    pub fusion: usize,
}

impl Default for ReachArch {
    fn default() -> Self {
        Self { hidden: 64, dense: 16, position_branch: 16, time_branch: 8, fusion: 16 }
    }
}

impl ReachArch {
    /// Same layout with a different LSTM width.
    pub fn with_hidden(self, hidden: usize) -> Self {
        Self { hidden, ..self }
    }
}

/// `[P, dt]` -> LSTM -> dropout -> dense ReLU -> `[P_grasp, T_grasp]`.
pub fn lstm_spec(arch: &ReachArch) -> NetSpec {
    NetSpec { input_size: 4, hidden: arch.hidden, proj: Some(arch.dense), branches: vec![], body: vec![], output_size: 4 }
}

/// The LSTM branch plus dense ReLU branches on the MJT position (with
/// validity flag) and time (with flag), fused by one dense ReLU layer.
pub fn lstm_mjt_spec(arch: &ReachArch) -> NetSpec {
    NetSpec {
        input_size: 4,
        hidden: arch.hidden,
        proj: Some(arch.dense),
        branches: vec![BranchSpec { input: 4, units: arch.position_branch }, BranchSpec { input: 2, units: arch.time_branch }],
        body: vec![arch.fusion],
        output_size: 4,
    }
}

/// `w_p * MSE(position) + w_t * MAE(time)` per step, plus smoothness.
pub fn reach_loss(config: &TrainConfig) -> LossSpec {
    LossSpec {
        terms: vec![
            LossTerm { kind: LossKind::Mse, start: 0, end: 3, weight: config.loss_weights.position },
            LossTerm { kind: LossKind::Mae, start: 3, end: 4, weight: config.loss_weights.time },
        ],
        lambda_smooth: config.lambda_smooth,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trained {
    pub model: SequenceModel,
    pub history: Vec<EpochStats>,
}

pub(crate) fn fit_sequence_model(tag: &str, spec: NetSpec, seqs: &[SeqSample], loss: &LossSpec, config: &TrainConfig) -> Result<Trained, NeuralError> {
    if seqs.is_empty() {
        return Err(NeuralError::EmptyDataset);
    }
    let norm = fit_normalization(&spec, seqs);
    let mut model = SequenceModel::init(tag, spec, norm, config.seed)?;
    let history = train(&mut model, seqs, loss, config)?;
    Ok(Trained { model, history })
}

pub fn train_reach_lstm(samples: &[ReachSample], config: &TrainConfig, arch: &ReachArch) -> Result<Trained, ReachError> {
    let seqs: Vec<SeqSample> = samples.iter().map(|s| s.to_seq(vec![])).collect();
    Ok(fit_sequence_model(ReachModel::Lstm.as_str(), lstm_spec(arch), &seqs, &reach_loss(config), config)?)
}

pub fn train_reach_lstm_mjt(samples: &[ReachSample], mjt: &[MjtInput], config: &TrainConfig, arch: &ReachArch) -> Result<Trained, ReachError> {
    if samples.len() != mjt.len() {
        return Err(ReachError::MjtInputCount { expected: samples.len(), got: mjt.len() });
    }
    let seqs: Vec<SeqSample> = samples.iter().zip(mjt).map(|(s, m)| s.to_seq(m.statics(s.last_position()))).collect();
    Ok(fit_sequence_model(ReachModel::LstmMjt.as_str(), lstm_mjt_spec(arch), &seqs, &reach_loss(config), config)?)
}

fn model_kind(model: &SequenceModel) -> ReachModel {
    if model.spec.branches.is_empty() {
        ReachModel::Lstm
    } else {
        ReachModel::LstmMjt
    }
}

/// Network row at a step to a prediction at `end_time`: the displacement
/// is added to the step's position and the time since the step removed.
fn to_prediction(row: &[f64], at: Vec3, step_time: f64, end_time: f64, model: ReachModel) -> ReachPrediction {
    ReachPrediction {
        position: at + Vec3::new(row[0], row[1], row[2]),
        time_remaining: (row[3] - (end_time - step_time)).max(0.0),
        model,
    }
}

/// Eval-mode prediction at the window's last step. LSTM-MJT models need the
/// window's MJT inputs.
pub fn predict_reach(model: &SequenceModel, sample: &ReachSample, mjt: Option<&MjtInput>) -> Result<ReachPrediction, ReachError> {
    let statics = match (model.spec.branches.is_empty(), mjt) {
        (true, _) => vec![],
        (false, Some(m)) => m.statics(sample.last_position()),
        (false, None) => return Err(ReachError::MjtInputCount { expected: 1, got: 0 }),
    };
    let mut seq = sample.to_seq(statics);
    seq.targets.clear();
    let y = model.predict(&seq)?;
    let n = sample.steps();
    Ok(to_prediction(&y[y.len() - 4..], sample.positions[n - 1], sample.times[n - 1], sample.end_time, model_kind(model)))
}

/// LSTM predictions for prefixes of `full`, each given as its last step
/// index and window end time, from one forward pass. Equal to calling
/// [`predict_reach`] on each prefix because the network is causal and
/// prefixes share their first step.
pub fn predict_reach_prefixes(model: &SequenceModel, full: &ReachSample, ends: &[(usize, f64)]) -> Result<Vec<ReachPrediction>, ReachError> {
    if !model.spec.branches.is_empty() {
        return Err(ReachError::MjtInputCount { expected: ends.len(), got: 0 });
    }
    let mut seq = full.to_seq(vec![]);
    seq.targets.clear();
    let y = model.predict(&seq)?;
    Ok(ends
        .iter()
        .map(|&(k, end)| to_prediction(&y[4 * k..4 * k + 4], full.positions[k], full.times[k], end, ReachModel::Lstm))
        .collect())
}
