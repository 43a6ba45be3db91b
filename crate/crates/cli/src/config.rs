//! Run configuration: a JSON document merged from defaults, an optional
//! config file and command-line flags, identified by a SHA-256 digest of
//! its canonical form.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use reachgrasp::cart::{ForestParams, TreeParams};
use reachgrasp::classify::{ClassifierSpec, FrameWindow, SplitKind};
use reachgrasp::features::Hands;
use reachgrasp::kinematics::{SavgolSpec, NOMINAL_RATE, ONSET_DEBOUNCE, ONSET_THRESHOLD};
use reachgrasp::neural::{LossWeights, TrainConfig};
use reachgrasp::posture::{BaselineParams, PostureArch, DEFAULT_LAMBDA};
use reachgrasp::reach::{MjtSettings, ReachArch, WindowPolicy};
use reachgrasp::report::CurveSpec;
use reachgrasp::rng::derive_seed;
use reachgrasp::trajectory::FamilyConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Seed-path labels of the pipeline stages.
pub mod stage {
    pub const SYNTH: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const REACH: u64 = 3;
    pub const POSTURE: u64 = 4;
    pub const CLASSIFY: u64 = 5;
    pub const REPORT: u64 = 6;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KinematicsConfig {
    /// Savitzky-Golay window (samples, odd).
    pub sg_window: usize,
    /// Savitzky-Golay polynomial order.
    pub sg_order: usize,
    /// Movement-onset speed threshold (m/s).
    pub onset_threshold: f64,
    /// Resampling rate for differentiation (Hz).
    pub rate: f64,
}

impl Default for KinematicsConfig {
    fn default() -> Self {
        Self { sg_window: 7, sg_order: 3, onset_threshold: ONSET_THRESHOLD, rate: NOMINAL_RATE }
    }
}

impl KinematicsConfig {
    pub fn savgol(&self) -> Result<SavgolSpec> {
        Ok(SavgolSpec::new(self.sg_window, self.sg_order, 1, 1.0 / self.rate)?)
    }

    pub fn mjt_settings(&self) -> Result<MjtSettings> {
        Ok(MjtSettings {
            savgol: self.savgol()?,
            rate: self.rate,
            onset_threshold: self.onset_threshold,
            debounce: ONSET_DEBOUNCE,
            ..MjtSettings::default()
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    /// Fraction of trials held out for evaluation.
    pub test_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { test_fraction: 0.2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ReachModelName {
    Mjt,
    Lstm,
    LstmMjt,
}

impl ReachModelName {
    pub fn tag(self) -> &'static str {
        match self {
            ReachModelName::Mjt => "MJT",
            ReachModelName::Lstm => "LSTM",
            ReachModelName::LstmMjt => "LSTM_MJT",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum PostureModelName {
    Lstm,
    LstmTemporal,
    Linear,
    Tree,
    Forest,
}

impl PostureModelName {
    pub fn tag(self) -> &'static str {
        match self {
            PostureModelName::Lstm => "LSTM",
            PostureModelName::LstmTemporal => "LSTM_TEMPORAL",
            PostureModelName::Linear => "LINEAR",
            PostureModelName::Tree => "TREE",
            PostureModelName::Forest => "FOREST",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReachConfig {
    pub models: Vec<ReachModelName>,
    pub arch: ReachArch,
    pub train: TrainConfig,
    /// Windows of the LSTM-MJT training set (the LSTM trains on full
    /// histories, which contain every shorter window).
    pub train_windows: WindowPolicy,
    pub eval_windows: WindowPolicy,
}

impl Default for ReachConfig {
    fn default() -> Self {
        Self {
            models: vec![ReachModelName::Mjt, ReachModelName::Lstm, ReachModelName::LstmMjt],
            arch: ReachArch::default(),
            train: tuned_reach_training(),
            train_windows: WindowPolicy::evaluation(),
            eval_windows: WindowPolicy::evaluation(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostureConfig {
    pub models: Vec<PostureModelName>,
    pub arch: PostureArch,
    /// Shared by both LSTM variants; `lambda_smooth` is forced to 0 for the
    /// plain one and replaced by `lambda` for the temporal one.
    pub train: TrainConfig,
    pub lambda: f64,
    pub baseline: BaselineParams,
    /// Windows of the fixed-length baseline training set.
    pub baseline_windows: WindowPolicy,
    pub eval_windows: WindowPolicy,
}

impl Default for PostureConfig {
    fn default() -> Self {
        Self {
            models: vec![
                PostureModelName::Lstm,
                PostureModelName::LstmTemporal,
                PostureModelName::Linear,
                PostureModelName::Tree,
                PostureModelName::Forest,
            ],
            arch: PostureArch::default(),
            train: tuned_posture_training(),
            lambda: DEFAULT_LAMBDA,
            baseline: BaselineParams { forest: ForestParams { min_samples_leaf: 10, ..ForestParams::default() }, ..BaselineParams::default() },
            baseline_windows: WindowPolicy::evaluation(),
            eval_windows: WindowPolicy::evaluation(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierName {
    Tree,
    Forest,
    Knn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum CvName {
    Kfold,
    Louo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum HandsName {
    Right,
    Both,
}

impl HandsName {
    pub fn hands(self) -> Hands {
        match self {
            HandsName::Right => Hands::Right,
            HandsName::Both => Hands::Both,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub classifier: ClassifierName,
    /// Frames per window.
    pub width: usize,
    pub count: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { classifier: ClassifierName::Tree, width: 10, count: 6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifyConfig {
    pub classifiers: Vec<ClassifierName>,
    pub cv: Vec<CvName>,
    pub folds: usize,
    /// Frame offsets before grasp, written `nearest..farthest`.
    pub window: String,
    pub hands: HandsName,
    pub tree: TreeParams,
    pub forest: ForestParams,
    /// Accuracy per receding frame window; `None` skips the sweep.
    pub sweep: Option<SweepConfig>,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        Self {
            classifiers: vec![ClassifierName::Tree, ClassifierName::Forest, ClassifierName::Knn],
            cv: vec![CvName::Kfold, CvName::Louo],
            folds: 5,
            window: "-1..-10".into(),
            hands: HandsName::Right,
            tree: TreeParams::default(),
            forest: ForestParams::default(),
            sweep: Some(SweepConfig::default()),
        }
    }
}

impl ClassifyConfig {
    pub fn frame_window(&self) -> Result<FrameWindow> {
        Ok(self.window.parse()?)
    }

    pub fn spec(&self, name: ClassifierName) -> ClassifierSpec {
        match name {
            ClassifierName::Tree => ClassifierSpec::Tree(self.tree),
            ClassifierName::Forest => ClassifierSpec::Forest(self.forest),
            ClassifierName::Knn => ClassifierSpec::Knn,
        }
    }

    pub fn split(&self, cv: CvName) -> SplitKind {
        match cv {
            CvName::Kfold => SplitKind::Kfold { k: self.folds },
            CvName::Louo => SplitKind::LeaveOneUserOut,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    /// Bucket width (s).
    pub bucket_width: f64,
    /// Bucketed span of window-end offsets (s, before grasp).
    pub span: (f64, f64),
    pub resamples: usize,
    pub confidence: f64,
}

impl Default for ReportConfig {
    fn default() -> Self {
        let d = CurveSpec::default();
        Self { bucket_width: d.bucket_width, span: d.span, resamples: d.resamples, confidence: d.confidence }
    }
}

impl ReportConfig {
    pub fn curve_spec(&self, seed: u64) -> CurveSpec {
        CurveSpec { bucket_width: self.bucket_width, span: self.span, resamples: self.resamples, confidence: self.confidence, seed }
    }
}

/// Thresholds asserted by `--check`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckConfig {
    /// Assert model-quality thresholds; invariants are always asserted.
    pub quality: bool,
    /// Largest LSTM distance error in the bucket starting at `near_bucket` (m).
    pub lstm_distance_max: f64,
    /// Largest LSTM absolute time error in that bucket (s).
    pub lstm_time_max: f64,
    /// Start of the bucket compared against the earliest one (s).
    pub near_bucket: f64,
    /// Allowed relative change of final-step posture MSE between the
    /// temporal and plain LSTM.
    pub posture_mse_tolerance: f64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self { quality: true, lstm_distance_max: 0.05, lstm_time_max: 0.1, near_bucket: -0.5, posture_mse_tolerance: 0.2 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Base seed; every stochastic stage draws from a seed derived from it.
    pub seed: Option<u64>,
    /// Existing dataset directory; when absent the pipeline synthesizes one.
    pub dataset: Option<PathBuf>,
    pub synth: FamilyConfig,
    pub kinematics: KinematicsConfig,
    pub split: SplitConfig,
    pub reach: ReachConfig,
    pub posture: PostureConfig,
    pub classify: ClassifyConfig,
    pub report: ReportConfig,
    pub check: CheckConfig,
}

impl RunConfig {
    /// Defaults overlaid with the file at `path`, if any.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
            }
        }
    }

    pub fn require_seed(&self) -> Result<u64> {
        match self.seed {
            Some(s) => Ok(s),
            None => bail!("this command is stochastic: pass --seed or set \"seed\" in the config file"),
        }
    }

    /// Writes the stage seeds derived from the base seed into the stage
    /// sections, so the stored config shows what actually ran.
    pub fn resolve_seeds(&mut self) -> Result<()> {
        let seed = self.require_seed()?;
        self.synth.seed = derive_seed(seed, &[stage::SYNTH]);
        self.reach.train.seed = derive_seed(seed, &[stage::REACH]);
        self.posture.train.seed = derive_seed(seed, &[stage::POSTURE]);
        Ok(())
    }

    pub fn split_seed(&self) -> Result<u64> {
        Ok(derive_seed(self.require_seed()?, &[stage::SPLIT]))
    }

    pub fn classify_seed(&self) -> Result<u64> {
        Ok(derive_seed(self.require_seed()?, &[stage::CLASSIFY]))
    }

    pub fn report_seed(&self) -> Result<u64> {
        Ok(derive_seed(self.require_seed()?, &[stage::REPORT]))
    }

    /// Canonical JSON: keys sorted, no insignificant whitespace.
    pub fn canonical_json(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        serde_json::to_string(&value).expect("value serializes")
    }

    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn pretty_json(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        serde_json::to_string_pretty(&value).expect("value serializes") + "\n"
    }
}

/// Reach network training tuned on the synthetic family; smaller batches and
/// a heavier position loss than the library defaults.
pub fn tuned_reach_training() -> TrainConfig {
    TrainConfig {
        learning_rate: 0.005,
        epochs: 60,
        batch_size: 16,
        loss_weights: LossWeights { time: 1.0, position: 30.0 },
        ..TrainConfig::default()
    }
}

/// Posture network training shared by both LSTM variants.
pub fn tuned_posture_training() -> TrainConfig {
    TrainConfig { learning_rate: 0.005, epochs: 30, batch_size: 16, ..TrainConfig::default() }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_ignores_formatting_and_key_order() {
        let cfg = RunConfig { seed: Some(3), ..RunConfig::default() };
        let reparsed: RunConfig = serde_json::from_str(&cfg.pretty_json()).unwrap();
        assert_eq!(cfg.hash(), reparsed.hash());
        let changed = RunConfig { seed: Some(4), ..cfg.clone() };
        assert_ne!(cfg.hash(), changed.hash());
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg: RunConfig = serde_json::from_str(r#"{"seed": 9, "split": {"test_fraction": 0.5}}"#).unwrap();
        assert_eq!(cfg.seed, Some(9));
        assert_eq!(cfg.split.test_fraction, 0.5);
        assert_eq!(cfg.reach, ReachConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"sede": 1}"#).is_err());
    }

    #[test]
    fn stochastic_commands_need_a_seed() {
        let mut cfg = RunConfig::default();
        assert!(cfg.resolve_seeds().is_err());
        cfg.seed = Some(1);
        cfg.resolve_seeds().unwrap();
        assert_ne!(cfg.reach.train.seed, cfg.posture.train.seed);
    }
}
