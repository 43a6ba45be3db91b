//! The pipeline stages, shared by the individual subcommands and
//! `pipeline`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use log::info;
use rayon::prelude::*;
use reachgrasp::classify::{
    build_classification_samples, evaluate_cv, make_split, window_sweep_accuracy, CvResult, FrameWindow, LabeledSample,
    SplitPlan, Target,
};
use reachgrasp::neural::{Checkpoint, EpochStats, TrainConfig};
use reachgrasp::posture::{
    build_posture_dataset, full_posture_window, mean_step_displacement, predict_posture, train_posture_baseline,
    train_posture_lstm, train_posture_lstm_temporal, BaselineKind, PostureSample,
};
use reachgrasp::reach::{
    build_dataset_windows, full_reach_window, predict_reach, predict_reach_mjt, train_reach_lstm, train_reach_lstm_mjt,
    MjtInput, MjtSettings, ReachError, ReachPrediction, ReachSample,
};
use reachgrasp::report::{posture_errors, write_accuracy_csv, AccuracyRow};
use reachgrasp::rng::derive_seed;
use reachgrasp::trajectory::{load_dataset, synth_family, trial_file_name, write_dataset, Dataset, Trial};
use serde::{Deserialize, Serialize};

use crate::artifacts::{
    eval_file_name, posture_csv, reach_csv, EvalEntry, ModelArtifact, PostureRecord, ReachRecord, EVAL_INDEX,
};
use crate::config::{ClassifierName, PostureModelName, ReachModelName, RunConfig};
use crate::staging::write_file;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SPLIT_FILE: &str = "split.json";
const TIME_EPS: f64 = 1e-9;

/// Generation record of a synthesized dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    pub family: reachgrasp::trajectory::FamilyConfig,
    pub trials: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub trial_id: String,
    pub user_id: String,
    pub object: String,
    pub size: String,
    pub task: String,
    pub frames: usize,
    pub grasp_time: f64,
}

impl ManifestEntry {
    pub fn of(trial: &Trial) -> Self {
        let m = trial.meta();
        Self {
            file: trial_file_name(trial),
            trial_id: m.trial_id.clone(),
            user_id: m.user_id.clone(),
            object: m.object.clone(),
            size: m.size.as_str().into(),
            task: m.task.clone(),
            frames: trial.frames().len(),
            grasp_time: m.grasp_time,
        }
    }
}

/// Synthesizes the configured family (seeds must be resolved) and writes it
/// with its manifest into `dir`.
pub fn synthesize(config: &RunConfig, dir: &Path) -> Result<Dataset> {
    info!("synthesizing {} users x {} trials", config.synth.n_users, config.synth.trials_per_user);
    fs::create_dir_all(dir)?;
    write_dataset(&synth_family(&config.synth)?, dir)?;
    // Continue from the files so later stages see the rounded values on disk.
    let ds = load(dir)?;
    let manifest = Manifest {
        config_hash: config.hash(),
        seed: config.require_seed()?,
        family: config.synth.clone(),
        trials: ds.trials().iter().map(ManifestEntry::of).collect(),
    };
    write_file(&dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(ds)
}

pub fn load(dir: &Path) -> Result<Dataset> {
    let ds = load_dataset(dir).with_context(|| format!("loading dataset {}", dir.display()))?;
    info!("loaded {} trials from {}", ds.len(), dir.display());
    Ok(ds)
}

/// Checks a dataset against the manifest stored next to it.
pub fn verify_manifest(ds: &Dataset, manifest: &Manifest) -> Result<()> {
    let loaded: Vec<ManifestEntry> = ds.trials().iter().map(ManifestEntry::of).collect();
    if loaded.len() != manifest.trials.len() {
        bail!("manifest lists {} trials, directory holds {}", manifest.trials.len(), loaded.len());
    }
    let listed: BTreeMap<&str, &ManifestEntry> = manifest.trials.iter().map(|e| (e.trial_id.as_str(), e)).collect();
    for e in &loaded {
        match listed.get(e.trial_id.as_str()) {
            Some(m) if *m == e => {}
            Some(_) => bail!("trial {} differs from its manifest entry", e.trial_id),
            None => bail!("trial {} is not in the manifest", e.trial_id),
        }
    }
    Ok(())
}

/// Trial-level hold-out split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub seed: u64,
    pub test_fraction: f64,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

impl Split {
    /// Seeded permutation of the trials (ordered by a per-trial derived
    /// key); the first `round(n * fraction)` trials are held out, keeping at
    /// least one trial on each side.
    pub fn new(ds: &Dataset, test_fraction: f64, seed: u64) -> Result<Self> {
        let n = ds.len();
        if n < 2 {
            bail!("a train/test split needs at least 2 trials, found {n}");
        }
        if !(test_fraction > 0.0 && test_fraction < 1.0) {
            bail!("test fraction must lie in (0, 1), got {test_fraction}");
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&i| (derive_seed(seed, &[i as u64]), i));
        let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
        let ids = |idx: &[usize]| {
            let mut v: Vec<String> = idx.iter().map(|&i| ds.trials()[i].id().to_string()).collect();
            v.sort();
            v
        };
        Ok(Self { seed, test_fraction, test: ids(&order[..n_test]), train: ids(&order[n_test..]) })
    }

    pub fn trials(&self, ds: &Dataset, subset: Subset) -> Vec<Trial> {
        let keep: BTreeSet<&str> = match subset {
            Subset::All => return ds.trials().to_vec(),
            Subset::Train => self.train.iter().map(String::as_str).collect(),
            Subset::Test => self.test.iter().map(String::as_str).collect(),
        };
        ds.trials().iter().filter(|t| keep.contains(t.id())).cloned().collect()
    }

    /// Disjoint, exhaustive and non-empty with respect to `ds`.
    pub fn is_partition_of(&self, ds: &Dataset) -> bool {
        let train: BTreeSet<&str> = self.train.iter().map(String::as_str).collect();
        let test: BTreeSet<&str> = self.test.iter().map(String::as_str).collect();
        let all: BTreeSet<&str> = ds.trials().iter().map(|t| t.id()).collect();
        train.is_disjoint(&test)
            && !train.is_empty()
            && !test.is_empty()
            && train.len() + test.len() == all.len()
            && train.union(&test).copied().collect::<BTreeSet<_>>() == all
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Subset {
    All,
    Train,
    Test,
}

fn mjt_inputs(samples: &[ReachSample], settings: &MjtSettings) -> Vec<(Result<ReachPrediction, ReachError>, MjtInput)> {
    samples
        .par_iter()
        .map(|s| {
            let r = predict_reach_mjt(s, settings);
            let m = MjtInput::from_result(&r, s);
            (r, m)
        })
        .collect()
}

pub struct TrainedModel {
    pub artifact: ModelArtifact,
    pub history: Vec<EpochStats>,
}

pub fn train_reach(model: ReachModelName, trials: &[Trial], config: &RunConfig) -> Result<TrainedModel> {
    let mjt = config.kinematics.mjt_settings()?;
    let rc = &config.reach;
    let (network, history) = match model {
        ReachModelName::Mjt => (None, vec![]),
        ReachModelName::Lstm => {
            let full: Vec<ReachSample> = trials.iter().map(full_reach_window).collect::<Result<_, _>>()?;
            info!("training reach LSTM on {} full histories", full.len());
            let t = train_reach_lstm(&full, &rc.train, &rc.arch)?;
            (Some(Checkpoint::new(&t.model, Some(rc.train.clone()), rc.train.seed, t.history.clone())), t.history)
        }
        ReachModelName::LstmMjt => {
            let samples = build_dataset_windows(trials, &rc.train_windows)?;
            info!("fitting MJT side inputs for {} training windows", samples.len());
            let inputs: Vec<MjtInput> = mjt_inputs(&samples, &mjt).into_iter().map(|(_, m)| m).collect();
            info!("training reach LSTM-MJT on {} windows", samples.len());
            let t = train_reach_lstm_mjt(&samples, &inputs, &rc.train, &rc.arch)?;
            (Some(Checkpoint::new(&t.model, Some(rc.train.clone()), rc.train.seed, t.history.clone())), t.history)
        }
    };
    Ok(TrainedModel { artifact: ModelArtifact::Reach { model, mjt, network }, history })
}

fn baseline_kind(model: PostureModelName) -> Option<BaselineKind> {
    match model {
        PostureModelName::Linear => Some(BaselineKind::Linear),
        PostureModelName::Tree => Some(BaselineKind::Tree),
        PostureModelName::Forest => Some(BaselineKind::Forest),
        PostureModelName::Lstm | PostureModelName::LstmTemporal => None,
    }
}

pub fn train_posture(model: PostureModelName, trials: &[Trial], config: &RunConfig) -> Result<TrainedModel> {
    let pc = &config.posture;
    if let Some(kind) = baseline_kind(model) {
        let samples = build_posture_dataset(trials, &pc.baseline_windows)?;
        info!("training posture {} baseline on {} windows", kind.as_str(), samples.len());
        let baseline = train_posture_baseline(&samples, kind, &pc.baseline, pc.train.seed)?;
        return Ok(TrainedModel {
            artifact: ModelArtifact::Posture { model, network: None, baseline: Some(baseline) },
            history: vec![],
        });
    }
    let full: Vec<PostureSample> = trials.iter().map(full_posture_window).collect::<Result<_, _>>()?;
    let (t, cfg) = if model == PostureModelName::LstmTemporal {
        let cfg = TrainConfig { lambda_smooth: pc.lambda, ..pc.train.clone() };
        info!("training posture LSTM (lambda {}) on {} full histories", pc.lambda, full.len());
        (train_posture_lstm_temporal(&full, &cfg, &pc.arch)?, cfg)
    } else {
        let cfg = TrainConfig { lambda_smooth: 0.0, ..pc.train.clone() };
        info!("training posture LSTM on {} full histories", full.len());
        (train_posture_lstm(&full, &cfg, &pc.arch)?, cfg)
    };
    let network = Checkpoint::new(&t.model, Some(cfg.clone()), cfg.seed, t.history.clone());
    Ok(TrainedModel { artifact: ModelArtifact::Posture { model, network: Some(network), baseline: None }, history: t.history })
}

/// Evaluation records of every model plus the number of windows whose
/// inputs reached past their end (must be 0).
#[derive(Debug, Default)]
pub struct Evaluation {
    pub reach: BTreeMap<String, Vec<ReachRecord>>,
    pub posture: BTreeMap<String, Vec<PostureRecord>>,
    pub windows_checked: usize,
    pub leaking_windows: usize,
}

impl Evaluation {
    /// Writes one CSV per model and the index into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut index = Vec::new();
        for (tag, recs) in &self.reach {
            let file = eval_file_name("reach", tag);
            write_file(&dir.join(&file), reach_csv(recs)?)?;
            index.push(EvalEntry { family: "reach".into(), model: tag.clone(), file });
        }
        for (tag, recs) in &self.posture {
            let file = eval_file_name("posture", tag);
            write_file(&dir.join(&file), posture_csv(recs)?)?;
            index.push(EvalEntry { family: "posture".into(), model: tag.clone(), file });
        }
        write_file(&dir.join(EVAL_INDEX), serde_json::to_string_pretty(&index)? + "\n")
    }
}

fn checkpoint_model(network: &Option<Checkpoint>, tag: &str) -> Result<reachgrasp::neural::SequenceModel> {
    let cp = network.clone().with_context(|| format!("model {tag} has no network checkpoint"))?;
    Ok(cp.into_model()?)
}

pub fn evaluate(models: &[ModelArtifact], trials: &[Trial], config: &RunConfig) -> Result<Evaluation> {
    let mut eval = Evaluation::default();
    let reach: Vec<&ModelArtifact> = models.iter().filter(|m| m.family() == "reach").collect();
    let posture: Vec<&ModelArtifact> = models.iter().filter(|m| m.family() == "posture").collect();

    if !reach.is_empty() {
        let windows = build_dataset_windows(trials, &config.reach.eval_windows)?;
        eval.windows_checked += windows.len();
        eval.leaking_windows += windows.iter().filter(|w| w.times.iter().any(|&t| t > w.end_time + TIME_EPS)).count();
        let mut fits: BTreeMap<String, Vec<(Result<ReachPrediction, ReachError>, MjtInput)>> = BTreeMap::new();
        for m in &reach {
            let ModelArtifact::Reach { model, mjt, network } = m else { unreachable!() };
            let key = serde_json::to_string(mjt)?;
            if *model != ReachModelName::Lstm && !fits.contains_key(&key) {
                info!("fitting MJT on {} evaluation windows", windows.len());
                fits.insert(key.clone(), mjt_inputs(&windows, mjt));
            }
            let preds: Vec<(Vec3Pred, bool)> = match model {
                ReachModelName::Mjt => fits[&key]
                    .iter()
                    .map(|(r, inp)| match r {
                        Ok(p) => ((p.position, p.time_remaining), true),
                        Err(_) => ((inp.position, inp.time), false),
                    })
                    .collect(),
                ReachModelName::Lstm => {
                    let net = checkpoint_model(network, model.tag())?;
                    windows
                        .par_iter()
                        .map(|w| predict_reach(&net, w, None).map(|p| ((p.position, p.time_remaining), true)))
                        .collect::<Result<_, _>>()?
                }
                ReachModelName::LstmMjt => {
                    let net = checkpoint_model(network, model.tag())?;
                    windows
                        .par_iter()
                        .zip(fits[&key].par_iter())
                        .map(|(w, (_, inp))| predict_reach(&net, w, Some(inp)).map(|p| ((p.position, p.time_remaining), inp.valid)))
                        .collect::<Result<_, _>>()?
                }
            };
            let records = windows
                .iter()
                .zip(preds)
                .map(|(w, ((pos, time), valid))| ReachRecord {
                    trial_id: w.trial_id.clone(),
                    offset: w.window_end_offset,
                    pred: pos,
                    pred_time: time,
                    truth: w.target_position,
                    true_time: w.target_time,
                    mjt_valid: valid,
                })
                .collect();
            eval.reach.insert(model.tag().to_string(), records);
        }
    }

    if !posture.is_empty() {
        let windows = build_posture_dataset(trials, &config.posture.eval_windows)?;
        eval.windows_checked += windows.len();
        eval.leaking_windows += windows.iter().filter(|w| w.times.iter().any(|&t| t > w.end_time + TIME_EPS)).count();
        for m in &posture {
            let ModelArtifact::Posture { model, network, baseline } = m else { unreachable!() };
            let records: Vec<PostureRecord> = match baseline {
                Some(b) => windows
                    .par_iter()
                    .map(|w| {
                        let (mse, euclid) = posture_errors(&b.predict(w), &w.targets);
                        PostureRecord { trial_id: w.trial_id.clone(), offset: w.window_end_offset, mse, euclid, step_displacement: f64::NAN }
                    })
                    .collect(),
                None => {
                    let net = checkpoint_model(network, model.tag())?;
                    windows
                        .par_iter()
                        .map(|w| {
                            let p = predict_posture(&net, w)?;
                            let (mse, euclid) = posture_errors(&p.fingers, &w.targets);
                            Ok(PostureRecord {
                                trial_id: w.trial_id.clone(),
                                offset: w.window_end_offset,
                                mse,
                                euclid,
                                step_displacement: mean_step_displacement(&p.steps),
                            })
                        })
                        .collect::<Result<_, reachgrasp::posture::PostureError>>()?
                }
            };
            eval.posture.insert(model.tag().to_string(), records);
        }
    }
    Ok(eval)
}

type Vec3Pred = (reachgrasp::Vec3, f64);

/// One cross-validated classifier run.
pub struct CvRun {
    pub name: String,
    pub plan: SplitPlan,
    pub result: CvResult,
}

pub struct Classification {
    pub samples: Vec<LabeledSample>,
    pub runs: Vec<CvRun>,
    pub sweep: Option<Vec<AccuracyRow>>,
}

pub fn classify(ds: &Dataset, config: &RunConfig, classifiers: &[ClassifierName], cvs: &[crate::config::CvName]) -> Result<Classification> {
    let cc = &config.classify;
    let window = cc.frame_window()?;
    let savgol = config.kinematics.savgol()?;
    let hands = cc.hands.hands();
    let seed = config.classify_seed()?;
    let samples = build_classification_samples(ds, window, hands, &savgol, config.kinematics.rate)?;
    info!("classifying {} frames ({} trials, window {window})", samples.len(), ds.len());
    let mut runs = Vec::new();
    for &cv in cvs {
        let kind = cc.split(cv);
        let plan = make_split(&samples, kind, seed)?;
        for &c in classifiers {
            let spec = cc.spec(c);
            let result = evaluate_cv(&samples, &plan, &spec)?;
            let name = format!("{}/{}", name_of(c), kind.as_str());
            info!("{name}: overall accuracy {:.3}", result.overall);
            runs.push(CvRun { name, plan: plan.clone(), result });
        }
    }
    let sweep = match &cc.sweep {
        Some(sw) => {
            let windows = FrameWindow::sweep(sw.width, sw.count);
            let learner = cc.spec(sw.classifier);
            Some(window_sweep_accuracy(ds, &windows, &learner, hands, &savgol, config.kinematics.rate, cc.folds, seed)?)
        }
        None => None,
    };
    Ok(Classification { samples, runs, sweep })
}

pub fn name_of(c: ClassifierName) -> &'static str {
    match c {
        ClassifierName::Tree => "tree",
        ClassifierName::Forest => "forest",
        ClassifierName::Knn => "knn",
    }
}

pub fn confusion_file_name(run: &str, target: Target) -> String {
    format!("confusion_{}_{}.csv", run.replace('/', "_"), target.as_str())
}

impl Classification {
    pub fn write(&self, dir: &Path) -> Result<()> {
        let rows: Vec<AccuracyRow> = self.runs.iter().map(|r| r.result.row(&r.name)).collect();
        let mut buf = Vec::new();
        write_accuracy_csv(&rows, &mut buf)?;
        write_file(&dir.join("accuracy.csv"), buf)?;
        for r in &self.runs {
            for (t, cm) in &r.result.confusion {
                let mut buf = Vec::new();
                cm.write_csv(&mut buf)?;
                write_file(&dir.join(confusion_file_name(&r.name, *t)), buf)?;
            }
        }
        if let Some(sweep) = &self.sweep {
            let mut buf = Vec::new();
            write_accuracy_csv(sweep, &mut buf)?;
            write_file(&dir.join("window_sweep.csv"), buf)?;
        }
        Ok(())
    }
}
