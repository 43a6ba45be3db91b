//! Subcommand drivers: merge flags into the configuration, run the stages
//! and write outputs.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::{info, warn};
use reachgrasp::features::{trial_features, FEATURE_NAMES};
use reachgrasp::numfmt::fmt_num;
use reachgrasp::reach::{build_reach_windows, fit_mjt_with_onset, WindowPolicy};
use reachgrasp::trajectory::{dataset_summary, load_trial, Dataset, SummaryStats};

use crate::artifacts::ModelArtifact;
use crate::check::{invariant_checks, quality_checks};
use crate::config::RunConfig;
use crate::report::{build_report, summary_text, CheckLine, SummaryHeader};
use crate::stages::{self, Manifest, Split, Subset, MANIFEST_FILE, SPLIT_FILE};
use crate::staging::{write_provenance, Staging};
use crate::{Command, Global};

/// Runs one subcommand; `Ok(false)` means a `--check` assertion failed.
pub fn run(global: &Global, command: Command) -> Result<bool> {
    let mut cfg = RunConfig::load(global.config.as_deref())?;
    if global.seed.is_some() {
        cfg.seed = global.seed;
    }
    if global.check && !matches!(command, Command::Pipeline { .. } | Command::Report { .. }) {
        warn!("--check only applies to pipeline and report; ignored");
    }
    match command {
        Command::Synth { users, trials, noise, jitter, user_bias, user_style, class_separation, both_hands } => {
            let s = &mut cfg.synth;
            set(&mut s.n_users, users);
            set(&mut s.trials_per_user, trials);
            set(&mut s.noise_sigma, noise);
            set(&mut s.jitter_sigma, jitter);
            set(&mut s.user_bias_sigma, user_bias);
            set(&mut s.user_style_sigma, user_style);
            set(&mut s.class_separation, class_separation);
            s.both_hands |= both_hands;
            cfg.resolve_seeds()?;
            let out = required_out(global)?;
            let staging = Staging::new(out, global.force)?;
            let ds = stages::synthesize(&cfg, staging.path())?;
            write_provenance(staging.path(), "synth", &cfg)?;
            let dir = staging.commit()?;
            info!("wrote {} trials to {}", ds.len(), dir.display());
            Ok(true)
        }
        Command::Inspect { dataset } => inspect(global, &cfg, &dataset),
        Command::Features { input, hands, kin } => {
            kin.apply(&mut cfg);
            set(&mut cfg.classify.hands, hands);
            features(global, &cfg, &input)
        }
        Command::FitMjt { trial, stride, min_len, kin } => {
            kin.apply(&mut cfg);
            let mut policy = cfg.reach.eval_windows;
            set(&mut policy.stride, stride);
            set(&mut policy.min_len, min_len);
            fit_mjt(global, &cfg, &trial, &policy)
        }
        Command::TrainReach { data, model, epochs, stride, subset, kin } => {
            kin.apply(&mut cfg);
            set(&mut cfg.reach.train.epochs, epochs);
            set(&mut cfg.reach.train_windows.stride, stride);
            cfg.reach.models = vec![model];
            cfg.resolve_seeds()?;
            let (ds, split) = load_split(&cfg, &data)?;
            let trials = split.trials(&ds, subset);
            let staging = Staging::new(required_out(global)?, global.force)?;
            let trained = stages::train_reach(model, &trials, &cfg)?;
            trained.artifact.save(staging.path(), &trained.history)?;
            finish(staging, "train-reach", &cfg, Some(&split))
        }
        Command::TrainPosture { data, model, lambda, epochs, subset } => {
            set(&mut cfg.posture.lambda, lambda);
            set(&mut cfg.posture.train.epochs, epochs);
            cfg.posture.models = vec![model];
            cfg.resolve_seeds()?;
            let (ds, split) = load_split(&cfg, &data)?;
            let trials = split.trials(&ds, subset);
            let staging = Staging::new(required_out(global)?, global.force)?;
            let trained = stages::train_posture(model, &trials, &cfg)?;
            trained.artifact.save(staging.path(), &trained.history)?;
            finish(staging, "train-posture", &cfg, Some(&split))
        }
        Command::Classify { data, classifier, cv, window, hands, folds, kin } => {
            kin.apply(&mut cfg);
            if let Some(c) = classifier {
                cfg.classify.classifiers = vec![c];
            }
            if let Some(c) = cv {
                cfg.classify.cv = vec![c];
            }
            set(&mut cfg.classify.window, window);
            set(&mut cfg.classify.hands, hands);
            set(&mut cfg.classify.folds, folds);
            cfg.resolve_seeds()?;
            let ds = stages::load(&data)?;
            let staging = Staging::new(required_out(global)?, global.force)?;
            let cls = stages::classify(&ds, &cfg, &cfg.classify.classifiers, &cfg.classify.cv)?;
            cls.write(staging.path())?;
            finish(staging, "classify", &cfg, None)
        }
        Command::Evaluate { data, models, subset } => {
            cfg.resolve_seeds()?;
            let (ds, split) = load_split(&cfg, &data)?;
            let trials = split.trials(&ds, subset);
            let artifacts: Vec<ModelArtifact> = models.iter().map(|m| ModelArtifact::load(m)).collect::<Result<_>>()?;
            let staging = Staging::new(required_out(global)?, global.force)?;
            let eval = stages::evaluate(&artifacts, &trials, &cfg)?;
            eval.write(staging.path())?;
            finish(staging, "evaluate", &cfg, Some(&split))
        }
        Command::Report { evals, classify, require } => report(global, &cfg, &evals, classify.as_deref(), &require),
        Command::Pipeline { data } => {
            if data.is_some() {
                cfg.dataset = data;
            }
            pipeline(global, cfg)
        }
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn required_out(global: &Global) -> Result<&Path> {
    global.out.as_deref().context("this command writes a directory: pass --out DIR")
}

fn finish(staging: Staging, command: &str, cfg: &RunConfig, split: Option<&Split>) -> Result<bool> {
    if let Some(split) = split {
        staging.write(SPLIT_FILE, serde_json::to_string_pretty(split)? + "\n")?;
    }
    write_provenance(staging.path(), command, cfg)?;
    let dir = staging.commit()?;
    info!("wrote {}", dir.display());
    Ok(true)
}

fn load_split(cfg: &RunConfig, data: &Path) -> Result<(Dataset, Split)> {
    let ds = stages::load(data)?;
    let split = Split::new(&ds, cfg.split.test_fraction, cfg.split_seed()?)?;
    Ok((ds, split))
}

/// Writes `name` under `--out`, or prints it when no output directory is
/// given.
fn emit(global: &Global, command: &str, cfg: &RunConfig, name: &str, bytes: Vec<u8>) -> Result<bool> {
    match &global.out {
        Some(out) => {
            let staging = Staging::new(out, global.force)?;
            staging.write(name, bytes)?;
            finish(staging, command, cfg, None)
        }
        None => {
            std::io::stdout().write_all(&bytes)?;
            Ok(true)
        }
    }
}

#[derive(serde::Serialize)]
struct Inspection {
    summary: SummaryStats,
    manifest: String,
}

fn inspect(global: &Global, cfg: &RunConfig, dir: &Path) -> Result<bool> {
    let ds = stages::load(dir)?;
    let summary = dataset_summary(&ds)?;
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest = if manifest_path.is_file() {
        let text = fs::read_to_string(&manifest_path)?;
        let m: Manifest = serde_json::from_str(&text).with_context(|| format!("parsing {}", manifest_path.display()))?;
        stages::verify_manifest(&ds, &m)?;
        format!("verified: {} trials, seed {}, config {}", m.trials.len(), m.seed, m.config_hash)
    } else {
        "absent".to_string()
    };
    let text = serde_json::to_string_pretty(&Inspection { summary, manifest })? + "\n";
    emit(global, "inspect", cfg, "summary.json", text.into_bytes())
}

fn features(global: &Global, cfg: &RunConfig, input: &Path) -> Result<bool> {
    let trials = if input.is_dir() { stages::load(input)?.trials().to_vec() } else { vec![load_trial(input)?] };
    let hands = cfg.classify.hands.hands();
    let savgol = cfg.kinematics.savgol()?;
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let mut header: Vec<String> = ["trial_id", "user_id", "object", "size", "task", "frame", "t"].map(String::from).to_vec();
    header.extend(FEATURE_NAMES.iter().map(|n| format!("right_{n}")));
    if hands == reachgrasp::features::Hands::Both {
        header.extend(FEATURE_NAMES.iter().map(|n| format!("left_{n}")));
    }
    w.write_record(&header)?;
    for trial in &trials {
        let feats = trial_features(trial, hands, &savgol, cfg.kinematics.rate).with_context(|| format!("trial {}", trial.id()))?;
        let m = trial.meta();
        for (i, (f, frame)) in feats.iter().zip(trial.frames()).enumerate() {
            let values = f.flattened();
            if values.len() + 7 != header.len() {
                bail!("trial {}: frame {i} lacks left-hand data", trial.id());
            }
            let mut row = vec![m.trial_id.clone(), m.user_id.clone(), m.object.clone(), m.size.as_str().into(), m.task.clone()];
            row.push(i.to_string());
            row.push(fmt_num(frame.t));
            row.extend(values.into_iter().map(fmt_num));
            w.write_record(&row)?;
        }
    }
    emit(global, "features", cfg, "features.csv", w.into_inner()?)
}

fn fit_mjt(global: &Global, cfg: &RunConfig, path: &Path, policy: &WindowPolicy) -> Result<bool> {
    let trial = load_trial(path)?;
    let settings = cfg.kinematics.mjt_settings()?;
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(["window_end_s", "xf_x", "xf_y", "xf_z", "tf_remaining", "residual_rms", "converged"])?;
    for s in build_reach_windows(&trial, policy)? {
        let (values, converged) = match fit_mjt_with_onset(&s.observed(), s.end_time, &settings) {
            Ok(f) => {
                let xf = f.params.xf;
                ([xf.x, xf.y, xf.z, f.remaining(s.end_time), f.residual_rms], f.converged)
            }
            Err(e) => {
                warn!("window ending at {} s: {e}", fmt_num(s.end_time));
                ([f64::NAN; 5], false)
            }
        };
        let mut row = vec![fmt_num(s.end_time)];
        row.extend(values.map(fmt_num));
        row.push(converged.to_string());
        w.write_record(&row)?;
    }
    emit(global, "fit-mjt", cfg, "fits.csv", w.into_inner()?)
}

fn report_header(cfg: &RunConfig, upstream: Vec<String>) -> Result<SummaryHeader> {
    let seed = cfg.require_seed()?;
    Ok(SummaryHeader {
        config_hash: cfg.hash(),
        seed,
        stage_seeds: vec![
            ("synth", cfg.synth.seed),
            ("split", cfg.split_seed()?),
            ("reach", cfg.reach.train.seed),
            ("posture", cfg.posture.train.seed),
            ("classify", cfg.classify_seed()?),
            ("report", cfg.report_seed()?),
        ],
        upstream,
    })
}

fn print_checks(checks: &[CheckLine]) -> bool {
    for c in checks {
        println!("{}", c.line());
    }
    checks.iter().all(|c| c.pass)
}

fn report(global: &Global, cfg: &RunConfig, evals: &[PathBuf], classify: Option<&Path>, require: &[String]) -> Result<bool> {
    let mut cfg = cfg.clone();
    cfg.resolve_seeds()?;
    let staging = Staging::new(required_out(global)?, global.force)?;
    let spec = cfg.report.curve_spec(cfg.report_seed()?);
    let data = build_report(evals, classify, require, &spec, staging.path())?;
    let mut upstream = Vec::new();
    for dir in evals.iter().map(PathBuf::as_path).chain(classify) {
        let hash = fs::read_to_string(dir.join("run.json"))
            .ok()
            .and_then(|t| serde_json::from_str::<serde_json::Value>(&t).ok())
            .and_then(|v| v["config_hash"].as_str().map(String::from))
            .unwrap_or_else(|| "unknown".into());
        upstream.push(format!("{} (config_hash {hash})", dir.display()));
    }
    let checks = if global.check {
        let mut c = crate::check::bucket_checks(&data, &spec);
        if cfg.check.quality {
            c.extend(quality_checks(&data, &spec, &cfg.check));
        }
        c
    } else {
        vec![]
    };
    staging.write("summary.txt", summary_text(&report_header(&cfg, upstream)?, &data, &checks))?;
    finish(staging, "report", &cfg, None)?;
    Ok(print_checks(&checks))
}

fn pipeline(global: &Global, mut cfg: RunConfig) -> Result<bool> {
    cfg.resolve_seeds()?;
    let staging = Staging::new(required_out(global)?, global.force)?;
    let ds = match &cfg.dataset {
        Some(dir) => stages::load(dir)?,
        None => stages::synthesize(&cfg, &staging.subdir("data")?)?,
    };
    let split = Split::new(&ds, cfg.split.test_fraction, cfg.split_seed()?)?;
    staging.write(SPLIT_FILE, serde_json::to_string_pretty(&split)? + "\n")?;
    let train = split.trials(&ds, Subset::Train);
    let test = split.trials(&ds, Subset::Test);

    let mut models = Vec::new();
    for &m in &cfg.reach.models {
        models.push(stages::train_reach(m, &train, &cfg)?);
    }
    for &m in &cfg.posture.models {
        models.push(stages::train_posture(m, &train, &cfg)?);
    }
    for m in &models {
        m.artifact.save(&staging.subdir(Path::new("models").join(m.artifact.dir_name()))?, &m.history)?;
    }
    let artifacts: Vec<ModelArtifact> = models.into_iter().map(|m| m.artifact).collect();
    let eval = stages::evaluate(&artifacts, &test, &cfg)?;
    let eval_dir = staging.subdir("eval")?;
    eval.write(&eval_dir)?;

    let cls = if cfg.classify.classifiers.is_empty() || cfg.classify.cv.is_empty() {
        None
    } else {
        let c = stages::classify(&ds, &cfg, &cfg.classify.classifiers, &cfg.classify.cv)?;
        c.write(&staging.subdir("classify")?)?;
        Some(c)
    };

    let spec = cfg.report.curve_spec(cfg.report_seed()?);
    let expected: Vec<String> = artifacts.iter().map(|a| format!("{}/{}", a.family(), a.tag())).collect();
    let report_dir = staging.subdir("report")?;
    let classify_dir = cls.as_ref().map(|_| staging.file("classify"));
    let data = build_report(&[eval_dir], classify_dir.as_deref(), &expected, &spec, &report_dir)?;
    let checks = if global.check {
        let mut c = invariant_checks(&ds, &split, &eval, cls.as_ref(), &data, &spec);
        if cfg.check.quality {
            c.extend(quality_checks(&data, &spec, &cfg.check));
        }
        c
    } else {
        vec![]
    };
    let upstream = vec![match &cfg.dataset {
        Some(d) => format!("dataset {}", d.display()),
        None => format!("synthesized dataset, {} trials (seed.synth)", ds.len()),
    }];
    fs::write(report_dir.join("summary.txt"), summary_text(&report_header(&cfg, upstream)?, &data, &checks))?;
    write_provenance(&report_dir, "pipeline", &cfg)?;
    finish(staging, "pipeline", &cfg, None)?;
    Ok(print_checks(&checks))
}
