//! Exit criteria of the toolkit, one PASS/FAIL line each. Runs as a plain
//! binary (`harness = false`) so the lines always print; exits non-zero if
//! any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use reachgrasp::classify::{evaluate_cv, make_split, ClassifierSpec, LabeledSample, SplitKind, SplitPlan, Target};
use reachgrasp::kinematics::{savgol_coefficients, savgol_filter, speed_profile_points, SavgolSpec};
use reachgrasp::mjt::fit_mjt;
use reachgrasp::neural::{fit_normalization, grad_check, SequenceModel, TrainConfig, DEFAULT_EPS};
use reachgrasp::posture::{build_posture_windows, full_posture_window, posture_loss, posture_spec, PostureArch};
use reachgrasp::reach::{
    build_reach_windows, fit_mjt_with_onset, full_reach_window, lstm_mjt_spec, lstm_spec, predict_reach_mjt, reach_loss,
    MjtInput, MjtSettings, ReachArch, WindowPolicy,
};
use reachgrasp::report::{curves_by_model, CurveSpec, Metric};
use reachgrasp::trajectory::{synth_family, FamilyConfig};
use reachgrasp::Vec3;

const RATE: f64 = 60.0;
const XF: Vec3 = Vec3::new(0.3, 0.2, 0.1);
const TF: f64 = 1.2;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn timed(limit: Duration, elapsed: Duration) -> (bool, String) {
    (elapsed < limit, format!("{:.1} s (limit {} s)", elapsed.as_secs_f64(), limit.as_secs()))
}

/// Closed-form rest-to-rest quintic from the origin to `XF` over `TF`.
fn quintic(t: f64) -> Vec3 {
    let tau = (t / TF).clamp(0.0, 1.0);
    let s = tau.powi(3) * (10.0 - 15.0 * tau + 6.0 * tau * tau);
    Vec3::new(XF.x * s, XF.y * s, XF.z * s)
}

fn quintic_frames(rest: f64, until: f64) -> Vec<(f64, Vec3)> {
    let n = ((rest + until) * RATE).round() as usize;
    (0..=n).map(|i| i as f64 / RATE).map(|t| (t, quintic(t - rest))).collect()
}

fn mjt_exact() -> Outcome {
    let start = Instant::now();
    let total = (TF * RATE).round() as usize + 1;
    let obs: Vec<(f64, Vec3)> = quintic_frames(0.0, TF).into_iter().take(total / 2).collect();
    let (now, last) = *obs.last().unwrap();
    let fit = match fit_mjt(&obs, 0.0, Vec3::ZERO, last, now) {
        Ok(f) => f,
        Err(e) => return outcome(false, format!("fit failed: {e}")),
    };
    let dx = fit.params.xf.distance(XF);
    let dt = (fit.params.tf - TF).abs();
    let (fast, time) = timed(Duration::from_secs(1), start.elapsed());
    outcome(dx <= 1e-3 && dt <= 0.01 && fast, format!("|xf error| {dx:.2e} m, |tf error| {dt:.2e} s, {time}"))
}

fn noisy(frames: &[(f64, Vec3)], noise: &Normal<f64>, rng: &mut ChaCha8Rng) -> Vec<(f64, Vec3)> {
    frames.iter().map(|&(t, p)| (t, Vec3::new(p.x + noise.sample(rng), p.y + noise.sample(rng), p.z + noise.sample(rng)))).collect()
}

fn p95(mut errors: Vec<f64>) -> f64 {
    errors.sort_by(f64::total_cmp);
    errors[(0.95 * errors.len() as f64).ceil() as usize - 1]
}

/// `fit_mjt` from the generator's start, plus (reported, not scored) the
/// same reach after a 0.5 s rest with the start found by onset detection.
fn mjt_noisy() -> Outcome {
    let start = Instant::now();
    let noise = Normal::new(0.0, 0.005).unwrap();
    let frames = quintic_frames(0.0, TF);
    let keep = (3 * frames.len()) / 4;
    let rest = 0.5;
    let rested = quintic_frames(rest, TF);
    let rested_keep = rested.len() - frames.len() + keep;
    let settings = MjtSettings::default();
    let (mut errors, mut detected) = (Vec::new(), Vec::new());
    for rep in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + rep);
        let obs = noisy(&frames[..keep], &noise, &mut rng);
        let (now, last) = *obs.last().unwrap();
        errors.push(match fit_mjt(&obs, 0.0, Vec3::ZERO, last, now) {
            Ok(f) => f.params.xf.distance(XF),
            Err(_) => f64::INFINITY,
        });
        let obs = noisy(&rested[..rested_keep], &noise, &mut rng);
        let now = obs.last().unwrap().0;
        detected.push(fit_mjt_with_onset(&obs, now, &settings).map_or(f64::INFINITY, |f| f.params.xf.distance(XF)));
    }
    let (p, d) = (p95(errors), p95(detected));
    let (fast, time) = timed(Duration::from_secs(30), start.elapsed());
    outcome(
        p <= 0.02 && fast,
        format!("95th percentile |xf error| {p:.4} m over 100 runs (with detected onset after rest: {d:.4} m), {time}"),
    )
}

fn savgol_exactness() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let dt = 1.0 / RATE;
    for (window, order) in [(5, 2), (7, 3), (9, 4), (11, 3)] {
        for deriv in 0..=1 {
            let spec = SavgolSpec::new(window, order, deriv, dt).unwrap();
            for _ in 0..5 {
                let coef: Vec<f64> = (0..=order).map(|_| rng.random_range(-2.0..2.0)).collect();
                // Value of the deriv-th derivative of sum c_k t^k.
                let exact = |t: f64| -> f64 {
                    coef.iter()
                        .enumerate()
                        .filter(|(k, _)| *k >= deriv)
                        .map(|(k, c)| c * (k - deriv + 1..=k).map(|j| j as f64).product::<f64>() * t.powi((k - deriv) as i32))
                        .sum()
                };
                let values: Vec<f64> = (0..40).map(|i| exact_poly(&coef, i as f64 * dt)).collect();
                let out = savgol_filter(&values, &spec).unwrap();
                for i in window / 2..40 - window / 2 {
                    worst = worst.max((out[i] - exact(i as f64 * dt)).abs());
                }
            }
        }
    }
    let kernel = savgol_coefficients(&SavgolSpec::new(5, 2, 1, 1.0).unwrap()).unwrap();
    let kernel_err = kernel.iter().zip([-2.0, -1.0, 0.0, 1.0, 2.0]).map(|(a, b)| (a - b / 10.0).abs()).fold(0.0, f64::max);
    outcome(
        worst <= 1e-9 && kernel_err <= 1e-12,
        format!("max interior error {worst:.1e}, 5/2/1 kernel error {kernel_err:.1e}"),
    )
}

fn exact_poly(coef: &[f64], t: f64) -> f64 {
    coef.iter().rev().fold(0.0, |acc, c| acc * t + c)
}

fn peak_speed() -> Outcome {
    let frames = quintic_frames(0.3, TF + 0.3);
    let times: Vec<f64> = frames.iter().map(|f| f.0).collect();
    let points: Vec<Vec3> = frames.iter().map(|f| f.1).collect();
    let speed = speed_profile_points(&times, &points, &SavgolSpec::velocity(1.0 / RATE), RATE).unwrap();
    let peak = speed.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let expected = 1.875 * XF.norm() / TF;
    let rel = (peak - expected).abs() / expected;
    outcome(rel <= 0.01, format!("peak {peak:.4} m/s vs {expected:.4} m/s ({:.3}%)", 100.0 * rel))
}

/// Each check runs on one 23-step window of a synthetic trial, with
/// normalization fitted on the windows of several trials as in training.
/// The check point is made generic: parameters get N(0, 0.05) noise (zero
/// biases would leave ReLU units sitting exactly on their kink) and targets
/// sit 0.01 off the predictions, clear of the MAE kink.
fn gradient_checks() -> Outcome {
    let start = Instant::now();
    let ds = synth_family(&FamilyConfig { n_users: 2, trials_per_user: 4, seed: 11, ..Default::default() }).unwrap();
    let mut reach_plain = Vec::new();
    let mut reach_mjt = Vec::new();
    let mut posture = Vec::new();
    for trial in ds.trials() {
        let full = full_reach_window(trial).unwrap();
        let steps = 23.min(full.steps());
        let reach = full.prefix(steps - 1, full.times[steps - 1]);
        let mjt = MjtInput::from_result(&predict_reach_mjt(&reach, &MjtSettings::default()), &reach);
        reach_plain.push(reach.to_seq(vec![]));
        reach_mjt.push(reach.to_seq(mjt.statics(reach.last_position())));
        let mut p = full_posture_window(trial).unwrap();
        p.times.truncate(steps);
        p.vectors.truncate(steps);
        p.dts.truncate(steps);
        posture.push(p.to_seq());
    }
    let arch = ReachArch::default().with_hidden(8);
    let posture_arch = PostureArch { hidden: 8, dense: 8 };
    let train = TrainConfig::default();
    let cases = [
        ("reach LSTM", lstm_spec(&arch), &reach_plain, reach_loss(&train)),
        ("reach LSTM-MJT", lstm_mjt_spec(&arch), &reach_mjt, reach_loss(&train)),
        ("posture LSTM", posture_spec(&posture_arch), &posture, posture_loss(0.0)),
        ("posture LSTM smooth", posture_spec(&posture_arch), &posture, posture_loss(0.1)),
    ];
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (i, (name, spec, samples, loss)) in cases.into_iter().enumerate() {
        let norm = fit_normalization(&spec, samples);
        let mut model = SequenceModel::init(name, spec, norm, 40 + i as u64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7 + i as u64);
        let jitter = Normal::new(0.0, 0.05).unwrap();
        for p in model.params.iter_mut() {
            *p += jitter.sample(&mut rng);
        }
        let mut sample = samples[0].clone();
        let y = model.predict(&sample).unwrap();
        for (k, (t, p)) in sample.targets.iter_mut().zip(&y).enumerate() {
            *t = p + if k % 3 == 0 { -0.01 } else { 0.01 };
        }
        let r = grad_check(&model, &sample, &loss, None, DEFAULT_EPS);
        worst = worst.max(r.max_rel_error);
        parts.push(format!("{name} {:.1e}", r.max_rel_error));
    }
    let (fast, time) = timed(Duration::from_secs(120), start.elapsed());
    outcome(worst <= 1e-4 && fast, format!("{}; {time}", parts.join(", ")))
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_reachgrasp")
}

fn run_pipeline(config: &str, out: &Path, threads: usize) -> Result<String, String> {
    let dir = out.parent().unwrap();
    let cfg_path = dir.join(format!("{}.json", out.file_name().unwrap().to_string_lossy()));
    fs::write(&cfg_path, config).unwrap();
    let res = Command::new(bin())
        .args(["pipeline", "--check", "--threads", &threads.to_string(), "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(out)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    let stdout = String::from_utf8_lossy(&res.stdout).into_owned();
    match res.status.code() {
        Some(0) | Some(1) => Ok(stdout),
        _ => Err(format!("pipeline failed: {}", String::from_utf8_lossy(&res.stderr).trim())),
    }
}

/// `(window_end_offset, value)` pairs of one column of an evaluation CSV.
fn eval_column(path: &Path, column: &str) -> Vec<(f64, f64)> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let h = r.headers().unwrap().clone();
    let oi = h.iter().position(|c| c == "window_end_offset").unwrap();
    let ci = h.iter().position(|c| c == column).unwrap();
    r.records().map(|rec| rec.unwrap()).map(|rec| (rec[oi].parse().unwrap(), rec[ci].parse().unwrap())).collect()
}

/// Mean over records whose window ends in `[lo, lo + 0.25)`.
fn bucket_mean(records: &[(f64, f64)], lo: f64) -> Option<f64> {
    let v: Vec<f64> = records.iter().filter(|(o, _)| *o >= lo && *o < lo + 0.25).map(|r| r.1).collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("none".into(), |v| format!("{v:.4}"))
}

const FAMILY: &str = r#""seed": 1, "synth": {"n_users": 10, "trials_per_user": 50}"#;

fn reach_family(work: &Path) -> (Outcome, Outcome) {
    let start = Instant::now();
    let out = work.join("reach");
    let config = format!(
        r#"{{{FAMILY}, "reach": {{"models": ["mjt", "lstm"]}}, "posture": {{"models": []}}, "classify": {{"classifiers": []}}}}"#
    );
    if let Err(e) = run_pipeline(&config, &out, available_threads()) {
        return (outcome(false, e.clone()), outcome(false, e));
    }
    let (fast, time) = timed(Duration::from_secs(600), start.elapsed());
    let lstm = eval_column(&out.join("eval/reach_LSTM.csv"), "distance_m");
    let near = bucket_mean(&lstm, -0.5);
    let far = bucket_mean(&lstm, -2.0);
    let mjt = eval_column(&out.join("eval/reach_MJT.csv"), "distance_m");
    let mjt_means: Vec<f64> = (0..8).filter_map(|k| bucket_mean(&mjt, -2.0 + 0.25 * k as f64)).collect();
    let mjt_falls = mjt_means.len() >= 2 && mjt_means.windows(2).all(|w| w[1] < w[0]);
    let shape = near.is_some_and(|n| n <= 0.05) && matches!((near, far), (Some(n), Some(f)) if n < f) && mjt_falls && fast;
    let six = outcome(
        shape,
        format!(
            "LSTM distance {} m near grasp vs {} m at -2 s; MJT by bucket {}; {time}",
            fmt_opt(near),
            fmt_opt(far),
            mjt_means.iter().map(|m| format!("{m:.3}")).collect::<Vec<_>>().join(" ")
        ),
    );
    let t = bucket_mean(&eval_column(&out.join("eval/reach_LSTM.csv"), "abs_time_error_s"), -0.5);
    let seven = outcome(t.is_some_and(|t| t <= 0.1), format!("LSTM |time error| {} s in [-0.5, -0.25)", fmt_opt(t)));
    (six, seven)
}

fn available_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn mean(v: &[(f64, f64)]) -> f64 {
    v.iter().map(|p| p.1).sum::<f64>() / v.len() as f64
}

fn temporal_smoothing(work: &Path) -> Outcome {
    let out = work.join("posture");
    let config = format!(
        r#"{{{FAMILY}, "reach": {{"models": []}}, "posture": {{"models": ["lstm", "lstm-temporal"], "lambda": 0.1}}, "classify": {{"classifiers": []}}}}"#
    );
    if let Err(e) = run_pipeline(&config, &out, available_threads()) {
        return outcome(false, e);
    }
    let plain = out.join("eval/posture_LSTM.csv");
    let smooth = out.join("eval/posture_LSTM_TEMPORAL.csv");
    let (d0, d1) = (mean(&eval_column(&plain, "step_displacement")), mean(&eval_column(&smooth, "step_displacement")));
    let (m0, m1) = (mean(&eval_column(&plain, "mse")), mean(&eval_column(&smooth, "mse")));
    let rel = (m1 - m0).abs() / m0;
    outcome(
        d1 < d0 && rel <= 0.2,
        format!("step displacement {d1:.3e} (lambda 0.1) vs {d0:.3e} (lambda 0); final-step MSE {m1:.3e} vs {m0:.3e}, {:.1}% apart (limit 20%)", 100.0 * rel),
    )
}

/// Object, size and task each shift their own feature by 1; users add a
/// constant offset of `offset` per feature.
fn separable_samples(offset: f64, seed: u64) -> Vec<LabeledSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.1).unwrap();
    let mut out = Vec::new();
    for u in 0..6 {
        let shift: Vec<f64> = (0..4).map(|_| offset * rng.random_range(-1.0..1.0)).collect();
        for t in 0..27 {
            let labels = [t % 3, (t / 3) % 3, t / 9];
            let mean = [labels[0] as f64, labels[1] as f64, labels[2] as f64, 0.0];
            for f in 0..4 {
                out.push(LabeledSample {
                    features: mean.iter().zip(&shift).map(|(m, s)| m + s + noise.sample(&mut rng)).collect(),
                    object: format!("o{}", labels[0]),
                    size: format!("s{}", labels[1]),
                    task: format!("k{}", labels[2]),
                    user_id: format!("u{u}"),
                    trial_id: format!("u{u}_t{t}"),
                    frame_offset: -1 - f,
                });
            }
        }
    }
    out
}

fn user_variability() -> Outcome {
    let start = Instant::now();
    let forest = ClassifierSpec::forest();
    let clean = separable_samples(0.0, 21);
    let kf = evaluate_cv(&clean, &make_split(&clean, SplitKind::Kfold { k: 5 }, 2).unwrap(), &forest).unwrap().overall;
    let shifted = separable_samples(4.0, 21);
    let kf_shifted = evaluate_cv(&shifted, &make_split(&shifted, SplitKind::Kfold { k: 5 }, 2).unwrap(), &forest).unwrap().overall;
    let louo = evaluate_cv(&shifted, &make_split(&shifted, SplitKind::LeaveOneUserOut, 2).unwrap(), &forest).unwrap().overall;
    let (fast, time) = timed(Duration::from_secs(120), start.elapsed());
    outcome(
        kf >= 0.95 && kf_shifted - louo >= 0.2 && fast,
        format!("5-fold {kf:.3} separable; with user offsets 5-fold {kf_shifted:.3} vs leave-one-user-out {louo:.3}; {time}"),
    )
}

/// Independent check of a fold plan; `None` when valid.
fn plan_problem(samples: &[LabeledSample], plan: &SplitPlan) -> Option<String> {
    let mut count = vec![0usize; samples.len()];
    let mut fold_of: BTreeMap<&str, usize> = BTreeMap::new();
    for (f, fold) in plan.folds.iter().enumerate() {
        let users: BTreeSet<&str> = fold.iter().map(|&i| samples[i].user_id.as_str()).collect();
        if plan.kind == SplitKind::LeaveOneUserOut && users.len() != 1 {
            return Some(format!("fold {f} mixes users"));
        }
        for &i in fold {
            count[i] += 1;
            if *fold_of.entry(samples[i].trial_id.as_str()).or_insert(f) != f {
                return Some(format!("trial {} split across folds", samples[i].trial_id));
            }
        }
    }
    count.iter().any(|&c| c != 1).then(|| "folds not a partition".to_string())
}

fn harness_invariants(small_run_lines: &str) -> Outcome {
    let mut problems = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for seed in 0..8u64 {
        let samples = separable_samples(rng.random_range(0.0..3.0), seed);
        for kind in [SplitKind::Kfold { k: 5 }, SplitKind::LeaveOneUserOut] {
            let plan = make_split(&samples, kind, seed).unwrap();
            if let Some(p) = plan_problem(&samples, &plan) {
                problems.push(p);
            }
            let r = evaluate_cv(&samples, &plan, &ClassifierSpec::tree()).unwrap();
            for t in Target::ALL {
                let cm = &r.confusion[&t];
                for (row, label) in cm.counts.iter().zip(&cm.labels) {
                    let support = samples.iter().filter(|s| s.label(t) == label).count() as u64;
                    if row.iter().sum::<u64>() != support {
                        problems.push(format!("confusion row {label} does not sum to its support"));
                    }
                }
            }
        }
        let offsets: Vec<(String, f64, f64)> =
            (0..300).map(|_| ("m".to_string(), rng.random_range(-2.6..0.2), rng.random_range(0.0..1.0))).collect();
        let spec = CurveSpec { resamples: 50, seed, ..CurveSpec::default() };
        let curve = &curves_by_model(Metric::DistanceM, &offsets, &spec).unwrap()[0];
        let in_span = offsets.iter().filter(|r| r.1 >= -2.0 && r.1 < 0.0).count();
        let tiled = curve.buckets.first().map(|b| b.t_lo) == Some(-2.0)
            && curve.buckets.last().map(|b| b.t_hi) == Some(0.0)
            && curve.buckets.windows(2).all(|w| w[0].t_hi == w[1].t_lo);
        if !tiled || curve.buckets.iter().map(|b| b.n).sum::<usize>() != in_span {
            problems.push(format!("buckets do not partition the span (seed {seed})"));
        }
    }
    let ds = synth_family(&FamilyConfig { n_users: 2, trials_per_user: 5, seed: 5, ..Default::default() }).unwrap();
    let mut windows = 0;
    for trial in ds.trials() {
        for policy in [WindowPolicy::training(), WindowPolicy::evaluation()] {
            for w in build_reach_windows(trial, &policy).unwrap() {
                windows += 1;
                if w.times.iter().any(|&t| t > w.end_time) || w.window_end_offset > 0.0 {
                    problems.push(format!("reach window of {} leaks past {}", w.trial_id, w.end_time));
                }
            }
            for w in build_posture_windows(trial, &policy).unwrap() {
                windows += 1;
                if w.times.iter().any(|&t| t > w.end_time) {
                    problems.push(format!("posture window of {} leaks past {}", w.trial_id, w.end_time));
                }
            }
        }
    }
    let cli_fails: Vec<&str> = small_run_lines.lines().filter(|l| l.starts_with("FAIL")).collect();
    let cli_passes = small_run_lines.lines().filter(|l| l.starts_with("PASS")).count();
    problems.extend(cli_fails.iter().map(|l| l.to_string()));
    if cli_passes < 5 {
        problems.push(format!("pipeline --check printed {cli_passes} invariant lines"));
    }
    outcome(
        problems.is_empty(),
        if problems.is_empty() {
            format!("16 fold plans, 16 confusion sets, 8 curves, {windows} windows, {cli_passes} pipeline checks")
        } else {
            problems.join("; ")
        },
    )
}

fn tree_bytes(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

const SMALL: &str = r#"{"seed": 4, "synth": {"n_users": 3, "trials_per_user": 6},
 "reach": {"train": {"epochs": 3}}, "posture": {"train": {"epochs": 3}},
 "check": {"quality": false}}"#;

fn determinism(work: &Path) -> (Outcome, String) {
    let n = available_threads().max(4);
    let mut reports = Vec::new();
    let mut lines = String::new();
    for (threads, tag) in [(1, "a"), (1, "b"), (n, "a"), (n, "b")] {
        let out = work.join(format!("det_{threads}_{tag}"));
        match run_pipeline(SMALL, &out, threads) {
            Ok(stdout) => lines = stdout,
            Err(e) => return (outcome(false, e), String::new()),
        }
        reports.push(tree_bytes(&out.join("report")));
    }
    let files = reports[0].len();
    let same = reports.windows(2).all(|w| w[0] == w[1]);
    (outcome(same && files > 0, format!("{files} report files identical across 2 runs at 1 thread and 2 at {n}")), lines)
}

/// Criterion numbers given as arguments select a subset
/// (`cargo test --test acceptance -- 5 8`); none runs all.
fn main() {
    let only: BTreeSet<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |ks: &[usize]| only.is_empty() || ks.iter().any(|k| only.contains(k));
    let work = tempfile::tempdir().unwrap();
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut report = |k: usize, name: &'static str, o: Outcome| {
        println!("{} {k:>2} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((k, name, o));
    };
    if wanted(&[1]) {
        report(1, "mjt_exact_recovery", mjt_exact());
    }
    if wanted(&[2]) {
        report(2, "mjt_noisy_recovery", mjt_noisy());
    }
    if wanted(&[3]) {
        report(3, "savgol_exactness", savgol_exactness());
    }
    if wanted(&[4]) {
        report(4, "peak_speed", peak_speed());
    }
    if wanted(&[5]) {
        report(5, "gradient_checks", gradient_checks());
    }
    if wanted(&[6, 7]) {
        let (six, seven) = reach_family(work.path());
        report(6, "reach_curve_shape", six);
        report(7, "time_error_near_grasp", seven);
    }
    if wanted(&[8]) {
        report(8, "temporal_smoothing", temporal_smoothing(work.path()));
    }
    if wanted(&[9]) {
        report(9, "user_variability", user_variability());
    }
    if wanted(&[10, 11]) {
        let (eleven, lines) = determinism(work.path());
        report(10, "harness_invariants", harness_invariants(&lines));
        report(11, "determinism", eleven);
    }
    let failed: Vec<String> = results.iter().filter(|r| !r.2.pass).map(|r| format!("{} {}", r.0, r.1)).collect();
    println!("acceptance: {} of {} criteria pass", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        println!("failing: {}", failed.join(", "));
        std::process::exit(1);
    }
}
