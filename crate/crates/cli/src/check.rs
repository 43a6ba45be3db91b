//! Assertions of `--check`: harness invariants on the run's artifacts and
//! the configured model-quality thresholds on its curves.

use std::collections::{BTreeMap, BTreeSet};

use reachgrasp::classify::{LabeledSample, SplitKind, SplitPlan};
use reachgrasp::report::{CurveSpec, EvalCurve, Metric};
use reachgrasp::Dataset;

use crate::config::CheckConfig;
use crate::report::{CheckLine, ReportData};
use crate::stages::{Classification, Evaluation, Split};

const BUCKET_EPS: f64 = 1e-9;

/// Folds disjoint, exhaustive over the samples, trial-grouped, and one user
/// per fold for leave-one-user-out.
pub fn plan_is_valid(samples: &[LabeledSample], plan: &SplitPlan) -> Result<(), String> {
    let mut seen = vec![false; samples.len()];
    let mut fold_of_trial: BTreeMap<(&str, &str), usize> = BTreeMap::new();
    for (f, fold) in plan.folds.iter().enumerate() {
        if fold.is_empty() {
            return Err(format!("fold {f} is empty"));
        }
        let mut users = BTreeSet::new();
        for &i in fold {
            if i >= samples.len() || std::mem::replace(&mut seen[i], true) {
                return Err(format!("sample {i} repeated or out of range"));
            }
            let s = &samples[i];
            users.insert(s.user_id.as_str());
            if *fold_of_trial.entry((&s.user_id, &s.trial_id)).or_insert(f) != f {
                return Err(format!("trial {} spans folds", s.trial_id));
            }
        }
        if plan.kind == SplitKind::LeaveOneUserOut && users.len() != 1 {
            return Err(format!("fold {f} holds {} users", users.len()));
        }
    }
    match seen.iter().position(|&b| !b) {
        Some(i) => Err(format!("sample {i} in no fold")),
        None => Ok(()),
    }
}

/// Buckets tile the span in order and their counts add up to the records
/// falling inside it.
fn curve_is_partition(curve: &EvalCurve, spec: &CurveSpec, in_span: usize) -> Result<(), String> {
    let mut edge = spec.span.0;
    let mut n = 0;
    for b in &curve.buckets {
        if (b.t_lo - edge).abs() > BUCKET_EPS || b.t_hi <= b.t_lo {
            return Err(format!("bucket [{}, {}) does not continue at {edge}", b.t_lo, b.t_hi));
        }
        edge = b.t_hi;
        n += b.n;
    }
    if (edge - spec.span.1).abs() > BUCKET_EPS {
        return Err(format!("buckets end at {edge}, span ends at {}", spec.span.1));
    }
    if n != in_span {
        return Err(format!("buckets hold {n} records, {in_span} fall in the span"));
    }
    Ok(())
}

pub fn invariant_checks(ds: &Dataset, split: &Split, eval: &Evaluation, cls: Option<&Classification>, report: &ReportData, spec: &CurveSpec) -> Vec<CheckLine> {
    let mut out = vec![CheckLine::new(
        "split_partition",
        split.is_partition_of(ds),
        format!("{} train / {} test trials", split.train.len(), split.test.len()),
    )];
    out.push(CheckLine::new(
        "windows_end_before_cut",
        eval.leaking_windows == 0,
        format!("{} of {} evaluation windows hold frames past their end", eval.leaking_windows, eval.windows_checked),
    ));
    if let Some(cls) = cls {
        let mut bad = Vec::new();
        let mut matrices = 0;
        let mut bad_rows = Vec::new();
        for run in &cls.runs {
            if let Err(e) = plan_is_valid(&cls.samples, &run.plan) {
                bad.push(format!("{}: {e}", run.name));
            }
            for (t, cm) in &run.result.confusion {
                matrices += 1;
                let rows: Vec<u64> = cm.counts.iter().map(|r| r.iter().sum()).collect();
                if rows != cm.supports() || cm.total() != run.result.n_tested as u64 {
                    bad_rows.push(format!("{}/{}", run.name, t.as_str()));
                }
            }
        }
        out.push(CheckLine::new(
            "cv_folds_partition_trials",
            bad.is_empty(),
            if bad.is_empty() { format!("{} plans", cls.runs.len()) } else { bad.join("; ") },
        ));
        out.push(CheckLine::new(
            "confusion_rows_match_support",
            bad_rows.is_empty(),
            if bad_rows.is_empty() { format!("{matrices} matrices") } else { bad_rows.join(", ") },
        ));
    }
    out.extend(bucket_checks(report, spec));
    out
}

/// The bucket invariant alone, for reports built from existing evaluations.
pub fn bucket_checks(report: &ReportData, spec: &CurveSpec) -> Vec<CheckLine> {
    let mut bad = Vec::new();
    for c in &report.curves {
        let n = report.in_span.get(&(c.metric.as_str().to_string(), c.model.clone())).copied().unwrap_or(0);
        if let Err(e) = curve_is_partition(c, spec, n) {
            bad.push(format!("{}/{}: {e}", c.metric.as_str(), c.model));
        }
    }
    vec![CheckLine::new(
        "buckets_partition_span",
        bad.is_empty(),
        if bad.is_empty() { format!("{} curves", report.curves.len()) } else { bad.join("; ") },
    )]
}

fn bucket_mean(report: &ReportData, metric: Metric, model: &str, at: f64) -> Option<f64> {
    report.curve(metric, model)?.bucket_at(at + BUCKET_EPS).filter(|b| b.n > 0).map(|b| b.mean)
}

fn fmt(v: Option<f64>) -> String {
    v.map_or("n/a".into(), |v| format!("{v:.4}"))
}

/// Threshold checks on whichever of the reach LSTM, MJT and posture LSTM
/// pair were evaluated.
pub fn quality_checks(report: &ReportData, spec: &CurveSpec, cfg: &CheckConfig) -> Vec<CheckLine> {
    let mut out = Vec::new();
    let near = cfg.near_bucket;
    let far = spec.span.0;
    if report.curve(Metric::DistanceM, "LSTM").is_some() {
        let n = bucket_mean(report, Metric::DistanceM, "LSTM", near);
        let f = bucket_mean(report, Metric::DistanceM, "LSTM", far);
        out.push(CheckLine::new(
            "lstm_distance_near_grasp",
            n.is_some_and(|v| v <= cfg.lstm_distance_max),
            format!("bucket {near} s mean {} m (limit {})", fmt(n), cfg.lstm_distance_max),
        ));
        out.push(CheckLine::new(
            "lstm_distance_improves",
            matches!((n, f), (Some(n), Some(f)) if n < f),
            format!("bucket {near} s {} m vs bucket {far} s {} m", fmt(n), fmt(f)),
        ));
        let t = bucket_mean(report, Metric::AbsTimeErrorS, "LSTM", near);
        out.push(CheckLine::new(
            "lstm_time_near_grasp",
            t.is_some_and(|v| v <= cfg.lstm_time_max),
            format!("bucket {near} s mean |error| {} s (limit {})", fmt(t), cfg.lstm_time_max),
        ));
    }
    if let Some(c) = report.curve(Metric::DistanceM, "MJT") {
        let means: Vec<f64> = c.buckets.iter().filter(|b| b.n > 0).map(|b| b.mean).collect();
        let decreasing = means.len() >= 2 && means.windows(2).all(|w| w[1] < w[0]);
        out.push(CheckLine::new(
            "mjt_distance_decreases",
            decreasing,
            means.iter().map(|m| format!("{m:.4}")).collect::<Vec<_>>().join(" "),
        ));
    }
    if let (Some(&(mse0, d0)), Some(&(mse1, d1))) = (report.posture_means.get("LSTM"), report.posture_means.get("LSTM_TEMPORAL")) {
        out.push(CheckLine::new(
            "temporal_smoother",
            d1 < d0,
            format!("mean step displacement {d1:.4e} (temporal) vs {d0:.4e}"),
        ));
        let rel = (mse1 - mse0).abs() / mse0;
        out.push(CheckLine::new(
            "temporal_mse_close",
            rel <= cfg.posture_mse_tolerance,
            format!("final-step MSE {mse1:.4e} vs {mse0:.4e} ({:+.1}%, limit {:.0}%)", 100.0 * (mse1 / mse0 - 1.0), 100.0 * cfg.posture_mse_tolerance),
        ));
    }
    out
}
