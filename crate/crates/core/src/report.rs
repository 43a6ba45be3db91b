//! Evaluation metrics, time-to-grasp bucketed curves with bootstrap
//! intervals, confusion matrices, and CSV/SVG export.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numfmt::fmt_num;
use crate::trajectory::Vec3;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no records to bucket")]
    NoRecords,
    #[error("bad curve specification: {0}")]
    BadSpec(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed table: {0}")]
    Parse(String),
}

pub fn distance_error(pred: Vec3, truth: Vec3) -> f64 {
    (pred - truth).norm()
}

/// Predicted minus true remaining time; negative means the grasp was
/// predicted too early.
pub fn time_error(pred_remaining: f64, true_remaining: f64) -> f64 {
    pred_remaining - true_remaining
}

pub fn abs_time_error(pred_remaining: f64, true_remaining: f64) -> f64 {
    time_error(pred_remaining, true_remaining).abs()
}

/// `(mse, mean_euclid)`: mean squared error over all 15 components and the
/// mean per-finger distance.
pub fn posture_errors(pred: &[Vec3; 5], truth: &[Vec3; 5]) -> (f64, f64) {
    let mut sq = 0.0;
    let mut dist = 0.0;
    for (p, t) in pred.iter().zip(truth) {
        let d = *p - *t;
        sq += d.norm_squared();
        dist += d.norm();
    }
    (sq / 15.0, dist / 5.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    DistanceM,
    TimeErrorS,
    AbsTimeErrorS,
    Mse,
    EuclidM,
}

impl Metric {
    pub const ALL: [Metric; 5] = [Metric::DistanceM, Metric::TimeErrorS, Metric::AbsTimeErrorS, Metric::Mse, Metric::EuclidM];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::DistanceM => "distance_m",
            Metric::TimeErrorS => "time_error_s",
            Metric::AbsTimeErrorS => "abs_time_error_s",
            Metric::Mse => "mse",
            Metric::EuclidM => "euclid_m",
        }
    }

    pub fn parse(s: &str) -> Option<Metric> {
        Metric::ALL.into_iter().find(|m| m.as_str() == s)
    }

    /// Axis label with units.
    pub fn label(self) -> &'static str {
        match self {
            Metric::DistanceM => "Distance error (m)",
            Metric::TimeErrorS => "Time error (s)",
            Metric::AbsTimeErrorS => "Absolute time error (s)",
            Metric::Mse => "Posture MSE (m^2)",
            Metric::EuclidM => "Mean fingertip distance (m)",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    /// Seconds before grasp, `t_lo < t_hi <= 0`; the interval is `[t_lo, t_hi)`.
    pub t_lo: f64,
    pub t_hi: f64,
    pub n: usize,
    pub mean: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCurve {
    pub model: String,
    pub metric: Metric,
    pub buckets: Vec<Bucket>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveSpec {
    pub bucket_width: f64,
    pub span: (f64, f64),
    pub resamples: usize,
    pub confidence: f64,
    pub seed: u64,
}

impl Default for CurveSpec {
    fn default() -> Self {
        Self { bucket_width: 0.25, span: (-2.0, 0.0), resamples: 1000, confidence: 0.95, seed: 0 }
    }
}

impl CurveSpec {
    fn n_buckets(&self) -> usize {
        ((self.span.1 - self.span.0) / self.bucket_width).round() as usize
    }

    /// Bucket holding `offset`, if it lies in the half-open span.
    pub fn bucket_of(&self, offset: f64) -> Option<usize> {
        if !(offset >= self.span.0 && offset < self.span.1) {
            return None;
        }
        let k = ((offset - self.span.0) / self.bucket_width).floor() as usize;
        Some(k.min(self.n_buckets() - 1))
    }

    fn validate(&self) -> Result<(), ReportError> {
        let ok = self.bucket_width > 0.0
            && self.span.0 < self.span.1
            && self.span.1 <= 0.0
            && self.resamples > 0
            && self.confidence > 0.0
            && self.confidence < 1.0;
        if ok {
            Ok(())
        } else {
            Err(ReportError::BadSpec(format!("{self:?}")))
        }
    }
}

/// Mean taken as an offset from the first value, so constant inputs return
/// that constant exactly; clamped to the data range.
fn stable_mean(values: &[f64]) -> f64 {
    let v0 = values[0];
    let m = v0 + values.iter().map(|v| v - v0).sum::<f64>() / values.len() as f64;
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    m.clamp(lo, hi)
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] + (sorted[i + 1] - sorted[i]) * frac
    } else {
        sorted[i]
    }
}

/// Percentile bootstrap interval of the mean.
pub fn bootstrap_ci(values: &[f64], resamples: usize, confidence: f64, seed: u64) -> (f64, f64) {
    let mean = stable_mean(values);
    let mut rng = crate::rng::stream(seed, &[]);
    let mut draw = vec![0.0; values.len()];
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| {
            for d in draw.iter_mut() {
                *d = values[rng.random_range(0..values.len())];
            }
            stable_mean(&draw)
        })
        .collect();
    means.sort_by(f64::total_cmp);
    let alpha = (1.0 - confidence) / 2.0;
    (quantile(&means, alpha).min(mean), quantile(&means, 1.0 - alpha).max(mean))
}

/// Groups `(offset before grasp, value)` records into half-open buckets
/// over the span; records outside it are ignored and empty buckets are
/// omitted. Each bucket's bootstrap stream is keyed by its index.
pub fn bucket_curve(model: &str, metric: Metric, records: &[(f64, f64)], spec: &CurveSpec) -> Result<EvalCurve, ReportError> {
    spec.validate()?;
    if records.is_empty() {
        return Err(ReportError::NoRecords);
    }
    let mut groups = vec![Vec::new(); spec.n_buckets()];
    for &(offset, v) in records {
        if let Some(k) = spec.bucket_of(offset) {
            groups[k].push(v);
        }
    }
    let buckets = groups
        .par_iter()
        .enumerate()
        .filter(|(_, g)| !g.is_empty())
        .map(|(k, g)| {
            let (ci_lo, ci_hi) = bootstrap_ci(g, spec.resamples, spec.confidence, crate::rng::derive_seed(spec.seed, &[k as u64]));
            Bucket {
                t_lo: spec.span.0 + k as f64 * spec.bucket_width,
                t_hi: spec.span.0 + (k + 1) as f64 * spec.bucket_width,
                n: g.len(),
                mean: stable_mean(g),
                ci_lo,
                ci_hi,
            }
        })
        .collect();
    Ok(EvalCurve { model: model.to_string(), metric, buckets })
}

impl EvalCurve {
    /// Bucket whose interval contains `offset`.
    pub fn bucket_at(&self, offset: f64) -> Option<&Bucket> {
        self.buckets.iter().find(|b| offset >= b.t_lo && offset < b.t_hi)
    }
}

const CURVE_HEADER: [&str; 8] = ["model", "metric", "t_lo", "t_hi", "n", "mean", "ci_lo", "ci_hi"];

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w)
}

/// Columns: `model,metric,t_lo,t_hi,n,mean,ci_lo,ci_hi`, one row per bucket.
pub fn write_curves_csv<W: Write>(curves: &[EvalCurve], out: W) -> Result<(), ReportError> {
    let mut w = writer(out);
    w.write_record(CURVE_HEADER)?;
    for c in curves {
        for b in &c.buckets {
            w.write_record([
                c.model.clone(),
                c.metric.as_str().to_string(),
                fmt_num(b.t_lo),
                fmt_num(b.t_hi),
                b.n.to_string(),
                fmt_num(b.mean),
                fmt_num(b.ci_lo),
                fmt_num(b.ci_hi),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn num(s: &str) -> Result<f64, ReportError> {
    s.parse().map_err(|_| ReportError::Parse(format!("not a number: {s:?}")))
}

/// Reads curves back; rows of one `(model, metric)` pair form one curve, in
/// first-appearance order.
pub fn read_curves_csv<R: Read>(input: R) -> Result<Vec<EvalCurve>, ReportError> {
    let mut r = csv::Reader::from_reader(input);
    if r.headers()?.iter().ne(CURVE_HEADER) {
        return Err(ReportError::Parse("unexpected curve header".into()));
    }
    let mut curves: Vec<EvalCurve> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let metric = Metric::parse(&rec[1]).ok_or_else(|| ReportError::Parse(format!("unknown metric {:?}", &rec[1])))?;
        let bucket = Bucket {
            t_lo: num(&rec[2])?,
            t_hi: num(&rec[3])?,
            n: rec[4].parse().map_err(|_| ReportError::Parse(format!("bad count {:?}", &rec[4])))?,
            mean: num(&rec[5])?,
            ci_lo: num(&rec[6])?,
            ci_hi: num(&rec[7])?,
        };
        match curves.iter_mut().find(|c| c.model == rec[0] && c.metric == metric) {
            Some(c) => c.buckets.push(bucket),
            None => curves.push(EvalCurve { model: rec[0].to_string(), metric, buckets: vec![bucket] }),
        }
    }
    Ok(curves)
}

/// Rows are true labels, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(labels: Vec<String>) -> Self {
        let n = labels.len();
        Self { labels, counts: vec![vec![0; n]; n] }
    }

    pub fn add(&mut self, truth: usize, pred: usize) {
        self.counts[truth][pred] += 1;
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn supports(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn total(&self) -> u64 {
        self.supports().iter().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let correct: u64 = (0..self.labels.len()).map(|i| self.counts[i][i]).sum();
        correct as f64 / self.total().max(1) as f64
    }

    /// Header `true\predicted,<labels...>,support`; one row per true label.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), ReportError> {
        let mut w = writer(out);
        let mut header = vec!["true\\predicted".to_string()];
        header.extend(self.labels.iter().cloned());
        header.push("support".into());
        w.write_record(&header)?;
        for (label, row) in self.labels.iter().zip(&self.counts) {
            let mut rec = vec![label.clone()];
            rec.extend(row.iter().map(u64::to_string));
            rec.push(row.iter().sum::<u64>().to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self, ReportError> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.clone();
        let n = header.len().saturating_sub(2);
        let labels: Vec<String> = header.iter().skip(1).take(n).map(str::to_string).collect();
        let mut counts = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let row = rec.iter().skip(1).take(n).map(|s| s.parse::<u64>().map_err(|_| ReportError::Parse(format!("bad count {s:?}")))).collect::<Result<Vec<_>, _>>()?;
            counts.push(row);
        }
        if counts.len() != n {
            return Err(ReportError::Parse("confusion matrix is not square".into()));
        }
        Ok(Self { labels, counts })
    }
}

/// One line of an accuracy table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub name: String,
    pub n: usize,
    pub object: f64,
    pub size: f64,
    pub task: f64,
    pub overall: f64,
}

const ACCURACY_HEADER: [&str; 6] = ["name", "n", "object", "size", "task", "overall"];

pub fn write_accuracy_csv<W: Write>(rows: &[AccuracyRow], out: W) -> Result<(), ReportError> {
    let mut w = writer(out);
    w.write_record(ACCURACY_HEADER)?;
    for r in rows {
        w.write_record([r.name.clone(), r.n.to_string(), fmt_num(r.object), fmt_num(r.size), fmt_num(r.task), fmt_num(r.overall)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_accuracy_csv<R: Read>(input: R) -> Result<Vec<AccuracyRow>, ReportError> {
    let mut r = csv::Reader::from_reader(input);
    if r.headers()?.iter().ne(ACCURACY_HEADER) {
        return Err(ReportError::Parse("unexpected accuracy header".into()));
    }
    r.records()
        .map(|rec| {
            let rec = rec?;
            Ok(AccuracyRow {
                name: rec[0].to_string(),
                n: rec[1].parse().map_err(|_| ReportError::Parse(format!("bad count {:?}", &rec[1])))?,
                object: num(&rec[2])?,
                size: num(&rec[3])?,
                task: num(&rec[4])?,
                overall: num(&rec[5])?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvgStyle {
    pub width: f64,
    pub height: f64,
    pub title: String,
    pub x_label: String,
    pub y_label: String,
}

impl SvgStyle {
    pub fn for_metric(metric: Metric, title: &str) -> Self {
        Self { width: 720.0, height: 440.0, title: title.to_string(), x_label: "Time before grasp (s)".into(), y_label: metric.label().into() }
    }
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn nice_step(range: f64) -> f64 {
    let raw = range / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    [1.0, 2.0, 2.5, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag)
}

/// Standalone SVG: per curve a shaded CI band, a polyline through the
/// bucket means (plotted at bucket centers) and one circle per bucket.
pub fn render_curve_svg(curves: &[EvalCurve], style: &SvgStyle) -> String {
    let (w, h) = (style.width, style.height);
    let (left, right, top, bottom) = (80.0, 170.0, 40.0, 60.0);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let all = curves.iter().flat_map(|c| &c.buckets);
    let x_min = all.clone().map(|b| b.t_lo).fold(0.0f64, f64::min).min(-2.0);
    let x_max = 0.0;
    let mut y_min = all.clone().map(|b| b.ci_lo).fold(0.0f64, f64::min);
    let mut y_max = all.map(|b| b.ci_hi).fold(0.0f64, f64::max);
    if y_max - y_min <= 0.0 {
        y_max = y_min + 1.0;
    }
    let step = nice_step(y_max - y_min);
    y_min = (y_min / step).floor() * step;
    y_max = (y_max / step).ceil() * step;
    let sx = |x: f64| left + (x - x_min) / (x_max - x_min) * pw;
    let sy = |y: f64| top + (y_max - y) / (y_max - y_min) * ph;

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{w:.0}" height="{h:.0}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="15">{}</text>"#, left + pw / 2.0, esc(&style.title));
    let _ = writeln!(s, r##"<g stroke="#999" stroke-width="1">"##);
    let _ = writeln!(s, r#"<line x1="{left:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}"/>"#, top + ph, left + pw, top + ph);
    let _ = writeln!(s, r#"<line x1="{left:.2}" y1="{top:.2}" x2="{left:.2}" y2="{:.2}"/>"#, top + ph);
    let _ = writeln!(s, "</g>");
    let mut x = x_min;
    while x <= x_max + 1e-9 {
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{x:.2}</text>"#, sx(x), top + ph + 18.0);
        x += 0.25 * ((x_max - x_min) / 2.0).max(1.0).ceil();
    }
    let n_ticks = ((y_max - y_min) / step).round() as usize;
    for k in 0..=n_ticks {
        let y = y_min + k as f64 * step;
        let _ = writeln!(s, r##"<line x1="{left:.2}" y1="{0:.2}" x2="{1:.2}" y2="{0:.2}" stroke="#eee"/>"##, sy(y), left + pw);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, left - 6.0, sy(y) + 4.0, fmt_num(y));
    }
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, left + pw / 2.0, h - 16.0, esc(&style.x_label));
    let _ = writeln!(
        s,
        r#"<text x="20" y="{0:.2}" text-anchor="middle" transform="rotate(-90 20 {0:.2})">{1}</text>"#,
        top + ph / 2.0,
        esc(&style.y_label)
    );
    for (i, c) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mid = |b: &Bucket| sx(0.5 * (b.t_lo + b.t_hi));
        let _ = writeln!(s, r#"<g data-model="{}">"#, esc(&c.model));
        if !c.buckets.is_empty() {
            let mut band: Vec<String> = c.buckets.iter().map(|b| format!("{:.2},{:.2}", mid(b), sy(b.ci_hi))).collect();
            band.extend(c.buckets.iter().rev().map(|b| format!("{:.2},{:.2}", mid(b), sy(b.ci_lo))));
            let _ = writeln!(s, r#"<polygon points="{}" fill="{color}" fill-opacity="0.18" stroke="none"/>"#, band.join(" "));
            let line: Vec<String> = c.buckets.iter().map(|b| format!("{:.2},{:.2}", mid(b), sy(b.mean))).collect();
            let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, line.join(" "));
            for b in &c.buckets {
                let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, mid(b), sy(b.mean));
            }
        }
        let ly = top + 10.0 + 20.0 * i as f64;
        let lx = left + pw + 16.0;
        let _ = writeln!(s, r#"<rect x="{lx:.2}" y="{:.2}" width="14" height="4" fill="{color}"/>"#, ly - 2.0);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, lx + 20.0, ly + 4.0, esc(&c.model));
        let _ = writeln!(s, "</g>");
    }
    s.push_str("</svg>\n");
    s
}

/// Groups `(model, offset, value)` records into one curve per model, in
/// model-name order.
pub fn curves_by_model(metric: Metric, records: &[(String, f64, f64)], spec: &CurveSpec) -> Result<Vec<EvalCurve>, ReportError> {
    let mut by: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    for (m, o, v) in records {
        by.entry(m.as_str()).or_default().push((*o, *v));
    }
    by.into_iter().map(|(m, r)| bucket_curve(m, metric, &r, spec)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop, prop_assert, prop_assert_eq, proptest};
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn distances() {
        assert_eq!(distance_error(Vec3::new(1.0, 2.0, 3.0), Vec3::new(1.0, 2.0, 3.0)), 0.0);
        assert!((distance_error(Vec3::ZERO, Vec3::new(0.3, 0.4, 0.0)) - 0.5).abs() < 1e-15);
        let (a, b) = (Vec3::new(0.1, -0.7, 2.0), Vec3::new(-1.0, 0.3, 0.2));
        assert_eq!(distance_error(a, b), distance_error(b, a));
    }

    #[test]
    fn time_errors() {
        assert_eq!(time_error(0.4, 0.4), 0.0);
        assert_eq!(time_error(0.5, 0.75), -0.25);
        assert_eq!(abs_time_error(0.5, 0.75), 0.25);
    }

    #[test]
    fn posture_error_arithmetic() {
        let truth = [Vec3::new(0.1, 0.2, 0.3); 5];
        assert_eq!(posture_errors(&truth, &truth), (0.0, 0.0));
        let mut pred = truth;
        pred[2] = truth[2] + Vec3::new(0.3, 0.4, 0.0);
        let (mse, euclid) = posture_errors(&pred, &truth);
        assert!((euclid - 0.1).abs() < 1e-15);
        assert!((mse - 0.25 / 15.0).abs() < 1e-15);
        let perm = |p: &[Vec3; 5]| [p[4], p[0], p[3], p[1], p[2]];
        assert_eq!(posture_errors(&perm(&pred), &perm(&truth)).0, mse);
    }

    #[test]
    fn constant_values_give_degenerate_intervals() {
        let c = 0.1234567891234;
        let recs: Vec<(f64, f64)> = (0..40).map(|i| (-2.0 + 0.05 * i as f64, c)).collect();
        let curve = bucket_curve("m", Metric::DistanceM, &recs, &CurveSpec::default()).unwrap();
        assert_eq!(curve.buckets.len(), 8);
        for b in &curve.buckets {
            assert_eq!((b.mean, b.ci_lo, b.ci_hi), (c, c, c));
        }
    }

    #[test]
    fn known_bucket_means() {
        let recs = [(-0.5, 0.0), (-0.4, 1.0), (-0.2, 1.0), (-0.1, 1.0)];
        let curve = bucket_curve("m", Metric::Mse, &recs, &CurveSpec::default()).unwrap();
        assert_eq!(curve.buckets.len(), 2);
        assert_eq!((curve.buckets[0].t_lo, curve.buckets[0].t_hi, curve.buckets[0].mean), (-0.5, -0.25, 0.5));
        assert_eq!((curve.buckets[1].t_lo, curve.buckets[1].mean), (-0.25, 1.0));
    }

    #[test]
    fn bootstrap_interval_of_standard_normal() {
        let mut rng = crate::rng::stream(11, &[]);
        let vals: Vec<f64> = (0..1000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let (lo, hi) = bootstrap_ci(&vals, 1000, 0.95, 5);
        let expected = 2.0 * 1.96 / 1000f64.sqrt();
        assert!(lo <= 0.0 && hi >= 0.0, "({lo}, {hi})");
        assert!(((hi - lo) - expected).abs() <= 0.2 * expected, "{}", hi - lo);
        assert_eq!(bootstrap_ci(&vals, 1000, 0.95, 5), (lo, hi));
    }

    #[test]
    fn offsets_outside_span_are_ignored() {
        let spec = CurveSpec::default();
        assert_eq!(spec.bucket_of(0.0), None);
        assert_eq!(spec.bucket_of(-2.0), Some(0));
        assert_eq!(spec.bucket_of(-2.0001), None);
        assert_eq!(spec.bucket_of(-0.25), Some(7));
        assert_eq!(spec.bucket_of(-1e-12), Some(7));
        assert!(matches!(bucket_curve("m", Metric::Mse, &[], &spec), Err(ReportError::NoRecords)));
    }

    proptest! {
        #[test]
        fn buckets_partition_the_span(recs in prop::collection::vec((-2.5f64..0.5, -5.0f64..5.0), 1..80)) {
            let spec = CurveSpec { resamples: 20, ..Default::default() };
            let curve = bucket_curve("m", Metric::TimeErrorS, &recs, &spec).unwrap();
            let inside = recs.iter().filter(|r| r.0 >= -2.0 && r.0 < 0.0).count();
            prop_assert_eq!(curve.buckets.iter().map(|b| b.n).sum::<usize>(), inside);
            for &(o, _) in recs.iter().filter(|r| r.0 >= -2.0 && r.0 < 0.0) {
                prop_assert_eq!(curve.buckets.iter().filter(|b| o >= b.t_lo && o < b.t_hi).count(), 1);
            }
            for b in &curve.buckets {
                let vals: Vec<f64> = recs.iter().filter(|r| r.0 >= b.t_lo && r.0 < b.t_hi).map(|r| r.1).collect();
                let (mn, mx) = vals.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, c), &v| (a.min(v), c.max(v)));
                prop_assert!(b.mean >= mn && b.mean <= mx);
                prop_assert!(b.ci_lo <= b.mean && b.mean <= b.ci_hi);
                prop_assert!(b.n >= 1 && b.t_lo < b.t_hi && b.t_hi <= 0.0);
            }
        }
    }

    fn sample_curves() -> Vec<EvalCurve> {
        let mut rng = crate::rng::stream(3, &[]);
        let recs: Vec<(f64, f64)> = (0..300).map(|_| (rng.random_range(-2.0..0.0), rng.random_range(0.0..0.3))).collect();
        let spec = CurveSpec { seed: 4, ..Default::default() };
        vec![bucket_curve("LSTM", Metric::DistanceM, &recs, &spec).unwrap(), bucket_curve("MJT, fitted", Metric::DistanceM, &recs[..100], &spec).unwrap()]
    }

    fn quantized(c: &EvalCurve) -> EvalCurve {
        let q = crate::numfmt::round_sig;
        EvalCurve {
            buckets: c.buckets.iter().map(|b| Bucket { t_lo: q(b.t_lo), t_hi: q(b.t_hi), n: b.n, mean: q(b.mean), ci_lo: q(b.ci_lo), ci_hi: q(b.ci_hi) }).collect(),
            ..c.clone()
        }
    }

    #[test]
    fn curve_csv_round_trip() {
        let curves: Vec<EvalCurve> = sample_curves().iter().map(quantized).collect();
        let mut buf = Vec::new();
        write_curves_csv(&curves, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("model,metric,t_lo,t_hi,n,mean,ci_lo,ci_hi\n"));
        assert!(!text.contains('\r'));
        assert!(text.contains("\"MJT, fitted\""));
        assert_eq!(read_curves_csv(buf.as_slice()).unwrap(), curves);
        let mut again = Vec::new();
        write_curves_csv(&read_curves_csv(buf.as_slice()).unwrap(), &mut again).unwrap();
        assert_eq!(again, buf);
    }

    #[test]
    fn confusion_csv_supports() {
        let mut m = ConfusionMatrix::new(vec!["a".into(), "b".into(), "c".into()]);
        for (t, p) in [(0, 0), (0, 1), (1, 1), (2, 0), (2, 2), (2, 2)] {
            m.add(t, p);
        }
        assert_eq!(m.supports(), vec![2, 1, 3]);
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "true\\predicted,a,b,c,support\na,1,1,0,2\nb,0,1,0,1\nc,1,0,2,3\n");
        assert_eq!(ConfusionMatrix::read_csv(buf.as_slice()).unwrap(), m);
        assert!((m.accuracy() - 4.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn accuracy_csv_round_trip() {
        let rows = vec![AccuracyRow { name: "forest/kfold".into(), n: 40, object: 0.95, size: 1.0, task: 0.875, overall: 0.825 }];
        let mut buf = Vec::new();
        write_accuracy_csv(&rows, &mut buf).unwrap();
        assert_eq!(read_accuracy_csv(buf.as_slice()).unwrap(), rows);
    }

    #[test]
    fn svg_is_well_formed_and_deterministic() {
        let curves = sample_curves();
        let style = SvgStyle::for_metric(Metric::DistanceM, "Reach <distance> & error");
        let svg = render_curve_svg(&curves, &style);
        let doc = roxmltree::Document::parse(&svg).unwrap();
        let count = |tag: &str| doc.descendants().filter(|n| n.has_tag_name(tag)).count();
        assert_eq!(count("polyline"), 2);
        assert_eq!(count("polygon"), 2);
        assert_eq!(count("circle"), curves.iter().map(|c| c.buckets.len()).sum::<usize>());
        assert_eq!(svg, render_curve_svg(&curves, &style));
    }

    #[test]
    fn one_bucket_one_marker() {
        let curve = bucket_curve("m", Metric::Mse, &[(-1.0, 0.2), (-0.9, 0.4)], &CurveSpec::default()).unwrap();
        let svg = render_curve_svg(&[curve], &SvgStyle::for_metric(Metric::Mse, "t"));
        assert_eq!(svg.matches("<circle").count(), 1);
        roxmltree::Document::parse(&svg).unwrap();
    }
}
