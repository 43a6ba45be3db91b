//! Uniform resampling, Savitzky-Golay smoothing differentiation, speed
//! profiles and movement-onset detection.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trajectory::{Frame, HandFrame, Trial, Vec3};

/// Default onset speed threshold (m/s).
pub const ONSET_THRESHOLD: f64 = 0.03;
/// Samples the speed must stay above the threshold to count as onset.
pub const ONSET_DEBOUNCE: usize = 3;
/// Nominal tracking rate (Hz).
pub const NOMINAL_RATE: f64 = 60.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KinematicsError {
    #[error("need at least {needed} samples, got {got}")]
    TooFewFrames { needed: usize, got: usize },
    #[error("invalid Savitzky-Golay spec: {0}")]
    BadSpec(String),
    #[error("rate must be positive, got {0}")]
    BadRate(f64),
    #[error("speed never exceeds the onset threshold")]
    NotMoving,
    #[error("frame {0} has no left hand")]
    MissingHand(usize),
}

/// Savitzky-Golay filter parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SavgolSpec {
    pub window_length: usize,
    pub poly_order: usize,
    pub deriv_order: usize,
    /// Sample spacing (s).
    pub dt: f64,
}

impl SavgolSpec {
    pub fn new(window_length: usize, poly_order: usize, deriv_order: usize, dt: f64) -> Result<Self, KinematicsError> {
        let spec = Self { window_length, poly_order, deriv_order, dt };
        spec.check()?;
        Ok(spec)
    }

    /// Window 7, cubic, first derivative.
    pub fn velocity(dt: f64) -> Self {
        Self { window_length: 7, poly_order: 3, deriv_order: 1, dt }
    }

    pub fn with_dt(self, dt: f64) -> Self {
        Self { dt, ..self }
    }

    pub fn with_deriv(self, deriv_order: usize) -> Self {
        Self { deriv_order, ..self }
    }

    fn check(&self) -> Result<(), KinematicsError> {
        let bad = |m: String| Err(KinematicsError::BadSpec(m));
        if self.window_length < 3 || self.window_length.is_multiple_of(2) {
            return bad(format!("window_length {} must be odd and >= 3", self.window_length));
        }
        if self.poly_order >= self.window_length {
            return bad(format!("poly_order {} must be below window_length {}", self.poly_order, self.window_length));
        }
        if self.deriv_order > 1 || self.deriv_order > self.poly_order {
            return bad(format!("deriv_order {} must be 0 or 1 and <= poly_order", self.deriv_order));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt {} must be positive", self.dt));
        }
        Ok(())
    }

    /// Least-squares weights evaluating the fitted polynomial (or its
    /// derivative) at window position `pos` (0-based).
    fn weights_at(&self, pos: usize) -> Vec<f64> {
        let (w, p) = (self.window_length, self.poly_order);
        let a = DMatrix::from_fn(w, p + 1, |i, j| (i as f64 - pos as f64).powi(j as i32));
        let normal = a.transpose() * &a;
        let solve = normal.lu().solve(&a.transpose()).expect("Vandermonde normal matrix is regular");
        let scale = if self.deriv_order == 1 { 1.0 / self.dt } else { 1.0 };
        (0..w).map(|i| solve[(self.deriv_order, i)] * scale).collect()
    }
}

/// The centred convolution weights, scaled by `dt^-deriv_order`.
pub fn savgol_coefficients(spec: &SavgolSpec) -> Result<Vec<f64>, KinematicsError> {
    spec.check()?;
    Ok(spec.weights_at(spec.window_length / 2))
}

/// Filters a uniformly sampled signal. Edge samples use one-sided fits over
/// the first/last full window, so the output has the input's length.
pub fn savgol_filter(values: &[f64], spec: &SavgolSpec) -> Result<Vec<f64>, KinematicsError> {
    spec.check()?;
    let w = spec.window_length;
    let n = values.len();
    if n < w {
        return Err(KinematicsError::TooFewFrames { needed: w, got: n });
    }
    let half = w / 2;
    let table: Vec<Vec<f64>> = (0..w).map(|pos| spec.weights_at(pos)).collect();
    let apply = |start: usize, weights: &[f64]| -> f64 {
        values[start..start + w].iter().zip(weights).map(|(v, c)| v * c).sum()
    };
    Ok((0..n)
        .map(|k| {
            if k < half {
                apply(0, &table[k])
            } else if k + half >= n {
                apply(n - w, &table[k - (n - w)])
            } else {
                apply(k - half, &table[half])
            }
        })
        .collect())
}

/// Per-axis [`savgol_filter`] of a vector signal.
pub fn savgol_filter_vec(values: &[Vec3], spec: &SavgolSpec) -> Result<Vec<Vec3>, KinematicsError> {
    let axis = |i: usize| savgol_filter(&values.iter().map(|v| v[i]).collect::<Vec<_>>(), spec);
    let (x, y, z) = (axis(0)?, axis(1)?, axis(2)?);
    Ok((0..values.len()).map(|k| Vec3::new(x[k], y[k], z[k])).collect())
}

/// Samples on a uniform time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformSeries<T> {
    pub t0: f64,
    pub dt: f64,
    pub values: Vec<T>,
}

impl<T> UniformSeries<T> {
    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Right,
    Left,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HandPoint {
    Palm,
    TipThumb,
    TipIndex,
    TipMiddle,
    TipRing,
    TipPinky,
    ProxThumb,
    ProxIndex,
}

/// Selects one tracked point of a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Channel {
    Hand(Side, HandPoint),
    Object,
}

impl Channel {
    pub const RIGHT_PALM: Channel = Channel::Hand(Side::Right, HandPoint::Palm);

    fn get(self, index: usize, f: &Frame) -> Result<Vec3, KinematicsError> {
        let hand = |side: Side| -> Result<&HandFrame, KinematicsError> {
            match side {
                Side::Right => Ok(&f.right),
                Side::Left => f.left.as_ref().ok_or(KinematicsError::MissingHand(index)),
            }
        };
        Ok(match self {
            Channel::Object => f.object_center,
            Channel::Hand(side, point) => {
                let h = hand(side)?;
                match point {
                    HandPoint::Palm => h.palm_center,
                    HandPoint::TipThumb => h.tip_thumb,
                    HandPoint::TipIndex => h.tip_index,
                    HandPoint::TipMiddle => h.tip_middle,
                    HandPoint::TipRing => h.tip_ring,
                    HandPoint::TipPinky => h.tip_pinky,
                    HandPoint::ProxThumb => h.prox_thumb,
                    HandPoint::ProxIndex => h.prox_index,
                }
            }
        })
    }
}

/// Linearly interpolates a channel onto a uniform grid spanning
/// `[t_first, t_last]`.
///
/// The grid spacing is `span / round(span * rate)` so that both endpoints are
/// grid points; it equals `1 / rate` whenever the span is a whole number of
/// periods.
pub fn resample_uniform(frames: &[Frame], rate: f64, channel: Channel) -> Result<UniformSeries<Vec3>, KinematicsError> {
    if frames.len() < 2 {
        return Err(KinematicsError::TooFewFrames { needed: 2, got: frames.len() });
    }
    let points = frames.iter().enumerate().map(|(i, f)| channel.get(i, f)).collect::<Result<Vec<_>, _>>()?;
    let times: Vec<f64> = frames.iter().map(|f| f.t).collect();
    resample_points(&times, &points, rate)
}

/// [`resample_uniform`] on a bare point series with strictly increasing
/// `times`.
pub fn resample_points(times: &[f64], points: &[Vec3], rate: f64) -> Result<UniformSeries<Vec3>, KinematicsError> {
    let n = times.len().min(points.len());
    if n < 2 {
        return Err(KinematicsError::TooFewFrames { needed: 2, got: n });
    }
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(KinematicsError::BadRate(rate));
    }
    let (t0, t1) = (times[0], times[n - 1]);
    let intervals = ((t1 - t0) * rate).round().max(1.0) as usize;
    let dt = (t1 - t0) / intervals as f64;
    let mut values = Vec::with_capacity(intervals + 1);
    let mut j = 0;
    for k in 0..=intervals {
        if k == intervals {
            values.push(points[n - 1]);
            break;
        }
        let t = t0 + k as f64 * dt;
        while j + 2 < n && times[j + 1] <= t {
            j += 1;
        }
        let (a, b) = (times[j], times[j + 1]);
        let s = ((t - a) / (b - a)).clamp(0.0, 1.0);
        values.push(if s == 0.0 { points[j] } else { points[j].lerp(points[j + 1], s) });
    }
    Ok(UniformSeries { t0, dt, values })
}

/// Savitzky-Golay speed of a bare point series resampled at `rate`.
pub fn speed_profile_points(times: &[f64], points: &[Vec3], spec: &SavgolSpec, rate: f64) -> Result<UniformSeries<f64>, KinematicsError> {
    let series = resample_points(times, points, rate)?;
    let spec = spec.with_dt(series.dt).with_deriv(1);
    let velocity = savgol_filter_vec(&series.values, &spec)?;
    Ok(UniformSeries { t0: series.t0, dt: series.dt, values: velocity.into_iter().map(Vec3::norm).collect() })
}

/// Savitzky-Golay speed (m/s) of the right palm resampled at `rate`. The
/// spec's `dt` is replaced by the resampled grid spacing.
pub fn speed_profile_frames(frames: &[Frame], spec: &SavgolSpec, rate: f64) -> Result<UniformSeries<f64>, KinematicsError> {
    let times: Vec<f64> = frames.iter().map(|f| f.t).collect();
    let points: Vec<Vec3> = frames.iter().map(|f| f.right.palm_center).collect();
    speed_profile_points(&times, &points, spec, rate)
}

pub fn speed_profile(trial: &Trial, spec: &SavgolSpec, rate: f64) -> Result<UniformSeries<f64>, KinematicsError> {
    speed_profile_frames(trial.frames(), spec, rate)
}

/// First sample whose speed exceeds `threshold` and stays above it for
/// `debounce` consecutive samples (itself included).
pub fn detect_onset_with(speed: &UniformSeries<f64>, threshold: f64, debounce: usize) -> Result<usize, KinematicsError> {
    let v = &speed.values;
    let need = debounce.max(1);
    let mut run = 0;
    for (i, &s) in v.iter().enumerate() {
        if s > threshold {
            run += 1;
            if run == need {
                return Ok(i + 1 - need);
            }
        } else {
            run = 0;
        }
    }
    Err(KinematicsError::NotMoving)
}

pub fn detect_onset(speed: &UniformSeries<f64>, threshold: f64) -> Result<usize, KinematicsError> {
    detect_onset_with(speed, threshold, ONSET_DEBOUNCE)
}

/// Velocity of one hand's palm at every recorded frame (m/s).
///
/// Uses the Savitzky-Golay derivative on the resampled palm path,
/// interpolated back to the frame times; falls back to finite differences
/// when the trial is shorter than the filter window.
pub fn palm_velocities(frames: &[Frame], side: Side, spec: &SavgolSpec, rate: f64) -> Result<Vec<Vec3>, KinematicsError> {
    let channel = Channel::Hand(side, HandPoint::Palm);
    let series = resample_uniform(frames, rate, channel)?;
    if series.len() < spec.window_length {
        let p = frames.iter().enumerate().map(|(i, f)| channel.get(i, f)).collect::<Result<Vec<_>, _>>()?;
        let n = p.len();
        return Ok((0..n)
            .map(|i| {
                let (a, b) = (i.saturating_sub(1), (i + 1).min(n - 1));
                (p[b] - p[a]) / (frames[b].t - frames[a].t)
            })
            .collect());
    }
    let v = savgol_filter_vec(&series.values, &spec.with_dt(series.dt).with_deriv(1))?;
    Ok(frames
        .iter()
        .map(|f| {
            let x = ((f.t - series.t0) / series.dt).clamp(0.0, (v.len() - 1) as f64);
            let k = (x.floor() as usize).min(v.len() - 2);
            v[k].lerp(v[k + 1], x - k as f64)
        })
        .collect())
}
