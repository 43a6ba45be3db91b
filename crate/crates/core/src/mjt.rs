//! Minimum-jerk trajectory model and bounded least-squares recovery of the
//! final position and movement duration.
//!
//! A rest-to-rest minimum-jerk reach from `x0` to `xf` over `tf` seconds
//! follows `x(t) = x0 + (xf - x0) s(tau)` with `tau = (t - t0) / tf` and
//! `s(tau) = 6 tau^5 - 15 tau^4 + 10 tau^3`, applied per axis with a shared
//! duration.

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trajectory::Vec3;

/// Half-width of the box around the last known position (m).
pub const XF_HALF_WIDTH: f64 = 0.5;
/// Smallest admissible remaining duration (s); keeps `tau` away from 0/0.
pub const MIN_REMAINING: f64 = 0.02;
/// Largest admissible remaining duration (s).
pub const MAX_REMAINING: f64 = 2.0;
/// Initial remaining-duration guesses, one optimizer start each (s).
pub const START_REMAINING: [f64; 4] = [0.25, 0.75, 1.25, 1.75];
/// Optimizer iteration cap per start.
pub const MAX_ITERATIONS: usize = 200;
/// Minimum number of observations at or after onset.
pub const MIN_POINTS: usize = 4;
/// Observations that never leave a ball of this radius carry no
/// information about the target.
const MIN_SPREAD: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MjtParams {
    pub x0: Vec3,
    pub xf: Vec3,
    /// Onset time (s).
    pub t0: f64,
    /// Movement duration measured from `t0` (s).
    pub tf: f64,
}

impl MjtParams {
    pub fn end_time(&self) -> f64 {
        self.t0 + self.tf
    }

    fn tau(&self, t: f64) -> f64 {
        ((t - self.t0) / self.tf).clamp(0.0, 1.0)
    }
}

/// `6 tau^5 - 15 tau^4 + 10 tau^3` with `tau` clamped to `[0, 1]`.
pub fn quintic_blend(tau: f64) -> f64 {
    let t = tau.clamp(0.0, 1.0);
    t * t * t * (10.0 + t * (-15.0 + 6.0 * t))
}

/// Derivative of [`quintic_blend`] in `tau`; zero outside `[0, 1]`.
pub fn quintic_rate(tau: f64) -> f64 {
    if !(0.0..=1.0).contains(&tau) {
        return 0.0;
    }
    30.0 * tau * tau * (1.0 + tau * (-2.0 + tau))
}

pub fn mjt_position(p: &MjtParams, t: f64) -> Vec3 {
    if t >= p.end_time() {
        return p.xf;
    }
    p.x0 + (p.xf - p.x0) * quintic_blend(p.tau(t))
}

pub fn mjt_velocity(p: &MjtParams, t: f64) -> Vec3 {
    let tau = (t - p.t0) / p.tf;
    (p.xf - p.x0) * (quintic_rate(tau) / p.tf)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MjtFit {
    pub params: MjtParams,
    /// Root-mean-square 3-D residual over the fitted points (m).
    pub residual_rms: f64,
    pub n_points: usize,
    /// False only when every start hit the iteration cap.
    pub converged: bool,
    pub starts_tried: usize,
    /// Residual RMS of each start's initial guess, in start order.
    pub start_residuals: Vec<f64>,
}

impl MjtFit {
    /// Remaining duration after `now`, clamped at zero.
    pub fn remaining(&self, now: f64) -> f64 {
        (self.params.end_time() - now).max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MjtError {
    #[error("need at least {needed} observations after onset, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("current time {now} precedes the last observation at {last}")]
    NowBeforeData { now: f64, last: f64 },
    #[error("no feasible minimum-jerk fit")]
    NoFeasibleFit,
}

/// Box reparameterization: every free parameter is a scaled sigmoid of an
/// unconstrained variable.
#[derive(Debug, Clone, Copy)]
struct Bounds {
    center: Vec3,
    t0: f64,
    now: f64,
}

impl Bounds {
    fn xf(&self, z: &Vector4<f64>) -> Vec3 {
        self.center + Vec3::new(z[0], z[1], z[2]).map(|a| XF_HALF_WIDTH * (0.5 * a).tanh())
    }

    fn remaining(&self, z: &Vector4<f64>) -> f64 {
        MIN_REMAINING + (MAX_REMAINING - MIN_REMAINING) * sigmoid(z[3])
    }

    fn tf(&self, z: &Vector4<f64>) -> f64 {
        self.now + self.remaining(z) - self.t0
    }

    /// d xf_k / d z_k and d tf / d z_3.
    fn chain(&self, z: &Vector4<f64>) -> Vector4<f64> {
        let dx = |a: f64| {
            let th = (0.5 * a).tanh();
            0.5 * XF_HALF_WIDTH * (1.0 - th * th)
        };
        let s = sigmoid(z[3]);
        Vector4::new(dx(z[0]), dx(z[1]), dx(z[2]), (MAX_REMAINING - MIN_REMAINING) * s * (1.0 - s))
    }

    fn encode_xf(&self, xf: Vec3) -> [f64; 3] {
        let lim = 1.0 - 1e-9;
        let d = (xf - self.center).map(|v| (v / XF_HALF_WIDTH).clamp(-lim, lim));
        [2.0 * d.x.atanh(), 2.0 * d.y.atanh(), 2.0 * d.z.atanh()]
    }

    fn encode_remaining(&self, r: f64) -> f64 {
        let u = ((r - MIN_REMAINING) / (MAX_REMAINING - MIN_REMAINING)).clamp(1e-12, 1.0 - 1e-12);
        (u / (1.0 - u)).ln()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

struct Problem<'a> {
    points: &'a [(f64, Vec3)],
    x0: Vec3,
    bounds: Bounds,
}

impl Problem<'_> {
    fn cost(&self, z: &Vector4<f64>) -> f64 {
        let xf = self.bounds.xf(z);
        let tf = self.bounds.tf(z);
        let p = MjtParams { x0: self.x0, xf, t0: self.bounds.t0, tf };
        self.points.iter().map(|&(t, obs)| (mjt_position(&p, t) - obs).norm_squared()).sum()
    }

    /// Gauss-Newton normal equations `J^T J` and `J^T r` in the unconstrained
    /// variables, plus the cost.
    fn normal_equations(&self, z: &Vector4<f64>) -> (Matrix4<f64>, Vector4<f64>, f64) {
        let xf = self.bounds.xf(z);
        let tf = self.bounds.tf(z);
        let d = xf - self.x0;
        let chain = self.bounds.chain(z);
        let mut jtj = Matrix4::zeros();
        let mut jtr = Vector4::zeros();
        let mut cost = 0.0;
        for &(t, obs) in self.points {
            let tau = ((t - self.bounds.t0) / tf).clamp(0.0, 1.0);
            let s = quintic_blend(tau);
            let dtf = -quintic_rate(tau) * tau / tf;
            for k in 0..3 {
                let r = self.x0[k] + d[k] * s - obs[k];
                let mut row = Vector4::zeros();
                row[k] = s * chain[k];
                row[3] = d[k] * dtf * chain[3];
                jtj += row * row.transpose();
                jtr += row * r;
                cost += r * r;
            }
        }
        (jtj, jtr, cost)
    }
}

struct StartOutcome {
    z: Vector4<f64>,
    cost: f64,
    converged: bool,
}

fn levenberg_marquardt(problem: &Problem, mut z: Vector4<f64>) -> StartOutcome {
    let mut mu = 1e-3;
    let (mut jtj, mut jtr, mut cost) = problem.normal_equations(&z);
    if !cost.is_finite() {
        return StartOutcome { z, cost, converged: false };
    }
    for _ in 0..MAX_ITERATIONS {
        if jtr.amax() <= 1e-15 * (1.0 + cost) || cost <= 1e-30 {
            return StartOutcome { z, cost, converged: true };
        }
        let mut accepted = false;
        while mu < 1e16 {
            let mut a = jtj;
            for i in 0..4 {
                a[(i, i)] += mu * (1.0 + jtj[(i, i)]);
            }
            let Some(step) = a.cholesky().map(|c| c.solve(&(-jtr))) else {
                mu *= 10.0;
                continue;
            };
            let candidate = z + step;
            let new_cost = problem.cost(&candidate);
            if new_cost.is_finite() && new_cost < cost {
                let small_step = step.amax() <= 1e-12 * (1.0 + z.amax());
                let small_gain = cost - new_cost <= 1e-14 * cost;
                z = candidate;
                (jtj, jtr, cost) = problem.normal_equations(&z);
                mu = (mu * 0.3).max(1e-12);
                accepted = true;
                if small_step || small_gain {
                    return StartOutcome { z, cost, converged: true };
                }
                break;
            }
            mu *= 10.0;
        }
        if !accepted {
            // No descent direction left at any damping: a stationary point.
            return StartOutcome { z, cost, converged: true };
        }
    }
    StartOutcome { z, cost, converged: false }
}

/// Fits `xf` and `tf` to palm observations with `x0` and `t0` held fixed.
///
/// Only observations at or after `t0` enter the fit. Each `xf` axis is
/// bounded to `last_known +- 0.5 m` and the remaining duration
/// `t0 + tf - now` to `[0.02, 2] s`. Four starts are run and the lowest
/// residual wins (ties go to the earlier start).
pub fn fit_mjt(observed: &[(f64, Vec3)], t0: f64, x0: Vec3, last_known: Vec3, now: f64) -> Result<MjtFit, MjtError> {
    let first = observed.partition_point(|&(t, _)| t < t0);
    let points = &observed[first..];
    if points.len() < MIN_POINTS {
        return Err(MjtError::TooFewPoints { needed: MIN_POINTS, got: points.len() });
    }
    let last = points[points.len() - 1].0;
    if now < last {
        return Err(MjtError::NowBeforeData { now, last });
    }
    let reference = points[0].1;
    if points.iter().all(|&(_, p)| p.distance(reference) <= MIN_SPREAD) {
        return Err(MjtError::NoFeasibleFit);
    }
    let bounds = Bounds { center: last_known, t0, now };
    let problem = Problem { points, x0, bounds };

    let mut best: Option<StartOutcome> = None;
    let mut start_residuals = Vec::with_capacity(START_REMAINING.len());
    let mut any_converged = false;
    let rms = |cost: f64| (cost / points.len() as f64).sqrt();
    for &remaining in &START_REMAINING {
        let tf = now + remaining - t0;
        let xf = closed_form_target(points, t0, tf, x0);
        let [a, b, c] = bounds.encode_xf(xf);
        let z = Vector4::new(a, b, c, bounds.encode_remaining(remaining));
        start_residuals.push(rms(problem.cost(&z)));
        let outcome = levenberg_marquardt(&problem, z);
        if !outcome.cost.is_finite() {
            continue;
        }
        any_converged |= outcome.converged;
        if best.as_ref().is_none_or(|b| outcome.cost < b.cost) {
            best = Some(outcome);
        }
    }
    let best = best.ok_or(MjtError::NoFeasibleFit)?;
    let params = MjtParams { x0, xf: bounds.xf(&best.z), t0, tf: bounds.tf(&best.z) };
    let offset = params.xf - last_known;
    assert!(
        offset.x.abs() <= XF_HALF_WIDTH && offset.y.abs() <= XF_HALF_WIDTH && offset.z.abs() <= XF_HALF_WIDTH,
        "fitted target left its box"
    );
    Ok(MjtFit {
        params,
        residual_rms: rms(best.cost),
        n_points: points.len(),
        converged: any_converged,
        starts_tried: START_REMAINING.len(),
        start_residuals,
    })
}

/// Least-squares `xf` for a fixed duration (linear in `xf`).
fn closed_form_target(points: &[(f64, Vec3)], t0: f64, tf: f64, x0: Vec3) -> Vec3 {
    let (mut num, mut den) = (Vec3::ZERO, 0.0);
    for &(t, p) in points {
        let s = quintic_blend((t - t0) / tf);
        num += (p - x0) * s;
        den += s * s;
    }
    if den <= f64::MIN_POSITIVE {
        return points[points.len() - 1].1;
    }
    x0 + num / den
}
