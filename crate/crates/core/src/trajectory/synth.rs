//! Synthetic minimum-jerk trials.
//!
//! The palm follows the exact quintic rest-to-rest profile, so every
//! downstream estimator can be checked against the generating parameters.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Dataset, Frame, HandFrame, SizeLabel, Trial, TrialMeta, ValidationError, Vec3};
use crate::mjt::quintic_blend;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("duration must be positive, got {0}")]
    NonPositiveDuration(f64),
    #[error("sample rate must be positive, got {0}")]
    NonPositiveRate(f64),
    #[error("noise sigma must be non-negative, got {0}")]
    NegativeNoise(f64),
    #[error("rest period must be non-negative, got {0}")]
    NegativeRest(f64),
    #[error("timestamp jitter {jitter} s too large for {rate} Hz (limit {limit} s)")]
    JitterTooLarge { jitter: f64, rate: f64, limit: f64 },
    #[error("invalid range {name}: ({lo}, {hi})")]
    BadRange { name: &'static str, lo: f64, hi: f64 },
    #[error("{0} must not be empty")]
    Empty(&'static str),
    #[error("generated trial failed validation: {0}")]
    Invalid(#[from] ValidationError),
}

/// Finger configuration relative to the palm center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HandPose {
    /// Thumb, index, middle, ring, pinky tips minus palm center (m).
    pub tips: [Vec3; 5],
    pub prox_thumb: Vec3,
    pub prox_index: Vec3,
    pub index_local_z: Vec3,
}

impl HandPose {
    /// Flat, spread hand.
    pub fn open() -> Self {
        Self {
            tips: [
                Vec3::new(0.065, 0.0, 0.06),
                Vec3::new(0.025, 0.0, 0.175),
                Vec3::new(0.0, 0.0, 0.185),
                Vec3::new(-0.022, 0.0, 0.17),
                Vec3::new(-0.042, 0.0, 0.14),
            ],
            prox_thumb: Vec3::new(0.04, -0.005, 0.025),
            prox_index: Vec3::new(0.022, 0.0, 0.095),
            index_local_z: Vec3::new(0.0, 0.0, 1.0),
        }
    }

    /// Power grasp around a mid-sized object.
    pub fn grasp() -> Self {
        Self {
            tips: [
                Vec3::new(0.035, -0.035, 0.1),
                Vec3::new(0.015, -0.06, 0.115),
                Vec3::new(-0.002, -0.065, 0.11),
                Vec3::new(-0.02, -0.06, 0.1),
                Vec3::new(-0.035, -0.05, 0.085),
            ],
            prox_thumb: Vec3::new(0.04, -0.01, 0.03),
            prox_index: Vec3::new(0.02, -0.005, 0.095),
            index_local_z: Vec3::new(0.0, -0.6, 0.8),
        }
    }

    /// Linear blend of every offset; the index axis is renormalized.
    pub fn blend(&self, other: &HandPose, s: f64) -> HandPose {
        let mut tips = self.tips;
        for (t, o) in tips.iter_mut().zip(other.tips) {
            *t = t.lerp(o, s);
        }
        HandPose {
            tips,
            prox_thumb: self.prox_thumb.lerp(other.prox_thumb, s),
            prox_index: self.prox_index.lerp(other.prox_index, s),
            index_local_z: self
                .index_local_z
                .lerp(other.index_local_z, s)
                .normalized()
                .unwrap_or(other.index_local_z),
        }
    }

    /// Applies `f` to every offset and the index axis (e.g. a rotation).
    pub fn transformed(&self, f: impl Fn(Vec3) -> Vec3) -> HandPose {
        HandPose {
            tips: self.tips.map(&f),
            prox_thumb: f(self.prox_thumb),
            prox_index: f(self.prox_index),
            index_local_z: f(self.index_local_z).normalized().unwrap_or(self.index_local_z),
        }
    }

    /// Scales the offsets only; the index axis keeps its direction.
    pub fn scaled(&self, k: f64) -> HandPose {
        HandPose {
            tips: self.tips.map(|t| t * k),
            prox_thumb: self.prox_thumb * k,
            prox_index: self.prox_index * k,
            index_local_z: self.index_local_z,
        }
    }

    fn place(&self, palm: Vec3) -> HandFrame {
        HandFrame {
            palm_center: palm,
            tip_thumb: palm + self.tips[0],
            tip_index: palm + self.tips[1],
            tip_middle: palm + self.tips[2],
            tip_ring: palm + self.tips[3],
            tip_pinky: palm + self.tips[4],
            prox_thumb: palm + self.prox_thumb,
            prox_index: palm + self.prox_index,
            index_local_z: self.index_local_z,
        }
    }
}

/// Parameters of one synthetic reach.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub x0: Vec3,
    pub xf: Vec3,
    /// Movement duration (s).
    pub duration: f64,
    /// Nominal frame rate (Hz).
    pub sample_rate: f64,
    /// Gaussian position noise per axis on every tracked point (m).
    pub noise_sigma: f64,
    /// Constant offset added to the whole hand (m).
    pub user_bias: Vec3,
    /// Gaussian timestamp jitter (s); clamped to ±0.4 frame.
    pub jitter_sigma: f64,
    pub seed: u64,
    /// Stationary lead-in before the movement starts (s).
    pub rest_before: f64,
    pub open_pose: HandPose,
    pub grasp_pose: HandPose,
    /// Object location; defaults to `xf`.
    pub object_center: Option<Vec3>,
    /// Position of a resting left hand, if one is tracked.
    pub left_hand: Option<Vec3>,
}

impl SynthConfig {
    pub fn new(x0: Vec3, xf: Vec3, duration: f64) -> Self {
        Self {
            x0,
            xf,
            duration,
            sample_rate: 60.0,
            noise_sigma: 0.0,
            user_bias: Vec3::ZERO,
            jitter_sigma: 0.0,
            seed: 0,
            rest_before: 0.0,
            open_pose: HandPose::open(),
            grasp_pose: HandPose::grasp(),
            object_center: None,
            left_hand: None,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(ConfigError::NonPositiveDuration(self.duration));
        }
        if !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) {
            return Err(ConfigError::NonPositiveRate(self.sample_rate));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(ConfigError::NegativeNoise(self.noise_sigma));
        }
        if !(self.rest_before >= 0.0) {
            return Err(ConfigError::NegativeRest(self.rest_before));
        }
        let limit = 0.1 / self.sample_rate;
        if !(self.jitter_sigma >= 0.0 && self.jitter_sigma <= limit) {
            return Err(ConfigError::JitterTooLarge { jitter: self.jitter_sigma, rate: self.sample_rate, limit });
        }
        Ok(())
    }

    /// Noise-free palm position at `t` (including the user bias).
    pub fn palm_profile(&self, t: f64) -> Vec3 {
        let s = quintic_blend((t - self.rest_before) / self.duration);
        self.x0 + (self.xf - self.x0) * s + self.user_bias
    }

    /// Time of contact: end of the movement.
    pub fn grasp_time(&self) -> f64 {
        self.rest_before + self.duration
    }

    fn timestamps(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let total = self.grasp_time();
        let intervals_f = total * self.sample_rate;
        let intervals = intervals_f.round().max(1.0) as usize;
        let on_grid = (intervals_f - intervals as f64).abs() < 1e-9;
        let nominal = |i: usize| {
            if on_grid {
                i as f64 / self.sample_rate
            } else {
                i as f64 * total / intervals as f64
            }
        };
        let step = total / intervals as f64;
        let jitter = Normal::new(0.0, self.jitter_sigma).expect("validated sigma");
        (0..=intervals)
            .map(|i| {
                let t = if i == intervals { total } else { nominal(i) };
                if i == 0 || i == intervals || self.jitter_sigma == 0.0 {
                    t
                } else {
                    t + jitter.sample(rng).clamp(-0.4 * step, 0.4 * step)
                }
            })
            .collect()
    }
}

fn noisy(p: Vec3, noise: &Normal<f64>, rng: &mut ChaCha8Rng) -> Vec3 {
    p + Vec3::new(noise.sample(rng), noise.sample(rng), noise.sample(rng))
}

fn noisy_hand(h: HandFrame, noise: &Normal<f64>, rng: &mut ChaCha8Rng) -> HandFrame {
    HandFrame {
        palm_center: noisy(h.palm_center, noise, rng),
        tip_thumb: noisy(h.tip_thumb, noise, rng),
        tip_index: noisy(h.tip_index, noise, rng),
        tip_middle: noisy(h.tip_middle, noise, rng),
        tip_ring: noisy(h.tip_ring, noise, rng),
        tip_pinky: noisy(h.tip_pinky, noise, rng),
        prox_thumb: noisy(h.prox_thumb, noise, rng),
        prox_index: noisy(h.prox_index, noise, rng),
        index_local_z: h.index_local_z,
    }
}

/// Generates one trial. `meta.grasp_time` is replaced by the end of the
/// movement (`rest_before + duration`).
///
/// Fingertips sit at the palm plus pose offsets that blend linearly from the
/// open to the grasp pose while the palm moves. Every tracked point receives
/// independent noise; the palm noise is added after the bias.
pub fn synth_trial(config: &SynthConfig, meta: TrialMeta) -> Result<Trial, ConfigError> {
    config.validate()?;
    let mut rng = rng::stream(config.seed, &[0x5EED]);
    let times = config.timestamps(&mut rng);
    let noise = Normal::new(0.0, config.noise_sigma).expect("validated sigma");
    let object = config.object_center.unwrap_or(config.xf);
    let frames = times
        .iter()
        .map(|&t| {
            let progress = ((t - config.rest_before) / config.duration).clamp(0.0, 1.0);
            let pose = config.open_pose.blend(&config.grasp_pose, progress);
            let palm = config.palm_profile(t);
            let mut right = pose.place(palm);
            if config.noise_sigma > 0.0 {
                right = noisy_hand(right, &noise, &mut rng);
            }
            let left = config.left_hand.map(|rest| {
                let hand = HandPose::open().place(rest);
                if config.noise_sigma > 0.0 { noisy_hand(hand, &noise, &mut rng) } else { hand }
            });
            Frame { t, object_center: object, right, left }
        })
        .collect();
    let meta = TrialMeta { grasp_time: config.grasp_time(), ..meta };
    Ok(Trial::new(meta, frames)?)
}

/// A population of users reaching for labelled objects.
///
/// Labels shape the grasp pose: each object has its own finger template, size
/// scales the pose and task yaws it about the vertical axis. Per-user offsets
/// of the fingertips (`user_style_sigma`) model individual grasping styles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FamilyConfig {
    pub n_users: usize,
    pub trials_per_user: usize,
    pub sample_rate: f64,
    pub noise_sigma: f64,
    pub jitter_sigma: f64,
    /// Movement duration range (s).
    pub duration: (f64, f64),
    /// Lead-in rest range (s).
    pub rest: (f64, f64),
    /// Per-user constant palm offset, per-axis sigma (m).
    pub user_bias_sigma: f64,
    /// Per-user constant fingertip offsets, per-axis sigma (m).
    pub user_style_sigma: f64,
    /// Per-axis spread of the object finger templates (m).
    pub class_separation: f64,
    pub objects: Vec<String>,
    pub tasks: Vec<String>,
    pub sizes: Vec<SizeLabel>,
    pub both_hands: bool,
    pub seed: u64,
}

impl Default for FamilyConfig {
    fn default() -> Self {
        Self {
            n_users: 6,
            trials_per_user: 10,
            sample_rate: 60.0,
            noise_sigma: 0.005,
            jitter_sigma: 0.001,
            duration: (0.9, 1.4),
            rest: (1.2, 1.6),
            user_bias_sigma: 0.02,
            user_style_sigma: 0.0,
            class_separation: 0.02,
            objects: vec!["Cube".into(), "Cylinder".into(), "Sphere".into()],
            tasks: vec!["Hold".into(), "Pull".into(), "Push".into()],
            sizes: SizeLabel::ALL.to_vec(),
            both_hands: false,
            seed: 0,
        }
    }
}

const TEMPLATE_STREAM: u64 = 0x0B1E_C7;
const USER_STREAM: u64 = 0x05E2;
const TRIAL_STREAM: u64 = 0x7121;

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo { rng.random_range(lo..hi) } else { lo }
}

fn gaussian_vec(rng: &mut ChaCha8Rng, sigma: f64) -> Vec3 {
    if sigma == 0.0 {
        return Vec3::ZERO;
    }
    let n = Normal::new(0.0, sigma).expect("non-negative sigma");
    Vec3::new(n.sample(rng), n.sample(rng), n.sample(rng))
}

fn yaw(angle: f64) -> impl Fn(Vec3) -> Vec3 {
    let (s, c) = angle.sin_cos();
    move |v: Vec3| Vec3::new(c * v.x + s * v.z, v.y, -s * v.x + c * v.z)
}

fn size_scale(size: SizeLabel) -> f64 {
    match size {
        SizeLabel::Small => 0.75,
        SizeLabel::Medium => 1.0,
        SizeLabel::Large => 1.25,
    }
}

impl FamilyConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.objects.is_empty() {
            return Err(ConfigError::Empty("objects"));
        }
        if self.tasks.is_empty() {
            return Err(ConfigError::Empty("tasks"));
        }
        if self.sizes.is_empty() {
            return Err(ConfigError::Empty("sizes"));
        }
        if self.n_users == 0 || self.trials_per_user == 0 {
            return Err(ConfigError::Empty("n_users * trials_per_user"));
        }
        for (name, (lo, hi)) in [("duration", self.duration), ("rest", self.rest)] {
            if !(lo <= hi && lo >= 0.0) {
                return Err(ConfigError::BadRange { name, lo, hi });
            }
        }
        if !(self.duration.0 > 0.0) {
            return Err(ConfigError::NonPositiveDuration(self.duration.0));
        }
        Ok(())
    }

    /// Grasp pose of an object template before size and task are applied.
    fn object_template(&self, object: usize) -> HandPose {
        let mut rng = rng::stream(TEMPLATE_STREAM, &[object as u64]);
        let base = HandPose::grasp();
        let mut tips = base.tips;
        for t in &mut tips {
            *t += Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ) * self.class_separation;
        }
        HandPose { tips, ..base }
    }

    fn label_combo(&self, user: usize, trial: usize) -> (usize, SizeLabel, usize) {
        let n_combo = self.objects.len() * self.sizes.len() * self.tasks.len();
        let c = (trial + user * 7) % n_combo;
        let object = c % self.objects.len();
        let size = self.sizes[(c / self.objects.len()) % self.sizes.len()];
        let task = c / (self.objects.len() * self.sizes.len());
        (object, size, task)
    }

    /// Builds the per-trial generator configuration and labels.
    pub fn trial_config(&self, user: usize, trial: usize) -> (SynthConfig, TrialMeta) {
        let mut user_rng = rng::stream(self.seed, &[USER_STREAM, user as u64]);
        let user_bias = gaussian_vec(&mut user_rng, self.user_bias_sigma);
        let style: Vec<Vec3> = (0..7).map(|_| gaussian_vec(&mut user_rng, self.user_style_sigma)).collect();

        let mut rng = rng::stream(self.seed, &[TRIAL_STREAM, user as u64, trial as u64]);
        let (object, size, task) = self.label_combo(user, trial);
        let n_tasks = self.tasks.len() as f64;
        let heading = (task as f64 - (n_tasks - 1.0) / 2.0) * 0.8;
        let turn = yaw(heading);
        let scale = size_scale(size);
        let styled = |p: HandPose| HandPose {
            tips: [0, 1, 2, 3, 4].map(|i| p.tips[i] + style[i]),
            prox_thumb: p.prox_thumb + style[5],
            prox_index: p.prox_index + style[6],
            index_local_z: p.index_local_z,
        };
        let grasp_pose = styled(self.object_template(object).scaled(scale).transformed(&turn));
        let open_pose = styled(HandPose::open().transformed(&turn));

        let x0 = Vec3::new(0.0, 0.95, 0.1)
            + Vec3::new(
                rng.random_range(-0.03..0.03),
                rng.random_range(-0.03..0.03),
                rng.random_range(-0.03..0.03),
            );
        let xf = Vec3::new(
            rng.random_range(-0.25..0.25),
            rng.random_range(0.85..1.15),
            rng.random_range(0.35..0.6),
        );
        let duration = uniform(&mut rng, self.duration);
        let rest_before = uniform(&mut rng, self.rest);
        let seed = rng.random();
        let config = SynthConfig {
            x0,
            xf,
            duration,
            sample_rate: self.sample_rate,
            noise_sigma: self.noise_sigma,
            user_bias,
            jitter_sigma: self.jitter_sigma,
            seed,
            rest_before,
            open_pose,
            grasp_pose,
            object_center: Some(xf),
            left_hand: self.both_hands.then_some(Vec3::new(-0.3, 0.9, 0.15)),
        };
        let meta = TrialMeta {
            user_id: format!("u{:02}", user + 1),
            task: self.tasks[task].clone(),
            object: self.objects[object].clone(),
            size,
            grasp_time: config.grasp_time(),
            trial_id: format!("u{:02}_t{:03}", user + 1, trial + 1),
        };
        (config, meta)
    }
}

/// Generates the whole family, users outer, trials inner.
pub fn synth_family(config: &FamilyConfig) -> Result<Dataset, ConfigError> {
    config.validate()?;
    let mut trials = Vec::with_capacity(config.n_users * config.trials_per_user);
    for user in 0..config.n_users {
        for trial in 0..config.trials_per_user {
            let (cfg, meta) = config.trial_config(user, trial);
            trials.push(synth_trial(&cfg, meta)?);
        }
    }
    Ok(Dataset::new(trials, format!("synthetic family seed {}", config.seed))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> TrialMeta {
        TrialMeta {
            user_id: "u1".into(),
            task: "Hold".into(),
            object: "Cube".into(),
            size: SizeLabel::Medium,
            grasp_time: 0.0,
            trial_id: "t1".into(),
        }
    }

    fn reach() -> SynthConfig {
        SynthConfig::new(Vec3::ZERO, Vec3::new(0.3, 0.2, 0.1), 1.2)
    }

    #[test]
    fn midpoint_and_boundaries() {
        let trial = synth_trial(&reach(), meta()).unwrap();
        let frames = trial.frames();
        assert_eq!(frames.len(), 73);
        let mid = frames.iter().find(|f| (f.t - 0.6).abs() < 1e-12).unwrap();
        assert!(mid.right.palm_center.distance(Vec3::new(0.15, 0.10, 0.05)) < 1e-12);
        assert_eq!(frames[0].right.palm_center, Vec3::ZERO);
        assert!(frames[72].right.palm_center.distance(Vec3::new(0.3, 0.2, 0.1)) < 1e-15);
        assert_eq!(trial.grasp_time(), 1.2);
    }

    #[test]
    fn noiseless_palm_matches_closed_form() {
        let mut cfg = reach();
        cfg.rest_before = 0.37;
        cfg.jitter_sigma = 0.001;
        cfg.seed = 9;
        let trial = synth_trial(&cfg, meta()).unwrap();
        for f in trial.frames() {
            let s = quintic_blend((f.t - 0.37) / 1.2);
            let expected = Vec3::new(0.3, 0.2, 0.1) * s;
            assert!(f.right.palm_center.distance(expected) <= 1e-12);
        }
    }

    #[test]
    fn noise_is_zero_mean() {
        let mut cfg = reach();
        cfg.duration = 999.0 / 60.0;
        cfg.noise_sigma = 0.005;
        cfg.seed = 42;
        let trial = synth_trial(&cfg, meta()).unwrap();
        assert_eq!(trial.frames().len(), 1000);
        let n = trial.frames().len() as f64;
        let mean = trial
            .frames()
            .iter()
            .fold(Vec3::ZERO, |acc, f| acc + (f.right.palm_center - cfg.palm_profile(f.t)))
            / n;
        let bound = 3.0 * 0.005 / n.sqrt();
        for axis in 0..3 {
            assert!(mean[axis].abs() < bound, "axis {axis}: {}", mean[axis]);
        }
    }

    #[test]
    fn rejects_bad_config() {
        let mut cfg = reach();
        cfg.duration = 0.0;
        assert!(matches!(synth_trial(&cfg, meta()), Err(ConfigError::NonPositiveDuration(_))));
        let mut cfg = reach();
        cfg.sample_rate = -60.0;
        assert!(matches!(synth_trial(&cfg, meta()), Err(ConfigError::NonPositiveRate(_))));
        let mut cfg = reach();
        cfg.jitter_sigma = 0.01;
        assert!(matches!(synth_trial(&cfg, meta()), Err(ConfigError::JitterTooLarge { .. })));
    }

    #[test]
    fn jittered_timestamps_stay_increasing() {
        let mut cfg = reach();
        cfg.jitter_sigma = 0.1 / 60.0;
        cfg.seed = 3;
        let trial = synth_trial(&cfg, meta()).unwrap();
        assert!(trial.frames().windows(2).all(|w| w[1].t > w[0].t));
    }

    #[test]
    fn last_frame_lands_on_grasp() {
        for seed in 0..20 {
            let ds = synth_family(&FamilyConfig { n_users: 2, trials_per_user: 3, seed, ..Default::default() }).unwrap();
            for t in ds.trials() {
                assert_eq!(t.frames().last().unwrap().t, t.grasp_time());
            }
        }
    }

    #[test]
    fn family_is_deterministic_and_labelled() {
        let cfg = FamilyConfig { n_users: 2, trials_per_user: 4, ..Default::default() };
        let a = synth_family(&cfg).unwrap();
        let b = synth_family(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 8);
        assert_eq!(a.users(), vec!["u01".to_string(), "u02".to_string()]);
        assert!(a.trials().iter().all(|t| t.grasp_time() >= 2.1));
    }
}
