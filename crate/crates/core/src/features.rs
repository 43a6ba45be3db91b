//! Per-frame grasp taxonomy features.
//!
//! Each hand yields 27 scalars, flattened in this fixed order:
//!
//! | slots  | feature                                   |
//! |--------|-------------------------------------------|
//! | 0..3   | thumb tip -> index tip                    |
//! | 3..6   | thumb tip -> middle tip                   |
//! | 6..9   | thumb tip -> ring tip                     |
//! | 9..12  | thumb tip -> pinky tip                    |
//! | 12     | aperture (length of thumb -> index)       |
//! | 13..16 | thumb tip -> thumb proximal joint         |
//! | 16..19 | index tip -> index proximal joint         |
//! | 19..22 | palm vector (thumb->index x index z axis) |
//! | 22..25 | grasp depth (palm center -> tip midpoint) |
//! | 25     | grasp depth length                        |
//! | 26     | palm-to-object angle (rad)                |
//!
//! With both hands the left hand's 27 scalars follow the right hand's.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{palm_velocities, KinematicsError, SavgolSpec, Side};
use crate::trajectory::{Frame, HandFrame, Trial, Vec3};

/// Scalars per hand.
pub const FEATURES_PER_HAND: usize = 27;
/// Minimum palm speed for a defined movement direction (m/s).
pub const MIN_DIRECTION_SPEED: f64 = 1e-4;

/// Column names of one hand's flattened features.
pub const FEATURE_NAMES: [&str; FEATURES_PER_HAND] = [
    "u_thumb_index_x", "u_thumb_index_y", "u_thumb_index_z",
    "u_thumb_middle_x", "u_thumb_middle_y", "u_thumb_middle_z",
    "u_thumb_ring_x", "u_thumb_ring_y", "u_thumb_ring_z",
    "u_thumb_pinky_x", "u_thumb_pinky_y", "u_thumb_pinky_z",
    "aperture",
    "u_thumb_1_x", "u_thumb_1_y", "u_thumb_1_z",
    "u_index_1_x", "u_index_1_y", "u_index_1_z",
    "u_palm_x", "u_palm_y", "u_palm_z",
    "d_grasp_x", "d_grasp_y", "d_grasp_z",
    "d_grasp_len",
    "palm_object_angle",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("movement direction undefined (palm at rest or at the object)")]
pub struct DegenerateDirection;

/// Which hands contribute features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Hands {
    Right,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector {
    pub u_thumb_index: Vec3,
    pub u_thumb_middle: Vec3,
    pub u_thumb_ring: Vec3,
    pub u_thumb_pinky: Vec3,
    pub aperture_len: f64,
    pub u_thumb_1: Vec3,
    pub u_index_1: Vec3,
    pub u_palm: Vec3,
    pub d_grasp: Vec3,
    pub d_grasp_len: f64,
    pub palm_object_angle: f64,
}

impl FeatureVector {
    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        for v in [self.u_thumb_index, self.u_thumb_middle, self.u_thumb_ring, self.u_thumb_pinky] {
            out.extend(v.to_array());
        }
        out.push(self.aperture_len);
        for v in [self.u_thumb_1, self.u_index_1, self.u_palm, self.d_grasp] {
            out.extend(v.to_array());
        }
        out.push(self.d_grasp_len);
        out.push(self.palm_object_angle);
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(FEATURES_PER_HAND);
        self.flatten_into(&mut out);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeatures {
    pub right: FeatureVector,
    pub left: Option<FeatureVector>,
}

impl FrameFeatures {
    /// Right hand first, then the left hand when present.
    pub fn flattened(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * FEATURES_PER_HAND);
        self.right.flatten_into(&mut out);
        if let Some(l) = &self.left {
            l.flatten_into(&mut out);
        }
        out
    }
}

/// Thumb-to-fingertip vectors (index, middle, ring, pinky) and the aperture.
pub fn tip_vectors(h: &HandFrame) -> ([Vec3; 4], f64) {
    let u = [h.tip_index, h.tip_middle, h.tip_ring, h.tip_pinky].map(|t| t - h.tip_thumb);
    (u, u[0].norm())
}

/// Tip-to-proximal-joint vectors of thumb and index.
pub fn flexion_vectors(h: &HandFrame) -> (Vec3, Vec3) {
    (h.prox_thumb - h.tip_thumb, h.prox_index - h.tip_index)
}

/// Unnormalized palm orientation proxy `u_thumb_index x z_index`.
pub fn palm_vector(h: &HandFrame) -> Vec3 {
    (h.tip_index - h.tip_thumb).cross(h.index_local_z)
}

/// Palm center to the thumb/index tip midpoint, with its length.
pub fn grasp_depth(h: &HandFrame) -> (Vec3, f64) {
    let d = h.tip_thumb.midpoint(h.tip_index) - h.palm_center;
    (d, d.norm())
}

/// Angle between the palm velocity and the palm-to-object direction.
pub fn palm_object_angle(palm_velocity: Vec3, palm_center: Vec3, object_center: Vec3) -> Result<f64, DegenerateDirection> {
    let to_object = object_center - palm_center;
    let speed = palm_velocity.norm();
    let range = to_object.norm();
    if !(speed >= MIN_DIRECTION_SPEED) || range == 0.0 {
        return Err(DegenerateDirection);
    }
    let cos = palm_velocity.dot(to_object) / (speed * range);
    Ok(cos.clamp(-1.0, 1.0).acos())
}

/// Features of one hand; `angle` is the already-resolved movement angle.
pub fn hand_features(h: &HandFrame, angle: f64) -> FeatureVector {
    let (u, aperture_len) = tip_vectors(h);
    let (u_thumb_1, u_index_1) = flexion_vectors(h);
    let (d_grasp, d_grasp_len) = grasp_depth(h);
    FeatureVector {
        u_thumb_index: u[0],
        u_thumb_middle: u[1],
        u_thumb_ring: u[2],
        u_thumb_pinky: u[3],
        aperture_len,
        u_thumb_1,
        u_index_1,
        u_palm: palm_vector(h),
        d_grasp,
        d_grasp_len,
        palm_object_angle: angle,
    }
}

/// Holds the last valid palm-to-object angle per hand within a trial.
#[derive(Debug, Clone, Copy)]
pub struct AngleHold {
    right: f64,
    left: f64,
}

impl Default for AngleHold {
    fn default() -> Self {
        Self { right: FRAC_PI_2, left: FRAC_PI_2 }
    }
}

impl AngleHold {
    fn resolve(slot: &mut f64, v: Vec3, palm: Vec3, object: Vec3) -> f64 {
        if let Ok(a) = palm_object_angle(v, palm, object) {
            *slot = a;
        }
        *slot
    }
}

/// Features of one frame. Degenerate angles fall back to the value held in
/// `hold` (pi/2 before the first valid one).
pub fn extract_frame_features(
    frame: &Frame,
    right_velocity: Vec3,
    left_velocity: Option<Vec3>,
    hold: &mut AngleHold,
) -> FrameFeatures {
    let ra = AngleHold::resolve(&mut hold.right, right_velocity, frame.right.palm_center, frame.object_center);
    let left = match (&frame.left, left_velocity) {
        (Some(h), Some(v)) => {
            let la = AngleHold::resolve(&mut hold.left, v, h.palm_center, frame.object_center);
            Some(hand_features(h, la))
        }
        _ => None,
    };
    FrameFeatures { right: hand_features(&frame.right, ra), left }
}

/// Features for every frame of a trial, with palm velocities from the
/// Savitzky-Golay derivative.
pub fn trial_features(trial: &Trial, hands: Hands, spec: &SavgolSpec, rate: f64) -> Result<Vec<FrameFeatures>, KinematicsError> {
    let frames = trial.frames();
    let right_v = palm_velocities(frames, Side::Right, spec, rate)?;
    let left_v = match hands {
        Hands::Both => Some(palm_velocities(frames, Side::Left, spec, rate)?),
        Hands::Right => None,
    };
    let mut hold = AngleHold::default();
    Ok(frames
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let lv = left_v.as_ref().map(|v| v[i]);
            let mut ff = extract_frame_features(f, right_v[i], lv, &mut hold);
            if hands == Hands::Right {
                ff.left = None;
            }
            ff
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_4, PI};

    fn hand() -> HandFrame {
        HandFrame {
            palm_center: Vec3::new(0.01, 0.02, -0.01),
            tip_thumb: Vec3::new(0.05, 0.0, 0.06),
            tip_index: Vec3::new(0.03, 0.01, 0.15),
            tip_middle: Vec3::new(0.0, 0.0, 0.16),
            tip_ring: Vec3::new(-0.02, -0.01, 0.15),
            tip_pinky: Vec3::new(-0.04, 0.0, 0.12),
            prox_thumb: Vec3::new(0.04, 0.0, 0.02),
            prox_index: Vec3::new(0.02, 0.0, 0.09),
            index_local_z: Vec3::new(0.0, 0.6, 0.8),
        }
    }

    fn rot90_z(v: Vec3) -> Vec3 {
        Vec3::new(-v.y, v.x, v.z)
    }

    #[test]
    fn coincident_tips_give_zero_aperture() {
        let mut h = hand();
        h.tip_index = h.tip_thumb;
        let (u, len) = tip_vectors(&h);
        assert_eq!(u[0], Vec3::ZERO);
        assert_eq!(len, 0.0);
    }

    #[test]
    fn three_four_five_aperture() {
        let mut h = hand();
        h.tip_thumb = Vec3::ZERO;
        h.tip_index = Vec3::new(0.03, 0.04, 0.0);
        let (u, len) = tip_vectors(&h);
        assert_eq!(u[0], Vec3::new(0.03, 0.04, 0.0));
        assert!((len - 0.05).abs() < 1e-15);
    }

    #[test]
    fn straight_finger_flexion() {
        let mut h = hand();
        h.tip_index = Vec3::new(0.1, 0.0, 0.0);
        h.prox_index = Vec3::new(0.1 - 0.07, 0.0, 0.0);
        assert!(flexion_vectors(&h).1.distance(Vec3::new(-0.07, 0.0, 0.0)) < 1e-15);
        h.prox_thumb = h.tip_thumb;
        assert_eq!(flexion_vectors(&h).0, Vec3::ZERO);
    }

    #[test]
    fn flexion_rotates_with_hand() {
        let h = hand();
        let r = HandFrame { index_local_z: rot90_z(h.index_local_z), ..h.map_points(rot90_z) };
        let (a, b) = flexion_vectors(&h);
        let (ra, rb) = flexion_vectors(&r);
        assert!(ra.distance(rot90_z(a)) < 1e-15);
        assert!(rb.distance(rot90_z(b)) < 1e-15);
    }

    #[test]
    fn palm_vector_cross_product() {
        let mut h = hand();
        h.tip_thumb = Vec3::ZERO;
        h.tip_index = Vec3::new(0.05, 0.0, 0.0);
        h.index_local_z = Vec3::new(0.0, 0.0, 1.0);
        assert!(palm_vector(&h).distance(Vec3::new(0.0, -0.05, 0.0)) < 1e-15);
        h.tip_index = Vec3::new(0.0, 0.0, 0.05);
        assert_eq!(palm_vector(&h), Vec3::ZERO);
    }

    #[test]
    fn grasp_depth_cases() {
        let mut h = hand();
        h.palm_center = h.tip_thumb.midpoint(h.tip_index);
        assert_eq!(grasp_depth(&h).1, 0.0);
        h.palm_center = Vec3::ZERO;
        h.tip_thumb = Vec3::new(0.1, 0.0, 0.0);
        h.tip_index = Vec3::new(0.0, 0.1, 0.0);
        let (d, len) = grasp_depth(&h);
        assert!(d.distance(Vec3::new(0.05, 0.05, 0.0)) < 1e-15);
        assert!((len - 0.05 * 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn angles() {
        let p = Vec3::new(1.0, 2.0, 3.0);
        assert!(palm_object_angle(Vec3::new(0.3, 0.0, 0.0), p, p + Vec3::new(2.0, 0.0, 0.0)).unwrap().abs() < 1e-12);
        let perp = palm_object_angle(Vec3::new(0.0, 0.3, 0.0), p, p + Vec3::new(2.0, 0.0, 0.0)).unwrap();
        assert!((perp - FRAC_PI_2).abs() < 1e-12);
        let diag = palm_object_angle(Vec3::new(1.0, 0.0, 0.0), Vec3::ZERO, Vec3::new(1.0, 1.0, 0.0) / 2f64.sqrt()).unwrap();
        assert!((diag - FRAC_PI_4).abs() < 1e-9);
        let back = palm_object_angle(Vec3::new(-1.0, 0.0, 0.0), Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0)).unwrap();
        assert!((back - PI).abs() < 1e-12);
        assert_eq!(palm_object_angle(Vec3::new(5e-5, 0.0, 0.0), Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0)), Err(DegenerateDirection));
        assert_eq!(palm_object_angle(Vec3::new(1.0, 0.0, 0.0), p, p), Err(DegenerateDirection));
    }

    #[test]
    fn degenerate_angle_holds_last_value() {
        let h = hand();
        let frame = Frame { t: 0.0, object_center: h.palm_center + Vec3::new(1.0, 0.0, 0.0), right: h, left: None };
        let mut hold = AngleHold::default();
        let first = extract_frame_features(&frame, Vec3::ZERO, None, &mut hold);
        assert_eq!(first.right.palm_object_angle, FRAC_PI_2);
        let moving = extract_frame_features(&frame, Vec3::new(1.0, 1.0, 0.0), None, &mut hold);
        assert!((moving.right.palm_object_angle - FRAC_PI_4).abs() < 1e-12);
        let rest = extract_frame_features(&frame, Vec3::ZERO, None, &mut hold);
        assert_eq!(rest.right.palm_object_angle, moving.right.palm_object_angle);
    }

    #[test]
    fn golden_vector() {
        // Every component computed by hand from `hand()` with velocity
        // (0, 0, 0.5) and the object at (0.01, 0.02, 0.99).
        let h = hand();
        let frame = Frame { t: 0.0, object_center: Vec3::new(0.01, 0.02, 0.99), right: h, left: Some(h) };
        let mut hold = AngleHold::default();
        let ff = extract_frame_features(&frame, Vec3::new(0.0, 0.0, 0.5), None, &mut hold);
        let expected = [
            -0.02, 0.01, 0.09, // index - thumb
            -0.05, 0.0, 0.10, // middle - thumb
            -0.07, -0.01, 0.09, // ring - thumb
            -0.09, 0.0, 0.06, // pinky - thumb
            0.0086f64.sqrt(), // 0.0004 + 0.0001 + 0.0081
            -0.01, 0.0, -0.04, // prox_thumb - tip_thumb
            -0.01, -0.01, -0.06, // prox_index - tip_index
            // (-0.02, 0.01, 0.09) x (0, 0.6, 0.8)
            0.01 * 0.8 - 0.09 * 0.6,
            0.09 * 0.0 - (-0.02) * 0.8,
            -0.02 * 0.6 - 0.01 * 0.0,
            // midpoint (0.04, 0.005, 0.105) - palm (0.01, 0.02, -0.01)
            0.03, -0.015, 0.115,
            0.01435f64.sqrt(), // 0.0009 + 0.000225 + 0.013225
            0.0,          // velocity points straight at the object
        ];
        let flat = ff.flattened();
        assert_eq!(flat.len(), 27);
        for (i, (a, b)) in flat.iter().zip(expected).enumerate() {
            assert!((a - b).abs() < 1e-9, "slot {i} ({}): {a} vs {b}", FEATURE_NAMES[i]);
        }
    }

    #[test]
    fn both_hands_flatten_to_54() {
        let h = hand();
        let frame = Frame { t: 0.0, object_center: Vec3::new(0.5, 0.5, 0.5), right: h, left: Some(h) };
        let mut hold = AngleHold::default();
        let ff = extract_frame_features(&frame, Vec3::new(0.1, 0.0, 0.0), Some(Vec3::new(0.1, 0.0, 0.0)), &mut hold);
        let flat = ff.flattened();
        assert_eq!(flat.len(), 54);
        assert_eq!(flat[..27], flat[27..]);
    }
}
