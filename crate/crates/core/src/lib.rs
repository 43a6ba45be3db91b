//! Reach-to-grasp prediction from hand-tracking time series.
//!
//! The crate covers the whole offline pipeline: a trial file format and a
//! synthetic minimum-jerk generator ([`trajectory`]), Savitzky-Golay
//! kinematics and onset detection ([`kinematics`]), per-frame grasp
//! taxonomy features ([`features`]), bounded minimum-jerk fitting ([`mjt`]),
//! a small LSTM training core ([`neural`]), the reach and posture predictors
//! ([`reach`], [`posture`]), cross-validated classifiers ([`classify`]) and
//! curve/CSV/SVG reporting ([`report`]).
//!
//! Everything runs in 64-bit floats and every stochastic step draws from a
//! seeded stream, so results are reproducible bit-for-bit.

pub mod cart;
pub mod classify;
pub mod features;
pub mod kinematics;
pub mod mjt;
pub mod neural;
pub mod numfmt;
pub mod posture;
pub mod reach;
pub mod report;
pub mod rng;
pub mod trajectory;

pub use trajectory::{Dataset, Frame, HandFrame, SizeLabel, Trial, TrialMeta, Vec3};
