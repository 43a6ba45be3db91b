//! Per-step regression losses and the temporal smoothness penalty.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossKind {
    Mse,
    Mae,
}

/// A loss applied to the output components `start..end`, scaled by `weight`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossTerm {
    pub kind: LossKind,
    pub start: usize,
    pub end: usize,
    pub weight: f64,
}

/// Sequence loss: the weighted terms averaged over steps, plus
/// `lambda_smooth` times the temporal smoothness of the outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub terms: Vec<LossTerm>,
    pub lambda_smooth: f64,
}

impl LossSpec {
    pub fn mse(width: usize) -> Self {
        Self { terms: vec![LossTerm { kind: LossKind::Mse, start: 0, end: width, weight: 1.0 }], lambda_smooth: 0.0 }
    }

    /// Loss of one sequence and its gradient with respect to every output.
    /// `outputs` and `targets` are `steps x width`.
    pub fn evaluate(&self, outputs: &[f64], targets: &[f64], width: usize) -> (f64, Vec<f64>) {
        let steps = outputs.len() / width;
        let mut grad = vec![0.0; outputs.len()];
        let mut total = 0.0;
        let inv_steps = 1.0 / steps as f64;
        for t in 0..steps {
            let (y, target) = (&outputs[t * width..(t + 1) * width], &targets[t * width..(t + 1) * width]);
            let g = &mut grad[t * width..(t + 1) * width];
            for term in &self.terms {
                let n = (term.end - term.start) as f64;
                let scale = term.weight * inv_steps / n;
                for k in term.start..term.end {
                    let e = y[k] - target[k];
                    match term.kind {
                        LossKind::Mse => {
                            total += scale * e * e;
                            g[k] += scale * 2.0 * e;
                        }
                        LossKind::Mae => {
                            total += scale * e.abs();
                            g[k] += scale * sign(e);
                        }
                    }
                }
            }
        }
        if self.lambda_smooth > 0.0 {
            total += self.lambda_smooth * temporal_smoothness(outputs, width);
            for t in 0..steps.saturating_sub(1) {
                for k in 0..width {
                    let d = 2.0 * self.lambda_smooth * (outputs[t * width + k] - outputs[(t + 1) * width + k]);
                    grad[t * width + k] += d;
                    grad[(t + 1) * width + k] -= d;
                }
            }
        }
        (total, grad)
    }
}

fn sign(e: f64) -> f64 {
    if e > 0.0 {
        1.0
    } else if e < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn mse(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / pred.len() as f64
}

pub fn mae(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter().zip(target).map(|(a, b)| (a - b).abs()).sum::<f64>() / pred.len() as f64
}

/// Sum of squared distances between consecutive rows of a `T x width`
/// prediction sequence; zero for a single step.
pub fn temporal_smoothness(predictions: &[f64], width: usize) -> f64 {
    predictions
        .chunks_exact(width)
        .zip(predictions.chunks_exact(width).skip(1))
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smoothness_values() {
        assert_eq!(temporal_smoothness(&[0.0, 1.0, 3.0], 1), 5.0);
        assert_eq!(temporal_smoothness(&[2.0, 2.0, 2.0, 2.0], 2), 0.0);
        assert_eq!(temporal_smoothness(&[4.0, 5.0], 2), 0.0);
        let base = [0.1, -0.4, 0.7, 0.2, 0.3, 0.9];
        let shifted: Vec<f64> = base.iter().enumerate().map(|(i, v)| v + if i % 2 == 0 { 3.0 } else { -1.5 }).collect();
        assert!((temporal_smoothness(&base, 2) - temporal_smoothness(&shifted, 2)).abs() < 1e-12);
    }

    #[test]
    fn plain_losses() {
        assert_eq!(mse(&[1.0, 3.0], &[0.0, 1.0]), 2.5);
        assert_eq!(mae(&[1.0, 3.0], &[0.0, 1.0]), 1.5);
    }

    #[test]
    fn composite_loss_and_gradient() {
        let spec = LossSpec {
            terms: vec![
                LossTerm { kind: LossKind::Mse, start: 0, end: 2, weight: 1.0 },
                LossTerm { kind: LossKind::Mae, start: 2, end: 3, weight: 3.0 },
            ],
            lambda_smooth: 0.5,
        };
        let y = [0.2, -0.1, 0.7, 0.4, 0.3, 0.1];
        let target = [0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        let (loss, grad) = spec.evaluate(&y, &target, 3);
        let expected = 0.5 * ((0.04 + 0.01) / 2.0 + 3.0 * 0.3 + (0.16 + 0.09) / 2.0 + 3.0 * 0.1)
            + 0.5 * (0.04 + 0.16 + 0.36);
        assert!((loss - expected).abs() < 1e-12);
        let eps = 1e-7;
        for k in 0..6 {
            let (mut p, mut m) = (y, y);
            p[k] += eps;
            m[k] -= eps;
            let fd = (spec.evaluate(&p, &target, 3).0 - spec.evaluate(&m, &target, 3).0) / (2.0 * eps);
            assert!((fd - grad[k]).abs() < 1e-6, "component {k}");
        }
    }

    #[test]
    fn zero_error_zero_gradient() {
        let y = [0.3, 0.3, 0.3];
        let (loss, grad) = LossSpec::mse(1).evaluate(&y, &y, 1);
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }
}
