use log::debug;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamState};
use super::net::{dropout_mask, NetSpec, Normalization, Scaler, SeqSample, SequenceModel};
use super::{LossSpec, NeuralError, STREAM_DROPOUT, STREAM_SHUFFLE};

/// Relative weights of the time and position terms of the reach loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub time: f64,
    pub position: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub dropout_rate: f64,
    pub seed: u64,
    pub loss_weights: LossWeights,
    pub lambda_smooth: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            epochs: 50,
            batch_size: 64,
            dropout_rate: 0.2,
            seed: 0,
            loss_weights: LossWeights { time: 3.0, position: 1.0 },
            lambda_smooth: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NeuralError> {
        let bad = |m: &str| Err(NeuralError::BadConfig(m.into()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout rate must lie in [0, 1)");
        }
        if !(self.loss_weights.time > 0.0 && self.loss_weights.position > 0.0) {
            return bad("loss weights must be positive");
        }
        if !(self.lambda_smooth >= 0.0 && self.lambda_smooth.is_finite()) {
            return bad("smoothness weight must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean per-sample training loss over the epoch (with dropout active).
    pub loss: f64,
}

/// Input/output standardization fitted on the training samples.
pub fn fit_normalization(spec: &NetSpec, samples: &[SeqSample]) -> Normalization {
    let n = spec.input_size;
    let o = spec.output_size;
    Normalization {
        input: Scaler::fit(n, samples.iter().flat_map(|s| s.inputs.chunks_exact(n))),
        statics: spec
            .branches
            .iter()
            .enumerate()
            .map(|(k, b)| Scaler::fit(b.input, samples.iter().map(|s| s.statics[k].as_slice())))
            .collect(),
        output: Scaler::fit(o, samples.iter().flat_map(|s| s.targets.chunks_exact(o))),
    }
}

/// Mean loss and summed-then-averaged gradient over a batch. Per-sample
/// results are computed in parallel and reduced in batch order.
fn batch_gradient(
    model: &SequenceModel,
    samples: &[SeqSample],
    batch: &[usize],
    loss: &LossSpec,
    dropout: f64,
    seed: u64,
    epoch: usize,
) -> (f64, Vec<f64>) {
    let hidden = model.spec.hidden;
    let parts: Vec<(f64, Vec<f64>)> = batch
        .par_iter()
        .map(|&i| {
            let s = &samples[i];
            let mask = (dropout > 0.0).then(|| {
                let mut rng = crate::rng::stream(seed, &[STREAM_DROPOUT, epoch as u64, i as u64]);
                dropout_mask(dropout, s.steps * hidden, &mut rng)
            });
            model.loss_and_grad(s, loss, mask.as_deref())
        })
        .collect();
    let mut total = 0.0;
    let mut grad = vec![0.0; model.params.len()];
    for (l, g) in &parts {
        total += l;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    let inv = 1.0 / batch.len() as f64;
    grad.iter_mut().for_each(|g| *g *= inv);
    (total, grad)
}

/// Trains in place with Adam on shuffled mini-batches; returns the loss
/// history. Aborts on the first non-finite loss or gradient.
pub fn train(model: &mut SequenceModel, samples: &[SeqSample], loss: &LossSpec, config: &TrainConfig) -> Result<Vec<EpochStats>, NeuralError> {
    config.validate()?;
    if samples.is_empty() {
        return Err(NeuralError::EmptyDataset);
    }
    for s in samples {
        model.check_sample(s)?;
        if s.targets.is_empty() {
            return Err(NeuralError::ShapeMismatch { expected: s.steps * model.spec.output_size, got: 0 });
        }
    }
    let mut adam = AdamState::new(model.params.len());
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.sort_unstable();
        order.shuffle(&mut crate::rng::stream(config.seed, &[STREAM_SHUFFLE, epoch as u64]));
        let mut epoch_loss = 0.0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let (l, g) = batch_gradient(model, samples, batch, loss, config.dropout_rate, config.seed, epoch);
            if !l.is_finite() || g.iter().any(|v| !v.is_finite()) {
                return Err(NeuralError::NonFiniteGradient { epoch, batch: b });
            }
            epoch_loss += l;
            adam_step(&mut adam, &mut model.params, &g, config.learning_rate);
        }
        let mean = epoch_loss / samples.len() as f64;
        debug!("{} epoch {epoch}: loss {mean:.6e}", model.tag);
        history.push(EpochStats { epoch, loss: mean });
    }
    Ok(history)
}

/// Mean eval-mode loss over `samples`.
pub fn evaluate_loss(model: &SequenceModel, samples: &[SeqSample], loss: &LossSpec) -> f64 {
    let parts: Vec<f64> = samples.par_iter().map(|s| model.loss_with(&model.params, s, loss, None)).collect();
    parts.iter().sum::<f64>() / samples.len() as f64
}
