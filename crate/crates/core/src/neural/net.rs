//! Sequence regressor assembled from the LSTM and dense layers.
//!
//! Per step: standardized input -> LSTM -> dropout -> optional projection
//! (dense, ReLU). Static side inputs each pass through their own dense ReLU
//! branch once per sequence and are concatenated to every step. The result
//! goes through the body layers (dense, ReLU) and a linear head, whose output
//! is mapped back to target units by a fixed affine de-standardization.
//!
//! Flat parameter layout, in order (matrices row-major `out x in`):
//! `lstm.w`, `lstm.u`, `lstm.b`, `proj.w`, `proj.b` (if any), then
//! `branch{k}.w`, `branch{k}.b` per branch, `body{j}.w`, `body{j}.b` per
//! body layer, and finally `head.w`, `head.b`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dense::{Activation, DenseView};
use super::lstm::{self, LstmCache, LstmGrad, LstmView};
use super::NeuralError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchSpec {
    pub input: usize,
    pub units: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetSpec {
    pub input_size: usize,
    pub hidden: usize,
    /// Dense ReLU applied per step right after the LSTM.
    pub proj: Option<usize>,
    pub branches: Vec<BranchSpec>,
    /// Dense ReLU layers after the concatenation.
    pub body: Vec<usize>,
    pub output_size: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamBlock {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Offsets of one dense layer inside the flat vector.
#[derive(Debug, Clone, Copy)]
struct DenseSlot {
    input: usize,
    output: usize,
    w: usize,
    b: usize,
}

impl DenseSlot {
    fn view<'a>(&self, p: &'a [f64], activation: Activation) -> DenseView<'a> {
        DenseView {
            input: self.input,
            output: self.output,
            activation,
            w: &p[self.w..self.w + self.input * self.output],
            b: &p[self.b..self.b + self.output],
        }
    }

    fn grads<'a>(&self, g: &'a mut [f64]) -> (&'a mut [f64], &'a mut [f64]) {
        let (head, tail) = g.split_at_mut(self.b);
        (&mut head[self.w..self.w + self.input * self.output], &mut tail[..self.output])
    }
}

#[derive(Debug, Clone)]
struct Slots {
    lstm: (usize, usize, usize),
    proj: Option<DenseSlot>,
    branches: Vec<DenseSlot>,
    body: Vec<DenseSlot>,
    head: DenseSlot,
    total: usize,
}

impl NetSpec {
    pub fn validate(&self) -> Result<(), NeuralError> {
        let widths = [self.input_size, self.hidden, self.output_size];
        if widths.contains(&0)
            || self.proj == Some(0)
            || self.body.contains(&0)
            || self.branches.iter().any(|b| b.input == 0 || b.units == 0)
        {
            return Err(NeuralError::BadConfig("every layer needs a positive width".into()));
        }
        Ok(())
    }

    /// Width of each step's feature vector after the concatenation.
    pub fn concat_width(&self) -> usize {
        self.proj.unwrap_or(self.hidden) + self.branches.iter().map(|b| b.units).sum::<usize>()
    }

    fn slots(&self) -> Slots {
        let mut off = 0;
        let mut take = |n: usize| {
            let o = off;
            off += n;
            o
        };
        let (h, n) = (self.hidden, self.input_size);
        let lstm = (take(4 * h * n), take(4 * h * h), take(4 * h));
        let mut dense = |input: usize, output: usize| DenseSlot { input, output, w: take(input * output), b: take(output) };
        let proj = self.proj.map(|p| dense(h, p));
        let branches = self.branches.iter().map(|b| dense(b.input, b.units)).collect();
        let mut width = self.concat_width();
        let body = self
            .body
            .iter()
            .map(|&u| {
                let s = dense(width, u);
                width = u;
                s
            })
            .collect();
        let head = dense(width, self.output_size);
        let total = head.b + head.output;
        Slots { lstm, proj, branches, body, head, total }
    }

    pub fn param_count(&self) -> usize {
        self.slots().total
    }

    /// Named blocks of the flat parameter vector, in storage order.
    pub fn manifest(&self) -> Vec<ParamBlock> {
        let s = self.slots();
        let (h, n) = (self.hidden, self.input_size);
        let mut out = vec![
            ParamBlock { name: "lstm.w".into(), shape: vec![4 * h, n], offset: s.lstm.0 },
            ParamBlock { name: "lstm.u".into(), shape: vec![4 * h, h], offset: s.lstm.1 },
            ParamBlock { name: "lstm.b".into(), shape: vec![4 * h], offset: s.lstm.2 },
        ];
        let mut push = |name: String, d: &DenseSlot| {
            out.push(ParamBlock { name: format!("{name}.w"), shape: vec![d.output, d.input], offset: d.w });
            out.push(ParamBlock { name: format!("{name}.b"), shape: vec![d.output], offset: d.b });
        };
        if let Some(p) = &s.proj {
            push("proj".into(), p);
        }
        for (k, b) in s.branches.iter().enumerate() {
            push(format!("branch{k}"), b);
        }
        for (j, b) in s.body.iter().enumerate() {
            push(format!("body{j}"), b);
        }
        push("head".into(), &s.head);
        out
    }
}

/// Per-feature affine standardization `(x - mean) / std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    pub fn identity(n: usize) -> Self {
        Self { mean: vec![0.0; n], std: vec![1.0; n] }
    }

    /// Fits mean and standard deviation per column over `rows`; columns with
    /// (near) zero spread keep unit scale.
    pub fn fit<'a>(width: usize, rows: impl Iterator<Item = &'a [f64]>) -> Self {
        let mut n = 0usize;
        let mut sum = vec![0.0; width];
        let mut sq = vec![0.0; width];
        for r in rows {
            n += 1;
            for k in 0..width {
                sum[k] += r[k];
                sq[k] += r[k] * r[k];
            }
        }
        if n == 0 {
            return Self::identity(width);
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let var = (q / n as f64 - m * m).max(0.0);
                let s = var.sqrt();
                if s > 1e-9 * (1.0 + m.abs()) {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    fn standardize(&self, x: &[f64], out: &mut [f64]) {
        for k in 0..x.len() {
            out[k] = (x[k] - self.mean[k]) / self.std[k];
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub input: Scaler,
    pub statics: Vec<Scaler>,
    /// Maps head outputs to target units: `y = mean + std * head`.
    pub output: Scaler,
}

impl Normalization {
    pub fn identity(spec: &NetSpec) -> Self {
        Self {
            input: Scaler::identity(spec.input_size),
            statics: spec.branches.iter().map(|b| Scaler::identity(b.input)).collect(),
            output: Scaler::identity(spec.output_size),
        }
    }

    fn check(&self, spec: &NetSpec) -> Result<(), NeuralError> {
        let ok = self.input.width() == spec.input_size
            && self.output.width() == spec.output_size
            && self.statics.len() == spec.branches.len()
            && self.statics.iter().zip(&spec.branches).all(|(s, b)| s.width() == b.input);
        if ok {
            Ok(())
        } else {
            Err(NeuralError::BadConfig("normalization does not match the architecture".into()))
        }
    }
}

/// One training or inference sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeqSample {
    pub steps: usize,
    /// `steps x input_size`.
    pub inputs: Vec<f64>,
    /// One vector per static branch.
    pub statics: Vec<Vec<f64>>,
    /// `steps x output_size`; empty for inference.
    pub targets: Vec<f64>,
}

/// Activations retained for backpropagation.
pub(crate) struct Trace {
    steps: usize,
    lstm: LstmCache,
    mask: Option<Vec<f64>>,
    dropped: Vec<f64>,
    proj: Vec<f64>,
    branch_in: Vec<Vec<f64>>,
    branch_out: Vec<Vec<f64>>,
    concat: Vec<f64>,
    body: Vec<Vec<f64>>,
    /// De-standardized outputs, `steps x output_size`.
    pub y: Vec<f64>,
}

/// Inverted-dropout mask entries: `0` or `1 / (1 - rate)`.
pub fn dropout_mask(rate: f64, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..n).map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep }).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceModel {
    pub tag: String,
    pub spec: NetSpec,
    pub norm: Normalization,
    pub params: Vec<f64>,
}

impl SequenceModel {
    /// Fresh weights: uniform in `+-1/sqrt(fan_in)`, zero biases except the
    /// LSTM forget gate (1).
    pub fn init(tag: impl Into<String>, spec: NetSpec, norm: Normalization, seed: u64) -> Result<Self, NeuralError> {
        spec.validate()?;
        norm.check(&spec)?;
        let s = spec.slots();
        let mut params = vec![0.0; s.total];
        let mut rng = crate::rng::stream(seed, &[super::STREAM_INIT]);
        let mut fill = |range: std::ops::Range<usize>, fan_in: usize, rng: &mut ChaCha8Rng| {
            let k = 1.0 / (fan_in as f64).sqrt();
            for p in &mut params[range] {
                *p = rng.random_range(-k..k);
            }
        };
        let (h, n) = (spec.hidden, spec.input_size);
        fill(s.lstm.0..s.lstm.1, n + h, &mut rng);
        fill(s.lstm.1..s.lstm.2, n + h, &mut rng);
        for d in s.proj.iter().chain(&s.branches).chain(&s.body).chain(std::iter::once(&s.head)) {
            fill(d.w..d.w + d.input * d.output, d.input, &mut rng);
        }
        for j in 0..h {
            params[s.lstm.2 + h + j] = 1.0;
        }
        Ok(Self { tag: tag.into(), spec, norm, params })
    }

    pub fn check_sample(&self, sample: &SeqSample) -> Result<(), NeuralError> {
        let spec = &self.spec;
        let mismatch = |expected: usize, got: usize| Err(NeuralError::ShapeMismatch { expected, got });
        if sample.steps == 0 {
            return mismatch(1, 0);
        }
        if sample.inputs.len() != sample.steps * spec.input_size {
            return mismatch(sample.steps * spec.input_size, sample.inputs.len());
        }
        if sample.statics.len() != spec.branches.len() {
            return mismatch(spec.branches.len(), sample.statics.len());
        }
        for (s, b) in sample.statics.iter().zip(&spec.branches) {
            if s.len() != b.input {
                return mismatch(b.input, s.len());
            }
        }
        if !sample.targets.is_empty() && sample.targets.len() != sample.steps * spec.output_size {
            return mismatch(sample.steps * spec.output_size, sample.targets.len());
        }
        Ok(())
    }

    pub(crate) fn forward_with(&self, params: &[f64], sample: &SeqSample, mask: Option<&[f64]>) -> Trace {
        let spec = &self.spec;
        let s = spec.slots();
        let (steps, n, h) = (sample.steps, spec.input_size, spec.hidden);
        let mut x = vec![0.0; steps * n];
        for t in 0..steps {
            self.norm.input.standardize(&sample.inputs[t * n..(t + 1) * n], &mut x[t * n..(t + 1) * n]);
        }
        let lv = LstmView {
            input: n,
            hidden: h,
            w: &params[s.lstm.0..s.lstm.1],
            u: &params[s.lstm.1..s.lstm.2],
            b: &params[s.lstm.2..s.lstm.2 + 4 * h],
        };
        let cache = lstm::forward(&lv, &x, steps);
        let dropped: Vec<f64> = match mask {
            Some(m) => cache.h.iter().zip(m).map(|(a, b)| a * b).collect(),
            None => cache.h.clone(),
        };
        let pw = spec.proj.unwrap_or(h);
        let proj = match &s.proj {
            Some(slot) => {
                let v = slot.view(params, Activation::Relu);
                let mut out = vec![0.0; steps * pw];
                for t in 0..steps {
                    v.forward(&dropped[t * h..(t + 1) * h], &mut out[t * pw..(t + 1) * pw]);
                }
                out
            }
            None => Vec::new(),
        };
        let mut branch_in = Vec::with_capacity(s.branches.len());
        let mut branch_out = Vec::with_capacity(s.branches.len());
        for (k, slot) in s.branches.iter().enumerate() {
            let mut xin = vec![0.0; slot.input];
            self.norm.statics[k].standardize(&sample.statics[k], &mut xin);
            let mut out = vec![0.0; slot.output];
            slot.view(params, Activation::Relu).forward(&xin, &mut out);
            branch_in.push(xin);
            branch_out.push(out);
        }
        let cw = spec.concat_width();
        let mut concat = vec![0.0; steps * cw];
        for t in 0..steps {
            let row = &mut concat[t * cw..(t + 1) * cw];
            let seq = if s.proj.is_some() { &proj[t * pw..(t + 1) * pw] } else { &dropped[t * h..(t + 1) * h] };
            row[..pw].copy_from_slice(seq);
            let mut at = pw;
            for b in &branch_out {
                row[at..at + b.len()].copy_from_slice(b);
                at += b.len();
            }
        }
        let mut body = Vec::with_capacity(s.body.len());
        let mut prev_w = cw;
        for slot in &s.body {
            let v = slot.view(params, Activation::Relu);
            let input = body.last().unwrap_or(&concat);
            let mut out = vec![0.0; steps * slot.output];
            for t in 0..steps {
                v.forward(&input[t * prev_w..(t + 1) * prev_w], &mut out[t * slot.output..(t + 1) * slot.output]);
            }
            prev_w = slot.output;
            body.push(out);
        }
        let o = spec.output_size;
        let head = s.head.view(params, Activation::Identity);
        let input = body.last().unwrap_or(&concat);
        let mut y = vec![0.0; steps * o];
        for t in 0..steps {
            let out = &mut y[t * o..(t + 1) * o];
            head.forward(&input[t * prev_w..(t + 1) * prev_w], out);
            for k in 0..o {
                out[k] = self.norm.output.mean[k] + self.norm.output.std[k] * out[k];
            }
        }
        Trace { steps, lstm: cache, mask: mask.map(<[f64]>::to_vec), dropped, proj, branch_in, branch_out, concat, body, y }
    }

    /// Gradient of the loss with respect to every parameter, given the loss
    /// gradient `dy` with respect to the de-standardized outputs.
    pub(crate) fn backward_with(&self, params: &[f64], trace: &Trace, dy: &[f64]) -> Vec<f64> {
        let spec = &self.spec;
        let s = spec.slots();
        let (steps, h, o) = (trace.steps, spec.hidden, spec.output_size);
        let mut grad = vec![0.0; s.total];

        let mut d_out = vec![0.0; steps * o];
        for t in 0..steps {
            for k in 0..o {
                d_out[t * o + k] = dy[t * o + k] * self.norm.output.std[k];
            }
        }
        let mut widths: Vec<usize> = vec![spec.concat_width()];
        widths.extend(s.body.iter().map(|b| b.output));
        let head = s.head.view(params, Activation::Identity);
        let head_in = trace.body.last().unwrap_or(&trace.concat);
        let wi = *widths.last().unwrap();
        let mut d_in = vec![0.0; steps * wi];
        {
            let y_head = vec![0.0; o];
            let (gw, gb) = s.head.grads(&mut grad);
            for t in 0..steps {
                head.backward(
                    &head_in[t * wi..(t + 1) * wi],
                    &y_head,
                    &d_out[t * o..(t + 1) * o],
                    gw,
                    gb,
                    Some(&mut d_in[t * wi..(t + 1) * wi]),
                );
            }
        }
        for j in (0..s.body.len()).rev() {
            let slot = s.body[j];
            let v = slot.view(params, Activation::Relu);
            let input = if j == 0 { &trace.concat } else { &trace.body[j - 1] };
            let (iw, ow) = (widths[j], widths[j + 1]);
            let mut d_prev = vec![0.0; steps * iw];
            let (gw, gb) = slot.grads(&mut grad);
            for t in 0..steps {
                v.backward(
                    &input[t * iw..(t + 1) * iw],
                    &trace.body[j][t * ow..(t + 1) * ow],
                    &d_in[t * ow..(t + 1) * ow],
                    gw,
                    gb,
                    Some(&mut d_prev[t * iw..(t + 1) * iw]),
                );
            }
            d_in = d_prev;
        }

        let cw = spec.concat_width();
        let pw = spec.proj.unwrap_or(h);
        let mut at = pw;
        for (k, slot) in s.branches.iter().enumerate() {
            let mut d_branch = vec![0.0; slot.output];
            for t in 0..steps {
                for (u, d) in d_branch.iter_mut().enumerate() {
                    *d += d_in[t * cw + at + u];
                }
            }
            at += slot.output;
            let (gw, gb) = slot.grads(&mut grad);
            slot.view(params, Activation::Relu).backward(&trace.branch_in[k], &trace.branch_out[k], &d_branch, gw, gb, None);
        }

        let mut d_h = vec![0.0; steps * h];
        match &s.proj {
            Some(slot) => {
                let v = slot.view(params, Activation::Relu);
                let (gw, gb) = slot.grads(&mut grad);
                for t in 0..steps {
                    v.backward(
                        &trace.dropped[t * h..(t + 1) * h],
                        &trace.proj[t * pw..(t + 1) * pw],
                        &d_in[t * cw..t * cw + pw],
                        gw,
                        gb,
                        Some(&mut d_h[t * h..(t + 1) * h]),
                    );
                }
            }
            None => {
                for t in 0..steps {
                    d_h[t * h..(t + 1) * h].copy_from_slice(&d_in[t * cw..t * cw + h]);
                }
            }
        }
        if let Some(m) = &trace.mask {
            d_h.iter_mut().zip(m).for_each(|(d, k)| *d *= k);
        }
        let lv = LstmView {
            input: spec.input_size,
            hidden: h,
            w: &params[s.lstm.0..s.lstm.1],
            u: &params[s.lstm.1..s.lstm.2],
            b: &params[s.lstm.2..s.lstm.2 + 4 * h],
        };
        let (front, rest) = grad.split_at_mut(s.lstm.1);
        let (gu, rest) = rest.split_at_mut(s.lstm.2 - s.lstm.1);
        lstm::backward(
            &lv,
            &trace.lstm,
            &d_h,
            &mut LstmGrad { w: &mut front[s.lstm.0..], u: gu, b: &mut rest[..4 * h] },
        );
        grad
    }

    /// Per-step outputs in target units (`steps x output_size`), eval mode.
    pub fn predict(&self, sample: &SeqSample) -> Result<Vec<f64>, NeuralError> {
        self.check_sample(sample)?;
        let y = self.forward_with(&self.params, sample, None).y;
        if y.iter().all(|v| v.is_finite()) {
            Ok(y)
        } else {
            Err(NeuralError::NonFiniteOutput)
        }
    }

    /// Loss and parameter gradient for one sample under an optional dropout
    /// mask (`steps x hidden`).
    pub fn loss_and_grad(&self, sample: &SeqSample, loss: &super::LossSpec, mask: Option<&[f64]>) -> (f64, Vec<f64>) {
        self.loss_and_grad_with(&self.params, sample, loss, mask)
    }

    pub(crate) fn loss_and_grad_with(
        &self,
        params: &[f64],
        sample: &SeqSample,
        loss: &super::LossSpec,
        mask: Option<&[f64]>,
    ) -> (f64, Vec<f64>) {
        let trace = self.forward_with(params, sample, mask);
        let (value, dy) = loss.evaluate(&trace.y, &sample.targets, self.spec.output_size);
        (value, self.backward_with(params, &trace, &dy))
    }

    pub(crate) fn loss_with(&self, params: &[f64], sample: &SeqSample, loss: &super::LossSpec, mask: Option<&[f64]>) -> f64 {
        let trace = self.forward_with(params, sample, mask);
        loss.evaluate(&trace.y, &sample.targets, self.spec.output_size).0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::dense;

    pub(crate) fn spec() -> NetSpec {
        NetSpec {
            input_size: 3,
            hidden: 4,
            proj: Some(5),
            branches: vec![BranchSpec { input: 2, units: 3 }],
            body: vec![6],
            output_size: 2,
        }
    }

    #[test]
    fn manifest_is_contiguous() {
        let s = spec();
        let m = s.manifest();
        let mut off = 0;
        for b in &m {
            assert_eq!(b.offset, off, "{}", b.name);
            off += b.len();
        }
        assert_eq!(off, s.param_count());
        let names: Vec<_> = m.iter().map(|b| b.name.as_str()).collect();
        assert_eq!(
            names,
            ["lstm.w", "lstm.u", "lstm.b", "proj.w", "proj.b", "branch0.w", "branch0.b", "body0.w", "body0.b", "head.w", "head.b"]
        );
        assert_eq!(s.param_count(), lstm::param_count(3, 4) + dense::param_count(4, 5) + 9 + dense::param_count(8, 6) + 14);
    }

    #[test]
    fn init_sets_forget_bias() {
        let s = spec();
        let m = SequenceModel::init("t", s.clone(), Normalization::identity(&s), 1).unwrap();
        let b = &s.manifest()[2];
        let bias = &m.params[b.range()];
        assert!(bias[..4].iter().all(|&v| v == 0.0));
        assert!(bias[4..8].iter().all(|&v| v == 1.0));
        let w = &m.params[s.manifest()[0].range()];
        let k = 1.0 / 7f64.sqrt();
        assert!(w.iter().all(|v| v.abs() < k));
    }

    #[test]
    fn shape_errors() {
        let s = spec();
        let m = SequenceModel::init("t", s.clone(), Normalization::identity(&s), 1).unwrap();
        let good = SeqSample { steps: 2, inputs: vec![0.0; 6], statics: vec![vec![0.0; 2]], targets: vec![] };
        assert_eq!(m.predict(&good).unwrap().len(), 4);
        let bad = SeqSample { inputs: vec![0.0; 5], ..good.clone() };
        assert!(matches!(m.predict(&bad), Err(NeuralError::ShapeMismatch { .. })));
        let bad = SeqSample { statics: vec![], ..good };
        assert!(m.predict(&bad).is_err());
    }

    #[test]
    fn dropout_mask_statistics() {
        let mut rng = crate::rng::stream(5, &[]);
        let m = dropout_mask(0.2, 100_000, &mut rng);
        let kept = m.iter().filter(|&&v| v > 0.0).count() as f64 / 1e5;
        assert!((kept - 0.8).abs() < 0.01);
        let mean = m.iter().sum::<f64>() / 1e5;
        assert!((mean - 1.0).abs() < 0.01);
    }
}
