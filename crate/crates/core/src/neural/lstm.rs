//! Single unidirectional LSTM layer with backpropagation through time.
//!
//! Gate blocks are stacked `[input, forget, cell, output]`, each `hidden`
//! rows tall, in `W` (`4h x in`), `U` (`4h x h`) and `b` (`4h`).

use serde::{Deserialize, Serialize};

use super::tensor::{gemv_acc, gemv_t_acc, outer_acc, Tensor};
use super::NeuralError;

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Borrowed LSTM weights.
#[derive(Debug, Clone, Copy)]
pub struct LstmView<'a> {
    pub input: usize,
    pub hidden: usize,
    pub w: &'a [f64],
    pub u: &'a [f64],
    pub b: &'a [f64],
}

/// Gradient buffers matching an [`LstmView`].
pub struct LstmGrad<'a> {
    pub w: &'a mut [f64],
    pub u: &'a mut [f64],
    pub b: &'a mut [f64],
}

#[derive(Debug, Clone)]
pub struct LstmCache {
    pub steps: usize,
    pub hidden: usize,
    x: Vec<f64>,
    /// Activated gates per step, `[i, f, g, o]`.
    gates: Vec<f64>,
    c: Vec<f64>,
    /// Hidden states, `steps x hidden`.
    pub h: Vec<f64>,
}

impl LstmCache {
    pub fn hidden_at(&self, t: usize) -> &[f64] {
        &self.h[t * self.hidden..(t + 1) * self.hidden]
    }
}

#[cfg(test)]
pub fn param_count(input: usize, hidden: usize) -> usize {
    4 * hidden * (input + hidden + 1)
}

/// Runs the recurrence from zero state over `steps` rows of `x`.
pub fn forward(v: &LstmView, x: &[f64], steps: usize) -> LstmCache {
    let (n, h) = (v.input, v.hidden);
    debug_assert_eq!(x.len(), steps * n);
    let mut gates = vec![0.0; steps * 4 * h];
    let mut c = vec![0.0; steps * h];
    let mut hs = vec![0.0; steps * h];
    let mut z = vec![0.0; 4 * h];
    for t in 0..steps {
        z.copy_from_slice(v.b);
        gemv_acc(v.w, &x[t * n..(t + 1) * n], &mut z);
        if t > 0 {
            gemv_acc(v.u, &hs[(t - 1) * h..t * h], &mut z);
        }
        let g = &mut gates[t * 4 * h..(t + 1) * 4 * h];
        for j in 0..h {
            let i_g = sigmoid(z[j]);
            let f_g = sigmoid(z[h + j]);
            let c_g = z[2 * h + j].tanh();
            let o_g = sigmoid(z[3 * h + j]);
            g[j] = i_g;
            g[h + j] = f_g;
            g[2 * h + j] = c_g;
            g[3 * h + j] = o_g;
            let c_prev = if t > 0 { c[(t - 1) * h + j] } else { 0.0 };
            let ct = f_g * c_prev + i_g * c_g;
            c[t * h + j] = ct;
            hs[t * h + j] = o_g * ct.tanh();
        }
    }
    LstmCache { steps, hidden: h, x: x.to_vec(), gates, c, h: hs }
}

/// Accumulates parameter gradients given `dh[t]`, the loss gradient with
/// respect to each emitted hidden state.
pub fn backward(v: &LstmView, cache: &LstmCache, dh_out: &[f64], grad: &mut LstmGrad) {
    let (n, h) = (v.input, v.hidden);
    let steps = cache.steps;
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    let mut dz = vec![0.0; 4 * h];
    for t in (0..steps).rev() {
        let g = &cache.gates[t * 4 * h..(t + 1) * 4 * h];
        for j in 0..h {
            let dh = dh_out[t * h + j] + dh_next[j];
            let (i_g, f_g, c_g, o_g) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
            let ct = cache.c[t * h + j];
            let tc = ct.tanh();
            let c_prev = if t > 0 { cache.c[(t - 1) * h + j] } else { 0.0 };
            let dc = dc_next[j] + dh * o_g * (1.0 - tc * tc);
            dz[j] = dc * c_g * i_g * (1.0 - i_g);
            dz[h + j] = dc * c_prev * f_g * (1.0 - f_g);
            dz[2 * h + j] = dc * i_g * (1.0 - c_g * c_g);
            dz[3 * h + j] = dh * tc * o_g * (1.0 - o_g);
            dc_next[j] = dc * f_g;
        }
        outer_acc(&dz, &cache.x[t * n..(t + 1) * n], grad.w);
        for (gb, d) in grad.b.iter_mut().zip(&dz) {
            *gb += d;
        }
        dh_next.iter_mut().for_each(|d| *d = 0.0);
        if t > 0 {
            outer_acc(&dz, &cache.h[(t - 1) * h..t * h], grad.u);
            gemv_t_acc(v.u, &dz, &mut dh_next);
        }
    }
}

/// An LSTM layer owning its weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmLayer {
    pub input_size: usize,
    pub hidden_size: usize,
    pub w: Vec<f64>,
    pub u: Vec<f64>,
    pub b: Vec<f64>,
}

impl LstmLayer {
    pub fn zeros(input_size: usize, hidden_size: usize) -> Self {
        Self {
            input_size,
            hidden_size,
            w: vec![0.0; 4 * hidden_size * input_size],
            u: vec![0.0; 4 * hidden_size * hidden_size],
            b: vec![0.0; 4 * hidden_size],
        }
    }

    pub fn view(&self) -> LstmView<'_> {
        LstmView { input: self.input_size, hidden: self.hidden_size, w: &self.w, u: &self.u, b: &self.b }
    }
}

/// Hidden states (`T x hidden`) for a `T x input` sequence, from zero state.
pub fn lstm_forward(layer: &LstmLayer, sequence: &Tensor) -> Result<(Tensor, LstmCache), NeuralError> {
    let shape = sequence.shape();
    if shape.len() != 2 || shape[1] != layer.input_size {
        return Err(NeuralError::ShapeMismatch { expected: layer.input_size, got: shape.get(1).copied().unwrap_or(0) });
    }
    let cache = forward(&layer.view(), sequence.data(), shape[0]);
    let hidden = Tensor::new(vec![shape[0], layer.hidden_size], cache.h.clone())?;
    Ok((hidden, cache))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_layer(input: usize, hidden: usize, seed: u64) -> LstmLayer {
        let mut rng = crate::rng::stream(seed, &[]);
        let mut l = LstmLayer::zeros(input, hidden);
        for v in l.w.iter_mut().chain(l.u.iter_mut()).chain(l.b.iter_mut()) {
            *v = rng.random_range(-1.0..1.0);
        }
        l
    }

    #[test]
    fn zero_weights_zero_states() {
        let l = LstmLayer::zeros(3, 4);
        let seq = Tensor::zeros(vec![5, 3]);
        let (h, _) = lstm_forward(&l, &seq).unwrap();
        assert!(h.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_step_matches_hand_computation() {
        let l = random_layer(2, 2, 3);
        let x = [0.3, -0.7];
        let (h, _) = lstm_forward(&l, &Tensor::new(vec![1, 2], x.to_vec()).unwrap()).unwrap();
        for j in 0..2 {
            let pre = |block: usize| l.b[block * 2 + j] + l.w[(block * 2 + j) * 2] * x[0] + l.w[(block * 2 + j) * 2 + 1] * x[1];
            let i = 1.0 / (1.0 + (-pre(0)).exp());
            let g = pre(2).tanh();
            let o = 1.0 / (1.0 + (-pre(3)).exp());
            let c = i * g;
            assert!((h.data()[j] - o * c.tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn hidden_states_are_bounded() {
        let mut l = random_layer(3, 5, 9);
        l.w.iter_mut().for_each(|w| *w *= 50.0);
        let data: Vec<f64> = (0..60).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let (h, _) = lstm_forward(&l, &Tensor::new(vec![20, 3], data).unwrap()).unwrap();
        assert!(h.data().iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn rejects_wrong_width() {
        let l = LstmLayer::zeros(3, 2);
        assert!(lstm_forward(&l, &Tensor::zeros(vec![4, 2])).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let l = random_layer(2, 3, 11);
        let steps = 4;
        let x: Vec<f64> = (0..steps * 2).map(|i| (i as f64 * 0.37).sin()).collect();
        let coef: Vec<f64> = (0..steps * 3).map(|i| (i as f64 * 0.61).cos()).collect();
        let loss = |layer: &LstmLayer| -> f64 {
            let c = forward(&layer.view(), &x, steps);
            c.h.iter().zip(&coef).map(|(a, b)| a * b).sum()
        };
        let cache = forward(&l.view(), &x, steps);
        let (mut gw, mut gu, mut gb) = (vec![0.0; l.w.len()], vec![0.0; l.u.len()], vec![0.0; l.b.len()]);
        backward(&l.view(), &cache, &coef, &mut LstmGrad { w: &mut gw, u: &mut gu, b: &mut gb });
        let eps = 1e-6;
        for (k, analytic) in gu.iter().enumerate() {
            let (mut p, mut m) = (l.clone(), l.clone());
            p.u[k] += eps;
            m.u[k] -= eps;
            let numeric = (loss(&p) - loss(&m)) / (2.0 * eps);
            assert!((numeric - analytic).abs() < 1e-8, "u[{k}]");
        }
        for (k, analytic) in gw.iter().enumerate() {
            let (mut p, mut m) = (l.clone(), l.clone());
            p.w[k] += eps;
            m.w[k] -= eps;
            assert!(((loss(&p) - loss(&m)) / (2.0 * eps) - analytic).abs() < 1e-8, "w[{k}]");
        }
    }
}
