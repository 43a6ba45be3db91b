use serde::{Deserialize, Serialize};

use super::tensor::{gemv_acc, gemv_t_acc, outer_acc};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Relu,
}

/// Borrowed fully connected layer, `weights` row-major `out x in`.
#[derive(Debug, Clone, Copy)]
pub struct DenseView<'a> {
    pub input: usize,
    pub output: usize,
    pub activation: Activation,
    pub w: &'a [f64],
    pub b: &'a [f64],
}

#[cfg(test)]
pub fn param_count(input: usize, output: usize) -> usize {
    output * (input + 1)
}

impl DenseView<'_> {
    /// Writes the activated output into `y`.
    pub fn forward(&self, x: &[f64], y: &mut [f64]) {
        y.copy_from_slice(self.b);
        gemv_acc(self.w, x, y);
        if self.activation == Activation::Relu {
            y.iter_mut().for_each(|v| *v = v.max(0.0));
        }
    }

    /// Backpropagates `dy` through the layer given its input `x` and
    /// activated output `y`; accumulates into `gw`, `gb` and `dx`.
    pub fn backward(&self, x: &[f64], y: &[f64], dy: &[f64], gw: &mut [f64], gb: &mut [f64], dx: Option<&mut [f64]>) {
        let mut d = dy.to_vec();
        if self.activation == Activation::Relu {
            for (di, &yi) in d.iter_mut().zip(y) {
                if yi <= 0.0 {
                    *di = 0.0;
                }
            }
        }
        outer_acc(&d, x, gw);
        for (g, di) in gb.iter_mut().zip(&d) {
            *g += di;
        }
        if let Some(dx) = dx {
            gemv_t_acc(self.w, &d, dx);
        }
    }
}

/// A dense layer owning its weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub input_size: usize,
    pub output_size: usize,
    pub activation: Activation,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn view(&self) -> DenseView<'_> {
        DenseView {
            input: self.input_size,
            output: self.output_size,
            activation: self.activation,
            w: &self.weights,
            b: &self.bias,
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.output_size];
        self.view().forward(x, &mut y);
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_and_identity() {
        let mut l = DenseLayer {
            input_size: 2,
            output_size: 2,
            activation: Activation::Relu,
            weights: vec![1.0, -1.0, 2.0, 0.5],
            bias: vec![0.0, -3.0],
        };
        assert_eq!(l.apply(&[1.0, 2.0]), vec![0.0, 0.0]);
        l.activation = Activation::Identity;
        assert_eq!(l.apply(&[1.0, 2.0]), vec![-1.0, 0.0]);
    }

    #[test]
    fn backward_blocks_inactive_units() {
        let l = DenseLayer {
            input_size: 2,
            output_size: 2,
            activation: Activation::Relu,
            weights: vec![1.0, 0.0, 0.0, 1.0],
            bias: vec![0.0, 0.0],
        };
        let x = [2.0, -1.0];
        let y = l.apply(&x);
        let (mut gw, mut gb, mut dx) = (vec![0.0; 4], vec![0.0; 2], vec![0.0; 2]);
        l.view().backward(&x, &y, &[1.0, 1.0], &mut gw, &mut gb, Some(&mut dx));
        assert_eq!(gw, vec![2.0, -1.0, 0.0, 0.0]);
        assert_eq!(gb, vec![1.0, 0.0]);
        assert_eq!(dx, vec![1.0, 0.0]);
    }
}
