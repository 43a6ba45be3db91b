use rand_chacha::ChaCha8Rng;

use super::net::dropout_mask;
use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Inverted dropout: in training, each element is zeroed with probability
/// `rate` and survivors are scaled by `1 / (1 - rate)`; identity in eval.
pub fn dropout_apply(t: &Tensor, rate: f64, mode: Mode, rng: &mut ChaCha8Rng) -> Tensor {
    assert!((0.0..1.0).contains(&rate), "dropout rate {rate} outside [0, 1)");
    if mode == Mode::Eval || rate == 0.0 {
        return t.clone();
    }
    let mask = dropout_mask(rate, t.len(), rng);
    let data = t.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
    Tensor::new(t.shape().to_vec(), data).expect("shape preserved")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_and_zero_rate_are_identity() {
        let t = Tensor::new(vec![2, 2], vec![1.0, -2.0, 3.0, 4.0]).unwrap();
        let mut rng = crate::rng::stream(1, &[]);
        assert_eq!(dropout_apply(&t, 0.5, Mode::Eval, &mut rng), t);
        assert_eq!(dropout_apply(&t, 0.0, Mode::Train, &mut rng), t);
    }

    #[test]
    fn train_mode_statistics() {
        let t = Tensor::new(vec![100_000], vec![1.5; 100_000]).unwrap();
        let mut rng = crate::rng::stream(2, &[]);
        let out = dropout_apply(&t, 0.2, Mode::Train, &mut rng);
        let kept = out.data().iter().filter(|&&v| v != 0.0).count() as f64 / 1e5;
        assert!((kept - 0.8).abs() <= 0.01);
        let mean = out.data().iter().sum::<f64>() / 1e5;
        assert!((mean / 1.5 - 1.0).abs() <= 0.01);
    }
}
