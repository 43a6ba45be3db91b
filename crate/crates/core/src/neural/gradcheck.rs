use super::net::{SeqSample, SequenceModel};
use super::LossSpec;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: usize,
    pub n_params: usize,
}

pub const DEFAULT_EPS: f64 = 1e-5;

/// Relative error `|a - n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares analytic gradients with central finite differences of the loss
/// for every parameter. A fixed dropout `mask` (`steps x hidden`) may be
/// given so the check covers the dropout path.
pub fn grad_check(model: &SequenceModel, sample: &SeqSample, loss: &LossSpec, mask: Option<&[f64]>, eps: f64) -> GradCheckReport {
    let (_, analytic) = model.loss_and_grad(sample, loss, mask);
    let mut params = model.params.clone();
    let mut worst = (0.0, 0);
    for k in 0..params.len() {
        let orig = params[k];
        params[k] = orig + eps;
        let up = model.loss_with(&params, sample, loss, mask);
        params[k] = orig - eps;
        let down = model.loss_with(&params, sample, loss, mask);
        params[k] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let e = relative_error(analytic[k], numeric);
        if e > worst.0 {
            worst = (e, k);
        }
    }
    GradCheckReport { max_rel_error: worst.0, worst_param: worst.1, n_params: params.len() }
}
