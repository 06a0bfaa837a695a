use super::TrainConfig;
use crate::linalg::Scalar;

/// First and second moment estimates plus the number of steps taken.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<S> {
    pub m: Vec<S>,
    pub v: Vec<S>,
    pub step: u64,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(n: usize) -> Self {
        AdamState { m: vec![S::zero(); n], v: vec![S::zero(); n], step: 0 }
    }
}

/// One bias-corrected Adam update with learning rate `lr`.
pub fn adam_step<S: Scalar>(theta: &mut [S], grad: &[S], state: &mut AdamState<S>, cfg: &TrainConfig, lr: f64) {
    assert_eq!(theta.len(), grad.len());
    assert_eq!(theta.len(), state.m.len());
    state.step += 1;
    let (b1, b2) = (S::of(cfg.beta1), S::of(cfg.beta2));
    let bc1 = 1.0 - cfg.beta1.powf(state.step as f64);
    let bc2 = 1.0 - cfg.beta2.powf(state.step as f64);
    let step_size = S::of(lr / bc1);
    let inv_bc2 = S::of(1.0 / bc2);
    let eps = S::of(cfg.eps);
    let decay = S::of(lr * cfg.weight_decay);
    for i in 0..theta.len() {
        let g = grad[i];
        state.m[i] = b1 * state.m[i] + (S::one() - b1) * g;
        state.v[i] = b2 * state.v[i] + (S::one() - b2) * g * g;
        let denom = (state.v[i] * inv_bc2).sqrt() + eps;
        theta[i] = theta[i] - step_size * state.m[i] / denom - decay * theta[i];
    }
}
