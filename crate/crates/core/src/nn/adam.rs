use serde::{Deserialize, Serialize};

use super::tensor::{Gradients, ParameterSet, Tensor};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Adam moments plus the hyperparameters that drive training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
    pub step: u64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub dropout: f64,
}

impl OptimizerState {
    pub fn new(params: &ParameterSet, learning_rate: f64, weight_decay: f64, dropout: f64) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|(_, t)| Tensor::zeros(&t.shape)).collect();
        Self {
            first_moment: zeros.clone(),
            second_moment: zeros,
            step: 0,
            learning_rate,
            weight_decay,
            dropout,
        }
    }
}

/// One Adam update with decoupled weight decay (`theta -= lr * wd * theta`
/// before the moment-based step).
pub fn adam_step(params: &mut ParameterSet, grads: &Gradients, state: &mut OptimizerState) {
    state.step += 1;
    let t = state.step as i32;
    let lr = state.learning_rate;
    let decay = 1.0 - lr * state.weight_decay;
    let bc1 = 1.0 - BETA1.powi(t);
    let bc2 = 1.0 - BETA2.powi(t);
    for (((p, g), m), v) in params
        .tensors_mut()
        .iter_mut()
        .zip(&grads.tensors)
        .zip(&mut state.first_moment)
        .zip(&mut state.second_moment)
    {
        assert_eq!(p.shape, g.shape, "gradient shape");
        for (((w, &gi), mi), vi) in p.data.iter_mut().zip(&g.data).zip(&mut m.data).zip(&mut v.data) {
            *w *= decay;
            *mi = BETA1 * *mi + (1.0 - BETA1) * gi;
            *vi = BETA2 * *vi + (1.0 - BETA2) * gi * gi;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *w -= lr * m_hat / (v_hat.sqrt() + EPSILON);
        }
    }
}
