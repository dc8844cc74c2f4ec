use serde::{Deserialize, Serialize};

use super::model::{quantize, Gradients, TraceSeqModel};
use crate::error::{Error, Result};

/// Adam moment estimates and hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl OptimizerState {
    pub fn new(params: usize, lr: f64) -> Self {
        OptimizerState {
            m: vec![0.0; params],
            v: vec![0.0; params],
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn for_model(model: &TraceSeqModel, lr: f64) -> Self {
        Self::new(model.num_params(), lr)
    }
}

/// One bias-corrected Adam update. Parameters are rounded back to `f32`
/// afterwards, matching the weight file precision.
pub fn adam_step(model: &mut TraceSeqModel, grads: &Gradients, opt: &mut OptimizerState) -> Result<()> {
    let n = model.num_params();
    if grads.data.len() != n || opt.m.len() != n || opt.v.len() != n {
        return Err(Error::Logic(format!(
            "shape mismatch: {n} parameters, {} gradients, {} moments",
            grads.data.len(),
            opt.m.len()
        )));
    }
    opt.step += 1;
    let t = opt.step as i32;
    let bc1 = 1.0 - opt.beta1.powi(t);
    let bc2 = 1.0 - opt.beta2.powi(t);
    let params = model.params_mut();
    for i in 0..n {
        let g = grads.data[i];
        opt.m[i] = opt.beta1 * opt.m[i] + (1.0 - opt.beta1) * g;
        opt.v[i] = opt.beta2 * opt.v[i] + (1.0 - opt.beta2) * g * g;
        let m_hat = opt.m[i] / bc1;
        let v_hat = opt.v[i] / bc2;
        params[i] -= opt.lr * m_hat / (v_hat.sqrt() + opt.epsilon);
    }
    quantize(params);
    Ok(())
}
