//! Adam and RMSprop parameter updates.
//!
//! Both optimizers track per-parameter moment buffers keyed by position in
//! the parameter list. Weight decay is applied as a decoupled additive term
//! scaled by the learning rate, independent of the moment estimates.

use crate::autograd::ParamRef;
use crate::tensor::NumError;

/// Adam defaults; the smoothing constants are the canonical ones.
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
/// RMSprop defaults.
pub const RMSPROP_ALPHA: f64 = 0.99;
pub const RMSPROP_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    RmsProp { alpha: f64, eps: f64 },
}

/// Optimizer state: the update kind, step counter and one moment buffer set
/// per tracked parameter, each matching its parameter's shape.
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    weight_decay: f64,
    step_count: u64,
    params: Vec<ParamRef>,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn adam(params: Vec<ParamRef>, learning_rate: f64, weight_decay: f64) -> Self {
        Self::with_kind(
            OptimizerKind::Adam {
                beta1: ADAM_BETA1,
                beta2: ADAM_BETA2,
                eps: ADAM_EPS,
            },
            params,
            learning_rate,
            weight_decay,
        )
    }

    pub fn rmsprop(params: Vec<ParamRef>, learning_rate: f64) -> Self {
        Self::with_kind(
            OptimizerKind::RmsProp {
                alpha: RMSPROP_ALPHA,
                eps: RMSPROP_EPS,
            },
            params,
            learning_rate,
            0.0,
        )
    }

    pub fn with_kind(
        kind: OptimizerKind,
        params: Vec<ParamRef>,
        learning_rate: f64,
        weight_decay: f64,
    ) -> Self {
        let first_moment = params
            .iter()
            .map(|p| vec![0.0; p.borrow().numel()])
            .collect();
        let second_moment = match kind {
            OptimizerKind::Adam { .. } => params
                .iter()
                .map(|p| vec![0.0; p.borrow().numel()])
                .collect(),
            OptimizerKind::RmsProp { .. } => Vec::new(),
        };
        Optimizer {
            kind,
            learning_rate,
            weight_decay,
            step_count: 0,
            params,
            first_moment,
            second_moment,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Applies one update in place. Gradients are read but never modified;
    /// the caller zeroes them when it is done with the step.
    pub fn step(&mut self) -> Result<(), NumError> {
        self.step_count += 1;
        let t = self.step_count;
        let lr = self.learning_rate;
        let wd = self.weight_decay;
        for (i, p) in self.params.iter().enumerate() {
            let mut tensor = p.borrow_mut();
            if tensor.grad().is_none() {
                return Err(NumError::MissingGradient);
            }
            let n = tensor.numel();
            match self.kind {
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let bc1 = 1.0 - beta1.powi(t as i32);
                    let bc2 = 1.0 - beta2.powi(t as i32);
                    for j in 0..n {
                        let g = tensor.grad().expect("checked above")[j];
                        let m = &mut self.first_moment[i][j];
                        *m = beta1 * *m + (1.0 - beta1) * g;
                        let v = &mut self.second_moment[i][j];
                        *v = beta2 * *v + (1.0 - beta2) * g * g;
                        let m_hat = *m / bc1;
                        let v_hat = *v / bc2;
                        let w = &mut tensor.data_mut()[j];
                        *w -= lr * m_hat / (v_hat.sqrt() + eps) + lr * wd * *w;
                    }
                }
                OptimizerKind::RmsProp { alpha, eps } => {
                    for j in 0..n {
                        let g = tensor.grad().expect("checked above")[j];
                        let v = &mut self.first_moment[i][j];
                        *v = alpha * *v + (1.0 - alpha) * g * g;
                        let w = &mut tensor.data_mut()[j];
                        *w -= lr * g / (v.sqrt() + eps) + lr * wd * *w;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn zero_grads(&self) {
        for p in &self.params {
            p.borrow_mut().zero_grad();
        }
    }
}
