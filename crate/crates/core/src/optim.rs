//! Stochastic gradient descent with Nesterov momentum.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Momentum buffers and hyperparameters for [`sgd_nesterov_step`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub momentum: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    velocity: Vec<Vec<f64>>,
    shapes: Vec<Vec<usize>>,
}

impl OptimizerState {
    /// Zero velocity for every parameter in `params`.
    pub fn new(params: &[Tensor], learning_rate: f64, momentum: f64, weight_decay: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!("momentum {momentum} outside [0, 1)")));
        }
        if learning_rate <= 0.0 || !learning_rate.is_finite() {
            return Err(Error::Config(format!("learning rate {learning_rate} must be positive")));
        }
        if weight_decay < 0.0 {
            return Err(Error::Config(format!("weight decay {weight_decay} is negative")));
        }
        Ok(OptimizerState {
            momentum,
            learning_rate,
            weight_decay,
            velocity: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            shapes: params.iter().map(|p| p.shape().to_vec()).collect(),
        })
    }

    pub fn velocity(&self) -> &[Vec<f64>] {
        &self.velocity
    }

    /// Restore buffers saved from an earlier run.
    pub fn set_velocity(&mut self, velocity: Vec<Vec<f64>>) -> Result<()> {
        if velocity.len() != self.velocity.len()
            || velocity.iter().zip(&self.velocity).any(|(a, b)| a.len() != b.len())
        {
            return Err(Error::dim("restored velocity buffers do not match parameters"));
        }
        self.velocity = velocity;
        Ok(())
    }
}

/// One Nesterov update:
/// `g' = g + wd·w; v ← μ·v + g'; w ← w − lr·(g' + μ·v)`.
///
/// Parameters whose gradient is `None` are left untouched, as are their
/// velocity buffers.
pub fn sgd_nesterov_step(
    params: &mut [Tensor],
    grads: &[Option<Vec<f64>>],
    state: &mut OptimizerState,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.velocity.len() {
        return Err(Error::dim(format!(
            "{} parameters, {} gradients, {} velocity buffers",
            params.len(),
            grads.len(),
            state.velocity.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != state.shapes[i].as_slice() {
            return Err(Error::dim(format!(
                "parameter {i} has shape {:?}, optimizer expects {:?}",
                p.shape(),
                state.shapes[i]
            )));
        }
        if let Some(g) = g {
            if g.len() != p.numel() {
                return Err(Error::dim(format!(
                    "gradient {i} has {} entries for {} parameters",
                    g.len(),
                    p.numel()
                )));
            }
        }
    }
    let (mu, lr, wd) = (state.momentum, state.learning_rate, state.weight_decay);
    for ((p, g), v) in params.iter_mut().zip(grads).zip(state.velocity.iter_mut()) {
        let Some(g) = g else { continue };
        for ((w, &gi), vi) in p.data_mut().iter_mut().zip(g).zip(v.iter_mut()) {
            let gd = gi + wd * *w;
            *vi = mu * *vi + gd;
            *w -= lr * (gd + mu * *vi);
        }
    }
    Ok(())
}
