//! RMSprop with gradient clipping and recurrent-weight L2 regularization.

use thiserror::Error;

use crate::neural::{NetGradient, StackedNet, TensorRole};
use crate::numkit::Matrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("clip value must be positive, got {0}")]
    ClipValue(f64),
    #[error("regularization weight must be non-negative, got {0}")]
    Beta(f64),
    #[error("invalid optimizer setting: {0}")]
    Config(String),
    #[error("gradient record does not match the optimizer state ({0})")]
    Shape(String),
}

/// How [`clip_gradients`] bounds a gradient record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClipMode {
    /// Every entry clamped to `[-C, C]`.
    #[default]
    Value,
    /// Whole record rescaled so its L2 norm is at most `C`.
    GlobalNorm,
}

pub fn clip_gradients(grads: &mut NetGradient, clip: f64, mode: ClipMode) -> Result<(), OptimError> {
    if !(clip > 0.0) {
        return Err(OptimError::ClipValue(clip));
    }
    match mode {
        ClipMode::Value => {
            for m in grads.tensors_mut() {
                m.data_mut().iter_mut().for_each(|g| *g = g.clamp(-clip, clip));
            }
        }
        ClipMode::GlobalNorm => {
            let norm = grads.l2_norm();
            if norm > clip {
                grads.scale(clip / norm);
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmsPropConfig {
    pub learning_rate: f64,
    pub decay: f64,
    pub epsilon: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            decay: 0.9,
            epsilon: 1e-8,
        }
    }
}

impl RmsPropConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

/// Running mean of squared gradients, one accumulator per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsProp {
    config: RmsPropConfig,
    acc: Vec<Matrix>,
}

impl RmsProp {
    pub fn new(net: &StackedNet, config: RmsPropConfig) -> Result<Self, OptimError> {
        if !(config.learning_rate >= 0.0) {
            return Err(OptimError::Config(format!("learning rate {}", config.learning_rate)));
        }
        if !(config.decay > 0.0 && config.decay < 1.0) {
            return Err(OptimError::Config(format!("decay {} outside (0, 1)", config.decay)));
        }
        if !(config.epsilon > 0.0) {
            return Err(OptimError::Config(format!("epsilon {}", config.epsilon)));
        }
        let acc = net
            .tensors()
            .iter()
            .map(|m| Matrix::zeros(m.rows(), m.cols()))
            .collect();
        Ok(Self { config, acc })
    }

    pub fn config(&self) -> &RmsPropConfig {
        &self.config
    }

    /// Changes η for subsequent steps; the accumulators are kept.
    pub fn set_learning_rate(&mut self, learning_rate: f64) -> Result<(), OptimError> {
        if !(learning_rate >= 0.0) {
            return Err(OptimError::Config(format!("learning rate {learning_rate}")));
        }
        self.config.learning_rate = learning_rate;
        Ok(())
    }

    pub fn accumulators(&self) -> &[Matrix] {
        &self.acc
    }

    /// `acc ← ρ·acc + (1−ρ)·g²`, then `θ ← θ − η·g/√(acc + ε)`.
    pub fn step(&mut self, net: &mut StackedNet, grads: &NetGradient) -> Result<(), OptimError> {
        let RmsPropConfig {
            learning_rate: lr,
            decay: rho,
            epsilon: eps,
        } = self.config;
        let params = net.tensors_mut();
        let grads = grads.tensors();
        if params.len() != self.acc.len() || grads.len() != self.acc.len() {
            return Err(OptimError::Shape(format!(
                "{} parameter tensors, {} gradient tensors, {} accumulators",
                params.len(),
                grads.len(),
                self.acc.len()
            )));
        }
        for ((p, g), acc) in params.into_iter().zip(grads).zip(self.acc.iter_mut()) {
            if p.shape() != g.shape() || p.shape() != acc.shape() {
                return Err(OptimError::Shape(format!(
                    "parameter {:?}, gradient {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
            for ((theta, &gi), a) in p.data_mut().iter_mut().zip(g.data()).zip(acc.data_mut()) {
                *a = rho * *a + (1.0 - rho) * gi * gi;
                *theta -= lr * gi / (*a + eps).sqrt();
            }
        }
        Ok(())
    }
}

/// Gradient of `β · Σ_layers Σ_gates ‖K^u‖²_F`: `2β·K` on recurrent weights,
/// zero everywhere else.
pub fn recurrent_l2_gradient(net: &StackedNet, beta: f64) -> Result<NetGradient, OptimError> {
    if !(beta >= 0.0) {
        return Err(OptimError::Beta(beta));
    }
    let mut grads = NetGradient::zeros_like(net);
    if beta > 0.0 {
        for (g, l) in grads.layers.iter_mut().zip(&net.layers) {
            g.recurrent_weights = l.recurrent_weights.scale(2.0 * beta);
        }
    }
    Ok(grads)
}

/// `β · Σ ‖K‖²_F`, the penalty whose gradient [`recurrent_l2_gradient`] returns.
pub fn recurrent_l2_penalty(net: &StackedNet, beta: f64) -> f64 {
    let roles = net.tensor_roles();
    beta * net
        .tensors()
        .iter()
        .zip(roles)
        .filter(|(_, r)| *r == TensorRole::RecurrentWeights)
        .map(|(m, _)| m.frobenius_sq())
        .sum::<f64>()
}
