use alloc::format;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{backward, forward, ModelParams};
use crate::dataset::SegmentBatch;
use crate::error::{Error, Result};
use crate::objective::{loss_and_gradient, loss_lowrank, LossConfig};
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    /// Standard deviation of the Gaussian perturbation applied to a copy of
    /// the weights for each gradient evaluation.
    pub weight_noise_std: f64,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-5, momentum: 0.9, weight_noise_std: 0.6f64.sqrt(), seed: 0 }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("learning rate {} is invalid", self.learning_rate)));
        }
        if !(self.weight_noise_std >= 0.0) || !self.weight_noise_std.is_finite() {
            return Err(Error::Config(format!("weight noise {} is invalid", self.weight_noise_std)));
        }
        Ok(())
    }
}

/// SGD-with-momentum state. The noise for step `s` is drawn from a
/// generator seeded by `(seed, s)`, so resuming at a saved step reproduces
/// the uninterrupted trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: OptimizerConfig,
    pub velocity: ModelParams,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig, params: &ModelParams) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, velocity: params.zeros_like(), step: 0 })
    }
}

/// Noise-free objective value of the network on one segment.
pub fn evaluate_loss(params: &ModelParams, batch: &SegmentBatch, loss: &LossConfig) -> Result<f64> {
    let (v, _) = forward(params, &batch.features)?;
    loss_lowrank(&v, &batch.labels, loss, Some(&batch.weights))
}

/// One update on one segment: perturb a copy of the weights, backpropagate
/// the objective through it, then apply momentum SGD to the clean weights.
/// Returns the loss at the perturbed weights.
pub fn train_step(
    params: &mut ModelParams,
    state: &mut OptimizerState,
    batch: &SegmentBatch,
    loss: &LossConfig,
) -> Result<f64> {
    if state.velocity.spec() != params.spec() {
        return Err(Error::State("optimizer state belongs to a different network".into()));
    }
    let cfg = state.config;
    let noisy;
    let eval_params = if cfg.weight_noise_std > 0.0 {
        let mut copy = params.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, state.step));
        let normal = Normal::new(0.0, cfg.weight_noise_std).expect("validated std");
        for w in copy.values_mut() {
            *w += normal.sample(&mut rng);
        }
        noisy = copy;
        &noisy
    } else {
        &*params
    };
    let (v, cache) = forward(eval_params, &batch.features).map_err(|e| match e {
        Error::Numeric { layer, detail } => Error::Divergence(format!("layer {layer}: {detail}")),
        other => other,
    })?;
    let (value, d_v) = loss_and_gradient(&v, &batch.labels, loss, Some(&batch.weights))?;
    if !value.is_finite() {
        return Err(Error::Divergence(format!("loss {value} at step {}", state.step)));
    }
    let grads = backward(eval_params, &cache, &d_v)?;
    if grads.values().any(|g| !g.is_finite()) {
        return Err(Error::Divergence(format!("non-finite gradient at step {}", state.step)));
    }
    for ((w, vel), g) in params.values_mut().zip(state.velocity.values_mut()).zip(grads.values()) {
        *vel = cfg.momentum * *vel - cfg.learning_rate * g;
        *w += *vel;
    }
    state.step += 1;
    Ok(value)
}
