//! Stochastic gradient ascent on the particle-filter ELBO.

use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::autodiff::{Real, Tape};
use crate::error::{input, Error, Result};
use crate::rng::RngStream;

/// A differentiable log-likelihood estimator over a flat parameter vector.
///
/// `log_likelihood` must consume randomness only from `rng`, so a replicate
/// is reproducible from its stream alone.
pub trait Objective: Sync {
    fn param_names(&self) -> Vec<String>;

    fn log_likelihood<S: Real>(&self, theta: &[S], rng: &mut RngStream) -> Result<S>;
}

/// Bias-corrected Adam, stepping uphill.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step_count: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n_params: usize, lr: f64) -> Self {
        AdamState {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step_count: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Updates `params` in place in the direction of `grads`.
    pub fn step(&mut self, grads: &[f64], params: &mut [f64]) -> Result<()> {
        if grads.len() != self.m.len() || params.len() != self.m.len() {
            return Err(input(format!(
                "adam expects {} parameters, got {} gradients and {} parameters",
                self.m.len(),
                grads.len(),
                params.len()
            )));
        }
        self.step_count += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step_count as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step_count as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] += self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Log-likelihood and gradient of one replicate on a private tape.
pub fn replicate_value_and_grad<O: Objective>(
    objective: &O,
    theta: &[f64],
    rng: &mut RngStream,
) -> Result<(f64, Vec<f64>)> {
    let tape = Tape::with_capacity(1 << 16);
    let leaves = theta.iter().map(|&v| tape.leaf(v)).collect::<Result<Vec<_>>>()?;
    let ll = objective.log_likelihood(&leaves, rng)?;
    let grads = tape.backward(ll)?;
    Ok((ll.value(), leaves.iter().map(|&l| grads.wrt(l)).collect()))
}

/// ELBO estimate (mean over `batches` replicates) and its gradient.
///
/// Replicate `b` runs on `rng.child(b)` with its own tape; results are
/// merged in replicate order, so the output does not depend on scheduling.
pub fn elbo_and_gradient<O: Objective>(
    objective: &O,
    theta: &[f64],
    batches: usize,
    rng: &RngStream,
) -> Result<(f64, Vec<f64>)> {
    if batches == 0 {
        return Err(input("need at least one batch"));
    }
    let parts: Vec<(f64, Vec<f64>)> = (0..batches)
        .into_par_iter()
        .map(|b| replicate_value_and_grad(objective, theta, &mut rng.child(b as u64)))
        .collect::<Result<_>>()?;
    let scale = 1.0 / batches as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; theta.len()];
    for (v, g) in &parts {
        value += v;
        for (acc, gi) in grad.iter_mut().zip(g) {
            *acc += gi;
        }
    }
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok((value * scale, grad))
}

/// ELBO estimate on plain floats (no tape).
pub fn elbo_value<O: Objective>(objective: &O, theta: &[f64], batches: usize, rng: &RngStream) -> Result<f64> {
    if batches == 0 {
        return Err(input("need at least one batch"));
    }
    let values: Vec<f64> = (0..batches)
        .into_par_iter()
        .map(|b| objective.log_likelihood(theta, &mut rng.child(b as u64)))
        .collect::<Result<_>>()?;
    Ok(values.iter().sum::<f64>() / batches as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batches: usize,
    pub lr: f64,
    pub seed: u64,
    /// Optional clamp on each gradient component.
    pub clip: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub elbo: f64,
    pub max_abs_grad: f64,
    /// Parameters the ELBO and gradient were evaluated at.
    pub params: Vec<f64>,
    pub wall_time: Duration,
    pub clipped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub param_names: Vec<String>,
    pub records: Vec<EpochRecord>,
    /// Parameters after the last update.
    pub final_params: Vec<f64>,
}

impl TrainReport {
    pub fn last(&self) -> &EpochRecord {
        self.records.last().expect("at least one epoch")
    }
}

pub fn train<O: Objective>(objective: &O, theta0: &[f64], config: &TrainConfig) -> Result<TrainReport> {
    train_with(objective, theta0, config, |_| {})
}

/// Runs `config.epochs` Adam steps; epoch `e` draws its noise from
/// `RngStream::new(seed, 0).child(e)`. `on_epoch` sees each record as it is
/// produced.
pub fn train_with<O, F>(objective: &O, theta0: &[f64], config: &TrainConfig, mut on_epoch: F) -> Result<TrainReport>
where
    O: Objective,
    F: FnMut(&EpochRecord),
{
    if config.epochs == 0 {
        return Err(input("epochs must be at least 1"));
    }
    if !(config.lr >= 0.0) || !config.lr.is_finite() {
        return Err(input(format!("learning rate must be non-negative, got {}", config.lr)));
    }
    let names = objective.param_names();
    if names.len() != theta0.len() {
        return Err(input(format!(
                "objective has {} parameters, initial point has {}",
                names.len(),
                theta0.len()
        )));
    }
    let root = RngStream::new(config.seed, 0);
    let mut adam = AdamState::new(theta0.len(), config.lr);
    let mut params = theta0.to_vec();
    let mut records = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let started = Instant::now();
        let (elbo, mut grad) = elbo_and_gradient(objective, &params, config.batches, &root.child(epoch as u64))
            .map_err(|e| Error::Diverged {
                epoch,
                reason: e.to_string(),
            })?;
        if !elbo.is_finite() {
            return Err(Error::Diverged {
                epoch,
                reason: format!("ELBO is {elbo}"),
            });
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::Diverged {
                epoch,
                reason: format!("gradient of `{}` is {}", names[i], grad[i]),
            });
        }
        let max_abs_grad = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        let mut clipped = false;
        if let Some(c) = config.clip {
            for g in &mut grad {
                if g.abs() > c {
                    *g = g.signum() * c;
                    clipped = true;
                }
            }
        }
        let evaluated_at = params.clone();
        adam.step(&grad, &mut params)?;
        let record = EpochRecord {
            epoch,
            elbo,
            max_abs_grad,
            params: evaluated_at,
            wall_time: started.elapsed(),
            clipped,
        };
        on_epoch(&record);
        records.push(record);
    }
    Ok(TrainReport {
        param_names: names,
        records,
        final_params: params,
    })
}
