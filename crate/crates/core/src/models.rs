//! State-space models: the linear Gaussian model, the stochastic volatility
//! model and the time-varying Gaussian proposal.
//!
//! Everything is generic over [`Real`] so the same code simulates data on
//! plain floats and builds differentiable densities on a tape.

use std::f64::consts::PI;

use crate::autodiff::Real;
use crate::error::{input, Error, Result};
use crate::rng::RngStream;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `ln N(x; mean, var)`.
pub fn gaussian_logpdf<S: Real>(x: S, mean: S, var: S) -> Result<S> {
    if !(var.value() > 0.0) {
        return Err(Error::Domain {
            op: "gaussian_logpdf",
            value: var.value(),
        });
    }
    let d = x - mean;
    Ok((var * (2.0 * PI)).ln() * -0.5 - d * d / (var * 2.0))
}

/// `ln N(x; mean, exp(log_var))`, avoiding a round trip through `exp`/`ln`.
pub fn gaussian_logpdf_logvar<S: Real>(x: S, mean: S, log_var: S) -> S {
    let d = x - mean;
    (log_var + LN_2PI) * -0.5 - d * d / (log_var.exp() * 2.0)
}

/// `mean + std·ε` with `ε ~ N(0, 1)` drawn from `rng`; gradients flow
/// through `mean` and `std` only.
pub fn reparam_gaussian_sample<S: Real>(mean: S, std: S, rng: &mut RngStream) -> Result<S> {
    if !(std.value() > 0.0) {
        return Err(Error::Domain {
            op: "reparam_gaussian_sample",
            value: std.value(),
        });
    }
    let eps = rng.normal();
    Ok(mean + std * eps)
}

/// A univariate Gaussian described by its mean and standard deviation.
#[derive(Debug, Clone, Copy)]
pub struct Gaussian<S> {
    pub mean: S,
    pub std: S,
}

impl<S: Real> Gaussian<S> {
    pub fn from_var(mean: S, var: f64) -> Self {
        Gaussian {
            mean,
            std: mean.lift(var.sqrt()),
        }
    }

    pub fn from_std(mean: S, std: S) -> Self {
        Gaussian { mean, std }
    }

    pub fn var(&self) -> S {
        self.std * self.std
    }

    pub fn sample(&self, rng: &mut RngStream) -> Result<S> {
        reparam_gaussian_sample(self.mean, self.std, rng)
    }

    /// Same density as [`gaussian_logpdf`], written in terms of the standard
    /// deviation.
    pub fn logpdf(&self, x: S) -> Result<S> {
        if !(self.std.value() > 0.0) {
            return Err(Error::Domain {
                op: "gaussian_logpdf",
                value: self.std.value(),
            });
        }
        let z = (x - self.mean) / self.std;
        Ok((self.std.ln() + 0.5 * LN_2PI + z * z * 0.5) * -1.0)
    }
}

/// A one-dimensional state-space model with Gaussian initial and transition
/// densities.
pub trait StateSpaceModel<S: Real> {
    /// Distribution of the first state.
    fn initial(&self) -> Result<Gaussian<S>>;
    /// Distribution of `x_t` given `x_{t-1} = prev`.
    fn transition(&self, prev: S) -> Result<Gaussian<S>>;
    /// `ln g(y | x)`.
    fn observe_logpdf(&self, y: f64, x: S) -> Result<S>;
    /// Draws an observation for a plain state; used for simulation only.
    fn sample_observation(&self, x: f64, rng: &mut RngStream) -> f64;
}

/// `x_t = α x_{t−1} + v_t`, `y_t = γ x_t + e_t`, `x₁ ~ N(0, σ²ₓ)`.
///
/// Only `alpha` and `gamma` are learnable; the noise variances are fixed.
#[derive(Debug, Clone, Copy)]
pub struct Lgssm<S> {
    pub alpha: S,
    pub gamma: S,
    pub sigma_x2: f64,
    pub sigma_y2: f64,
}

impl<S: Real> Lgssm<S> {
    pub fn new(alpha: S, gamma: S, sigma_x2: f64, sigma_y2: f64) -> Result<Self> {
        if !(sigma_x2 > 0.0 && sigma_y2 > 0.0) || !sigma_x2.is_finite() || !sigma_y2.is_finite() {
            return Err(input(format!(
                "noise variances must be positive, got σ²ₓ={sigma_x2}, σ²ᵧ={sigma_y2}"
            )));
        }
        Ok(Lgssm {
            alpha,
            gamma,
            sigma_x2,
            sigma_y2,
        })
    }
}

impl<S: Real> StateSpaceModel<S> for Lgssm<S> {
    fn initial(&self) -> Result<Gaussian<S>> {
        Ok(Gaussian::from_var(self.alpha.lift(0.0), self.sigma_x2))
    }

    fn transition(&self, prev: S) -> Result<Gaussian<S>> {
        Ok(Gaussian::from_var(self.alpha * prev, self.sigma_x2))
    }

    fn observe_logpdf(&self, y: f64, x: S) -> Result<S> {
        gaussian_logpdf(x.lift(y), self.gamma * x, x.lift(self.sigma_y2))
    }

    fn sample_observation(&self, x: f64, rng: &mut RngStream) -> f64 {
        self.gamma.value() * x + self.sigma_y2.sqrt() * rng.normal()
    }
}

/// Stochastic volatility model in unconstrained coordinates:
/// `φ = tanh(phi_raw)`, `σₓ = exp(log_sigma_x)`, `σᵧ = exp(log_sigma_y)`.
///
/// `x_t = μ + φ(x_{t−1} − μ) + v_t`, `y_t = exp(x_t/2) e_t`,
/// `x₁ ~ N(μ, σ²ₓ/(1−φ²))`.
#[derive(Debug, Clone, Copy)]
pub struct StochVol<S> {
    mu: S,
    phi_raw: S,
    log_sigma_x: S,
    log_sigma_y: S,
    phi: S,
    sigma_x: S,
}

impl<S: Real> StochVol<S> {
    pub fn new(mu: S, phi_raw: S, log_sigma_x: S, log_sigma_y: S) -> Self {
        StochVol {
            mu,
            phi_raw,
            log_sigma_x,
            log_sigma_y,
            phi: phi_raw.tanh(),
            sigma_x: log_sigma_x.exp(),
        }
    }

    /// `[μ, phi_raw, log σₓ, log σᵧ]`.
    pub fn unconstrained(&self) -> [S; 4] {
        [self.mu, self.phi_raw, self.log_sigma_x, self.log_sigma_y]
    }

    pub fn mu(&self) -> S {
        self.mu
    }

    pub fn phi(&self) -> S {
        self.phi
    }

    pub fn sigma_x(&self) -> S {
        self.sigma_x
    }

    pub fn sigma_y(&self) -> S {
        self.log_sigma_y.exp()
    }
}

impl StochVol<f64> {
    /// Builds the model from natural parameters; requires `|φ| < 1` and
    /// positive scales.
    pub fn from_natural(mu: f64, phi: f64, sigma_x: f64, sigma_y: f64) -> Result<Self> {
        if !(phi.abs() < 1.0) || !(sigma_x > 0.0) || !(sigma_y > 0.0) {
            return Err(input(format!(
                "need |φ| < 1 and positive scales, got φ={phi}, σₓ={sigma_x}, σᵧ={sigma_y}"
            )));
        }
        Ok(StochVol::new(mu, phi.atanh(), sigma_x.ln(), sigma_y.ln()))
    }
}

impl<S: Real> StateSpaceModel<S> for StochVol<S> {
    fn initial(&self) -> Result<Gaussian<S>> {
        let keep = (self.phi * self.phi - 1.0) * -1.0;
        if !(keep.value() > 0.0) {
            return Err(Error::Domain {
                op: "stochvol_initial",
                value: self.phi.value(),
            });
        }
        Ok(Gaussian::from_std(self.mu, self.sigma_x / keep.sqrt()))
    }

    fn transition(&self, prev: S) -> Result<Gaussian<S>> {
        let mean = self.mu + self.phi * (prev - self.mu);
        Ok(Gaussian::from_std(mean, self.sigma_x))
    }

    fn observe_logpdf(&self, y: f64, x: S) -> Result<S> {
        let log_var = x + self.log_sigma_y * 2.0;
        Ok(gaussian_logpdf_logvar(x.lift(y), x.lift(0.0), log_var))
    }

    fn sample_observation(&self, x: f64, rng: &mut RngStream) -> f64 {
        (0.5 * x).exp() * self.sigma_y().value() * rng.normal()
    }
}

/// Learnable proposal `r(x_t | x_{t−1}) = N(μ_t + β_t α x_{t−1}, σ_t²)`,
/// one parameter triple per time step.
#[derive(Debug, Clone)]
pub struct TimeVaryingProposal<S> {
    pub mu: Vec<S>,
    pub beta: Vec<S>,
    pub log_sigma: Vec<S>,
}

impl<S: Real> TimeVaryingProposal<S> {
    pub fn new(mu: Vec<S>, beta: Vec<S>, log_sigma: Vec<S>) -> Result<Self> {
        if mu.len() != beta.len() || mu.len() != log_sigma.len() {
            return Err(input(format!(
                "proposal sequences differ in length: {}, {}, {}",
                mu.len(),
                beta.len(),
                log_sigma.len()
            )));
        }
        Ok(TimeVaryingProposal {
            mu,
            beta,
            log_sigma,
        })
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    /// Proposal at zero-based step `t`.
    pub fn at(&self, t: usize, x_prev: S, alpha: S) -> Result<Gaussian<S>> {
        if t >= self.len() {
            return Err(input(format!(
                "proposal step {t} out of range for length {}",
                self.len()
            )));
        }
        let mean = self.mu[t] + self.beta[t] * alpha * x_prev;
        Ok(Gaussian::from_std(mean, self.log_sigma[t].exp()))
    }

    pub fn sample(&self, t: usize, x_prev: S, alpha: S, rng: &mut RngStream) -> Result<S> {
        self.at(t, x_prev, alpha)?.sample(rng)
    }

    pub fn logpdf(&self, t: usize, x: S, x_prev: S, alpha: S) -> Result<S> {
        self.at(t, x_prev, alpha)?.logpdf(x)
    }
}

impl TimeVaryingProposal<f64> {
    /// `μ_t = 0, β_t = 1, log σ_t = 0`: the transition mean with unit noise.
    pub fn initial(len: usize) -> Self {
        TimeVaryingProposal {
            mu: vec![0.0; len],
            beta: vec![1.0; len],
            log_sigma: vec![0.0; len],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<f64>,
    pub observations: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Ancestral simulation: `x₁`, `y₁`, `x₂`, `y₂`, ...
pub fn simulate<M: StateSpaceModel<f64>>(model: &M, len: usize, rng: &mut RngStream) -> Result<Trajectory> {
    if len == 0 {
        return Err(input("trajectory length must be at least 1"));
    }
    let mut states = Vec::with_capacity(len);
    let mut observations = Vec::with_capacity(len);
    let mut x = model.initial()?.sample(rng)?;
    for t in 0..len {
        if t > 0 {
            x = model.transition(x)?.sample(rng)?;
        }
        states.push(x);
        observations.push(model.sample_observation(x, rng));
    }
    Ok(Trajectory {
        states,
        observations,
    })
}
