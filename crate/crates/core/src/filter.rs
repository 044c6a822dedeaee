//! Particle filter with per-step resampling and log-domain weights.
//!
//! `log_incr_t = ln Σᵢ exp(ln w_{t−1}ⁱ + ln g(y_t|x_tⁱ) + ln f(x_tⁱ|x_{t−1}ⁱ) − ln q(x_tⁱ|x_{t−1}ⁱ))`
//! with normalized previous weights, so `Σ_t log_incr_t` is the log of the
//! standard unbiased likelihood estimator.

use crate::autodiff::{logsumexp, Real};
use crate::error::{input, Error, Result};
use crate::models::{Gaussian, StateSpaceModel, TimeVaryingProposal};
use crate::resampling::{multinomial_resample, opr_resample_traced, OprOptions, OprTrace, WeightedParticles};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Resampler {
    Multinomial,
    Opr,
    None,
}

impl std::str::FromStr for Resampler {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multinomial" | "mr" => Ok(Resampler::Multinomial),
            "opr" => Ok(Resampler::Opr),
            "none" => Ok(Resampler::None),
            other => Err(input(format!("unknown resampler `{other}`"))),
        }
    }
}

impl std::fmt::Display for Resampler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Resampler::Multinomial => "multinomial",
            Resampler::Opr => "opr",
            Resampler::None => "none",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterConfig {
    pub n_particles: usize,
    pub resampler: Resampler,
    pub opr: OprOptions,
    /// Keep per-step OPR branch traces in the [`FilterRun`].
    pub trace: bool,
}

impl FilterConfig {
    pub fn new(n_particles: usize, resampler: Resampler) -> Result<Self> {
        let config = FilterConfig {
            n_particles,
            resampler,
            opr: OprOptions { jitter: true },
            trace: false,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_particles == 0 {
            return Err(input("need at least one particle"));
        }
        if self.resampler == Resampler::Opr && self.n_particles < 2 {
            return Err(input("optimal placement resampling needs at least 2 particles"));
        }
        Ok(())
    }
}

/// Where new particles are drawn from.
#[derive(Debug, Clone, Copy)]
pub enum Proposal<'a, S> {
    /// The model's own transition (and initial) density.
    Bootstrap,
    /// `N(μ_t + β_t α x_{t−1}, σ_t²)`; at the first step `x₀ = 0`.
    Learned {
        params: &'a TimeVaryingProposal<S>,
        alpha: S,
    },
}

#[derive(Debug, Clone)]
pub struct StepOutput<S> {
    /// Particles after resampling.
    pub particles: WeightedParticles<S>,
    pub log_incr: S,
    pub trace: Option<OprTrace>,
}

#[derive(Debug, Clone)]
pub struct FilterRun<S> {
    pub log_lik: S,
    pub per_step_log_incr: Vec<S>,
    pub final_particles: WeightedParticles<S>,
    /// One entry per step when tracing OPR.
    pub traces: Vec<OprTrace>,
}

fn numerical(step: usize, reason: impl Into<String>) -> Error {
    Error::Numerical {
        step,
        reason: reason.into(),
    }
}

/// Propagates, reweights and resamples one time step.
///
/// `previous` is `None` at the first step, where particles come from the
/// initial distribution (or the learned proposal with `x₀ = 0`) and the
/// prior weights are uniform.
#[allow(clippy::too_many_arguments)]
pub fn pf_step<S: Real, M: StateSpaceModel<S>>(
    previous: Option<&WeightedParticles<S>>,
    y: f64,
    t: usize,
    model: &M,
    proposal: &Proposal<'_, S>,
    config: &FilterConfig,
    anchor: S,
    rng: &mut RngStream,
) -> Result<StepOutput<S>> {
    let n = previous.map_or(config.n_particles, WeightedParticles::len);
    let mut positions = Vec::with_capacity(n);
    let mut log_weights = Vec::with_capacity(n);
    let uniform = anchor.lift(-(n as f64).ln());
    let zero = anchor.lift(0.0);

    for i in 0..n {
        let (x_prev, lw_prev) = match previous {
            Some(p) => (p.positions[i], p.log_weights[i]),
            None => (zero, uniform),
        };
        let prior: Gaussian<S> = match previous {
            Some(_) => model.transition(x_prev)?,
            None => model.initial()?,
        };
        let lw = match proposal {
            Proposal::Bootstrap => {
                let x = prior.sample(rng)?;
                positions.push(x);
                lw_prev + model.observe_logpdf(y, x)?
            }
            Proposal::Learned { params, alpha } => {
                let q = params.at(t, x_prev, *alpha)?;
                let x = q.sample(rng)?;
                positions.push(x);
                lw_prev + model.observe_logpdf(y, x)? + prior.logpdf(x)? - q.logpdf(x)?
            }
        };
        if !lw.value().is_finite() {
            return Err(numerical(t, format!("log-weight of particle {i} is {}", lw.value())));
        }
        log_weights.push(lw);
    }

    let log_incr = logsumexp(&log_weights).map_err(|e| numerical(t, e.to_string()))?;
    if !log_incr.value().is_finite() {
        return Err(numerical(t, "log-likelihood increment is not finite"));
    }
    let normalized: Vec<S> = log_weights.into_iter().map(|lw| lw - log_incr).collect();
    let weighted = WeightedParticles::new(positions, normalized)?;

    let (particles, trace) = match config.resampler {
        Resampler::None => (weighted, None),
        Resampler::Multinomial => (multinomial_resample(&weighted, rng)?, None),
        Resampler::Opr => {
            let (p, trace) = opr_resample_traced(&weighted, config.opr).map_err(|e| match e {
                Error::Numerical { .. } => e,
                other => numerical(t, other.to_string()),
            })?;
            (p, Some(trace))
        }
    };
    Ok(StepOutput {
        particles,
        log_incr,
        trace,
    })
}

/// Runs the filter over all observations, resampling after every step.
///
/// `anchor` is any scalar of the kind being computed with; for tape
/// variables it fixes the tape constants are recorded on.
pub fn run_filter<S: Real, M: StateSpaceModel<S>>(
    config: &FilterConfig,
    model: &M,
    proposal: &Proposal<'_, S>,
    observations: &[f64],
    anchor: S,
    rng: &mut RngStream,
) -> Result<FilterRun<S>> {
    config.validate()?;
    if observations.is_empty() {
        return Err(input("need at least one observation"));
    }
    if let Proposal::Learned { params, .. } = proposal {
        if params.len() < observations.len() {
            return Err(input(format!(
                "proposal covers {} steps but there are {} observations",
                params.len(),
                observations.len()
            )));
        }
    }
    let mut particles: Option<WeightedParticles<S>> = None;
    let mut increments = Vec::with_capacity(observations.len());
    let mut traces = Vec::new();
    for (t, &y) in observations.iter().enumerate() {
        let step = pf_step(particles.as_ref(), y, t, model, proposal, config, anchor, rng)?;
        increments.push(step.log_incr);
        if config.trace {
            traces.extend(step.trace);
        }
        particles = Some(step.particles);
    }
    let mut log_lik = increments[0];
    for &inc in &increments[1..] {
        log_lik = log_lik + inc;
    }
    Ok(FilterRun {
        log_lik,
        per_step_log_incr: increments,
        final_particles: particles.expect("at least one step"),
        traces,
    })
}

/// Mean of `batches` independent filter log-likelihoods; replicate `b` uses
/// `rng.child(b)`. All replicates share the caller's tape.
pub fn elbo<S: Real, M: StateSpaceModel<S>>(
    config: &FilterConfig,
    model: &M,
    proposal: &Proposal<'_, S>,
    observations: &[f64],
    batches: usize,
    anchor: S,
    rng: &RngStream,
) -> Result<S> {
    if batches == 0 {
        return Err(input("need at least one batch"));
    }
    let mut total: Option<S> = None;
    for b in 0..batches {
        let run = run_filter(config, model, proposal, observations, anchor, &mut rng.child(b as u64))?;
        total = Some(match total {
            None => run.log_lik,
            Some(acc) => acc + run.log_lik,
        });
    }
    Ok(total.expect("batches ≥ 1") / batches as f64)
}
