//! The three learning problems: linear Gaussian model parameters, a
//! time-varying proposal, and stochastic volatility parameters.

use crate::autodiff::Real;
use crate::error::{input, Result};
use crate::filter::{run_filter, FilterConfig, Proposal};
use crate::models::{Lgssm, StochVol, TimeVaryingProposal};
use crate::oracle::LgssmTruth;
use crate::rng::RngStream;
use crate::training::Objective;

/// Learns `θ = [α, γ]` of the linear Gaussian model with fixed noise
/// variances and a bootstrap proposal.
#[derive(Debug, Clone)]
pub struct LgssmMle {
    pub observations: Vec<f64>,
    pub sigma_x2: f64,
    pub sigma_y2: f64,
    pub filter: FilterConfig,
}

impl Objective for LgssmMle {
    fn param_names(&self) -> Vec<String> {
        vec!["alpha".into(), "gamma".into()]
    }

    fn log_likelihood<S: Real>(&self, theta: &[S], rng: &mut RngStream) -> Result<S> {
        let [alpha, gamma] = two(theta)?;
        let model = Lgssm::new(alpha, gamma, self.sigma_x2, self.sigma_y2)?;
        Ok(run_filter(&self.filter, &model, &Proposal::Bootstrap, &self.observations, alpha, rng)?.log_lik)
    }
}

fn two<S: Real>(theta: &[S]) -> Result<[S; 2]> {
    match theta {
        &[a, b] => Ok([a, b]),
        _ => Err(input(format!("expected 2 parameters, got {}", theta.len()))),
    }
}

/// Learns `λ = {μ_t, β_t, log σ_t}` of a time-varying proposal for a fixed
/// linear Gaussian model. Parameters are laid out as all `μ`, then all `β`,
/// then all `log σ`.
#[derive(Debug, Clone)]
pub struct ProposalLearning {
    pub observations: Vec<f64>,
    pub model: LgssmTruth,
    pub filter: FilterConfig,
}

impl ProposalLearning {
    pub fn initial_params(&self) -> Vec<f64> {
        let p = TimeVaryingProposal::initial(self.observations.len());
        [p.mu, p.beta, p.log_sigma].concat()
    }
}

impl Objective for ProposalLearning {
    fn param_names(&self) -> Vec<String> {
        let n = self.observations.len();
        ["mu", "beta", "log_sigma"]
            .iter()
            .flat_map(|name| (1..=n).map(move |t| format!("{name}_{t}")))
            .collect()
    }

    fn log_likelihood<S: Real>(&self, theta: &[S], rng: &mut RngStream) -> Result<S> {
        let n = self.observations.len();
        if theta.len() != 3 * n {
            return Err(input(format!("expected {} parameters, got {}", 3 * n, theta.len())));
        }
        let anchor = theta[0];
        let alpha = anchor.lift(self.model.alpha);
        let model = Lgssm::new(alpha, anchor.lift(self.model.gamma), self.model.sigma_x2, self.model.sigma_y2)?;
        let params = TimeVaryingProposal::new(
            theta[..n].to_vec(),
            theta[n..2 * n].to_vec(),
            theta[2 * n..].to_vec(),
        )?;
        let proposal = Proposal::Learned {
            params: &params,
            alpha,
        };
        Ok(run_filter(&self.filter, &model, &proposal, &self.observations, anchor, rng)?.log_lik)
    }
}

/// Learns `[μ, φ_raw, log σₓ, log σᵧ]` of the stochastic volatility model
/// with a bootstrap proposal.
#[derive(Debug, Clone)]
pub struct StochVolMle {
    pub observations: Vec<f64>,
    pub filter: FilterConfig,
}

impl Objective for StochVolMle {
    fn param_names(&self) -> Vec<String> {
        vec!["mu".into(), "phi_raw".into(), "log_sigma_x".into(), "log_sigma_y".into()]
    }

    fn log_likelihood<S: Real>(&self, theta: &[S], rng: &mut RngStream) -> Result<S> {
        let &[mu, phi_raw, log_sigma_x, log_sigma_y] = theta else {
            return Err(input(format!("expected 4 parameters, got {}", theta.len())));
        };
        let model = StochVol::new(mu, phi_raw, log_sigma_x, log_sigma_y);
        Ok(run_filter(&self.filter, &model, &Proposal::Bootstrap, &self.observations, mu, rng)?.log_lik)
    }
}
