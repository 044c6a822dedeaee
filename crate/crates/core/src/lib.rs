//! Differentiable particle filtering with optimal placement resampling.
//!
//! The crate is organised bottom-up:
//!
//! * [`autodiff`]: scalar reverse-mode differentiation on a tape,
//! * [`rng`] and [`models`]: seeded streams and state-space models,
//! * [`resampling`]: multinomial and optimal placement resampling,
//! * [`filter`]: the particle filter, likelihood estimate and ELBO,
//! * [`oracle`]: exact Kalman likelihood for the linear Gaussian model,
//! * [`training`] and [`objectives`]: Adam ascent on the ELBO.

pub mod autodiff;
pub mod error;
pub mod filter;
pub mod models;
pub mod objectives;
pub mod oracle;
pub mod resampling;
pub mod rng;
pub mod training;

pub use autodiff::{Gradients, Real, Tape, Var};
pub use error::{Error, Result};
pub use filter::{FilterConfig, FilterRun, Proposal, Resampler};
pub use resampling::{EmpiricalCdf, OprOptions, WeightedParticles};
pub use rng::RngStream;
