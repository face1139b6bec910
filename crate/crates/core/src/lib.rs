//! Approximate Bayesian inference for latent Gaussian survival models.
//!
//! The engine implements a two-stage Laplace-approximation scheme: a Newton
//! Gaussian approximation of the latent field conditional on the
//! hyperparameters (stage 1) and an explored hyperparameter posterior whose
//! weighted Gaussian conditionals yield latent marginals (stage 2). On top
//! of the engine sit model assemblers for seven survival-model families —
//! parametric AFT/PH, piecewise-constant-baseline Cox via Poisson
//! augmentation, mixture cure, competing risks, multi-state, frailty, and
//! joint longitudinal-survival — and post-processors for the usual
//! interpretation outputs (hazard ratios, baseline curves, CIFs, transition
//! probabilities).

pub mod assemble;
pub mod error;
pub mod fit;
pub mod gauss;
pub mod likelihoods;
pub mod marginal;
pub mod model;
pub mod oracle;
pub mod postprocess;
pub mod precision;
pub mod priors;
pub mod survdata;
pub mod theta;

pub use error::{Error, Result};
