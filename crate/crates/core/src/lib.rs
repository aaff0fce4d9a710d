//! Weighted nonparametric maximum likelihood for the marginal mean of
//! recurrent events in the presence of a competing terminal event.
//!
//! The marginal mean is modelled through a semiparametric transformation
//! model `E{N*(t) | Z} = G{ ∫ exp(βᵀZ(s)) dΛ₀(s) }` with a Box–Cox or
//! logarithmic link `G`. Subjects whose follow-up ended with a terminal event
//! stay in a pseudo risk set, weighted by the inverse probability of
//! censoring.
//!
//! The crate is `no_std` (it needs `alloc`) and carries no IO. File formats,
//! the Monte Carlo runner and the command-line tool live in the `remm` crate.
#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod censoring;
pub mod data;
pub mod error;
pub mod estimator;
pub mod likelihood;
pub mod linalg;
pub mod link;
pub mod marginal;
pub mod mc;
pub mod optim;
pub mod simulation;
pub mod variance;

mod math;

pub use censoring::{ipc_weights, km_censoring, pseudo_risk_size, CensoringSurvival, WeightContext};
pub use data::{covariate_at, diagnostics, diagnostics_with_bound, CovariateInterval, Dataset, DiagnosticsReport, SubjectRecord};
pub use error::{Error, Result};
pub use estimator::{fit_npmle, fit_npmle_weighted, ghosh_lin_fit, initial_values, profile_jump_update, FitResult, SolverOptions};
pub use likelihood::{grad_loglik, hessian_loglik, loglik, ParamVector};
pub use variance::{eta_components, functional_covariance, functional_variance, kappa_components, sandwich, VarianceResult};
pub use marginal::{aalen_johansen_marginal_mean, nelson_aalen_pseudo, predict_marginal_mean, predict_with_covariance, BandScale, PredictionCurve, StepFunction};
pub use link::{eval_link, LinkFamily, LinkFunction};
pub use mc::{aggregate, run_mc_study, run_replicate, McRow, McSummary, ReplicateOutcome};
pub use simulation::{gamma3_of, gamma3_uncapped, gompertz_cum, simulate_dataset, simulate_subject, subdist, EventKind, SimulationConfig};
