//! Monte Carlo sensitivities of killed diffusions on a half-line.
//!
//! For `dX = b(X) dt + sigma(X) dW` killed at its first passage below `L`,
//! the crate estimates `P_T f(x) = E[f(X_T) 1{T < tau}]` and its spatial
//! derivative through reflected-process representations and a boundary-valid
//! Bismut-Elworthy-Li formula. Closed-form kernels, a PDE solver and one-step
//! quadrature identities serve as independent references.

pub mod estimators;
pub mod identity_checks;
pub mod model;
pub mod oracle_analytic;
pub mod oracle_pde;
pub mod payoff;
pub mod quadrature;
pub mod rng;
pub mod sampling;
pub mod special;
pub mod weights;

pub use estimators::{EstimatorResult, RunSpec};
pub use model::{build_model, CoefficientModel, ParamTable, TimeGrid};
pub use payoff::{build_payoff, TestFunction};
pub use rng::RngStream;
