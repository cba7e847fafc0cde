//! Optimization-based posterior approximations.

pub mod laplace;
pub mod mcd;
pub mod mfvi;

pub use laplace::{laplace_fit, laplace_train, LaplaceConfig, LaplaceFit, LinearizedTarget};
pub use mcd::{mcd_ensemble, mcd_train, McdConfig};
pub use mfvi::{elbo, mfvi_fit, MeanFieldPosterior, MfviConfig, MfviOutcome};
