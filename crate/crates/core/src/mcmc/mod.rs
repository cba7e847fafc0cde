//! Sampling-based posterior inference.

pub mod gibbs;
pub mod hmc;
pub mod langevin;

pub use gibbs::{gibbs_update_sigma_theta, gibbs_update_sigma_u, GibbsConfig, GibbsSweep};
pub use hmc::{hmc_gibbs_sample, hmc_sample, leapfrog, HmcConfig};
pub use langevin::{langevin_sample, langevin_step, LangevinConfig};
