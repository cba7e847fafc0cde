//! Posterior inference, predictive summaries, uncertainty metrics and
//! post-hoc calibration for neural-network regression and physics-informed
//! networks.

pub mod approx;
pub mod autodiff;
pub mod benchmarks;
pub mod data;
pub mod ensembles;
pub mod error;
pub mod eval;
pub mod gp;
pub mod mcmc;
pub mod mlp;
pub mod model;
pub mod optim;
pub mod pinn;
pub mod posterior;
pub mod probmodel;
pub mod rng;
pub mod tensor;
pub mod workflow;

pub use data::LabeledDataset;
pub use error::{Result, UqError};
pub use mlp::{Activation, Architecture, MlpModel};
pub use model::{DiffModel, LinearModel, ParamVector};
pub use posterior::PosteriorEnsemble;
pub use tensor::DenseMatrix;
