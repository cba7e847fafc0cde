//! Physics-informed networks for the 1D diffusion-reaction benchmark.

pub mod benchmark;
pub mod data;
pub mod model;
pub mod problem;
pub mod solver;

pub use data::{Channel, ChannelData, PinnDataset, PinnMeta};
pub use model::{residual_from_jet, LossWeights, PinnField, PinnLoss, UPinn, UPinnTarget};
pub use problem::{ChannelNoise, LambdaRole, PdeProblem, ReferenceFields};
pub use solver::{reference_solve, MolConfig, PdeCoefficients, ReferenceSolution};
pub use benchmark::{run_steep, FieldScore, SteepConfig, SteepOutcome};
