//! Predictive summaries, uncertainty metrics and post-hoc calibration.

pub mod calibration;
pub mod metrics;
pub mod report;
pub mod summary;

pub use calibration::{calibrate_crude, calibrate_isotonic, calibrate_scale, CalibrationMap, ScaleObjective};
pub use metrics::{calibration_curve, calibration_levels, kl_g, mpl, nip_g, piw, rl2e, rmsce, sdcv};
pub use report::{CalibrationReport, MetricsReport};
pub use summary::{predict_ensemble, Aleatoric, PredictiveSummary};
