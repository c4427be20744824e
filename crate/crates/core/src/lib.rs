//! Empirical discrepancy estimators for overidentified moment-condition
//! models: empirical likelihood (EL), exponential tilting (ET), continuous
//! updating (CU), the Cressie–Read family, and exponentially tilted empirical
//! likelihood (ETEL).
//!
//! The crate covers the inner tilting problem ([`tilt`]), profile objectives
//! and point estimation ([`estimator`]), classical and
//! misspecification-robust inference ([`inference`]), and a deterministic
//! Monte Carlo harness ([`montecarlo`]).

pub mod designs;
pub mod error;
pub mod estimator;
pub mod family;
pub mod inference;
pub mod linalg;
pub mod model;
pub mod montecarlo;
pub mod tilt;

pub use designs::{model_from_id, Design, HallHorowitz, Location, MeanKnownVariance};
pub use error::{Error, Result};
pub use family::{Carrier, Family};
pub use model::{eval_moments, numeric_jacobian, Dataset, MomentMatrix, MomentModel, ThetaBox};
pub use tilt::{implied_weights, solve_lambda, TiltSolution, TiltStatus};
pub use estimator::{
    estimate, etel_gradient, etel_objective, gel_profile, EstimateOptions, EstimateResult,
    EstimateStatus,
};
pub use inference::{
    bias_o1, chi2_sf, classical_covariance, independence_diagnostic, infer, lr_statistic,
    overid_statistic, robust_covariance, BiasEstimate, ClassicalInference, InferenceReport,
    RobustBeta,
};
