use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("moment function returned a non-finite value at observation {row}")]
    NonFiniteMoment { row: usize },

    #[error("invalid design: {0}")]
    BadDesign(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid dataset: {0}")]
    BadData(String),

    #[error("origin is not inside the convex hull of the moment vectors")]
    ConvexHullFailure,

    #[error("no feasible step inside the tilting-function domain")]
    DomainFailure,

    #[error("numerically singular matrix: {0}")]
    SingularHessian(&'static str),

    #[error("no start produced a feasible inner problem")]
    NoConvexHull,

    #[error("iteration limit reached without convergence")]
    MaxIter,

    #[error("moment covariance matrix is singular")]
    SingularOmega,

    #[error("moment Jacobian does not have full column rank")]
    RankDeficientJacobian,

    #[error("model is just identified; overidentification test has zero degrees of freedom")]
    DegenerateDf,

    #[error("degrees of freedom must be a positive integer, got {0}")]
    BadDf(u32),

    #[error("sandwich bread matrix is singular")]
    SingularGamma,

    #[error("augmented moment residual {0:.3e} exceeds tolerance")]
    MomentResidualTooLarge(f64),

    #[error("only {valid} valid replications after {attempts} attempts")]
    TooManyDiscards { valid: usize, attempts: usize },

    #[error("unknown model or family identifier: {0}")]
    UnknownId(String),

    #[error("{0}")]
    Parse(String),
}
