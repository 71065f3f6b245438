//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("metric is numerically singular at {point:?} (|det g| = {det:e})")]
    SingularMetric { point: Vec<f64>, det: f64 },

    #[error("point {point:?} is outside the declared chart range of `{chart}`")]
    OutOfChart { chart: String, point: Vec<f64> },

    #[error("weight field is only C0; {context} requires a C2 weight")]
    WeightNotSmooth { context: String },

    #[error("invalid effective dimension N = {n_eff}: {reason}")]
    InvalidN { n_eff: f64, reason: String },

    #[error("geodesic left the chart at affine parameter {t}")]
    LeftChart { t: f64 },

    #[error("null defect |g(x',x')| = {defect:e} exceeded tolerance at t = {t}")]
    NullDefect { t: f64, defect: f64 },

    #[error("cross-section tangent block is not positive definite: {reason}")]
    DegenerateSection { reason: String },

    #[error("linear system for the transverse null vector is singular")]
    NoTransverse,

    #[error("focal point: det of the spacelike Jacobi minor crossed {floor:e} at t = {t}")]
    FocalPoint { t: f64, floor: f64 },

    #[error("cubic fit residual {residual:e} exceeds tolerance {tol:e}")]
    FitFailure { residual: f64, tol: f64 },

    #[error("parameter t = {t} outside the generator window [{t_min}, {t_max}]")]
    OutOfWindow { t: f64, t_min: f64, t_max: f64 },

    #[error("transverse rescaling function must be positive (got {value} at node {node})")]
    NonPositiveScale { node: usize, value: f64 },

    #[error("fiber masses differ by {mismatch:e} (tolerance {tol:e})")]
    MassMismatch { mismatch: f64, tol: f64 },

    #[error("density profile has empty support")]
    EmptySupport,

    #[error("interpolant is non-injective at t = {t}")]
    NonInjective { t: f64 },

    #[error("measure is not absolutely continuous w.r.t. the reference: {reason}")]
    NotAbsolutelyContinuous { reason: String },

    #[error("measures are not null connected (max fiber-mass mismatch {mismatch:e})")]
    NotNullConnected { mismatch: f64 },

    #[error("light-cone comparison curve increases by {violation:e} at s = {s}")]
    MonotonicityViolation { s: f64, violation: f64 },

    #[error("generator {node} is not complete over the certificate window: {reason}")]
    NotComplete { node: usize, reason: String },

    #[error("perturbed metric loses Lorentzian signature at {point:?} (epsilon = {epsilon})")]
    SignatureLoss { point: Vec<f64>, epsilon: f64 },

    #[error("unknown metric `{name}` (catalog: {catalog})")]
    UnknownMetric { name: String, catalog: String },

    #[error("missing metric parameter `{name}`")]
    MissingParameter { name: String },

    #[error("expression parse error at byte {at}: {message}")]
    ExprParse { at: usize, message: String },

    #[error("unbound variable `{name}` in weight expression ({context})")]
    UnboundVariable { name: String, context: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}
