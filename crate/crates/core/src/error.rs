use thiserror::Error;

/// Errors produced by mesh construction, assembly and linear solves.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("advection normal component changes sign within face {face} (midpoint {midpoint:?})")]
    SignChangeOnFace { face: usize, midpoint: [f64; 2] },

    #[error("coefficient is not admissible at x = {point:?}: {what}")]
    IndefiniteCoefficient { point: [f64; 2], what: String },

    #[error("matrix is singular at pivot {pivot}")]
    Singular { pivot: usize },

    #[error("solve residual {residual:.3e} exceeds tolerance {tolerance:.3e}")]
    ResidualTooLarge { residual: f64, tolerance: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("incompatible wells: integral of q_I is {injection:.6e} but integral of q_P is {production:.6e}")]
    IncompatibleWells { injection: f64, production: f64 },

    #[error("time horizon {t_end} is not an integral multiple of the step size {dt}")]
    NonIntegralSteps { t_end: f64, dt: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
