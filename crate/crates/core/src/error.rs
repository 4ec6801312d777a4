use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite integrand value {value} at node {node:?}")]
    NonFiniteIntegrand { node: Vec<f64>, value: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("missing multi-index {0:?} in derivative table")]
    MissingMultiIndex(Vec<u32>),

    #[error("matrix is singular")]
    SingularMatrix,

    #[error("unknown cover label {0}")]
    UnknownLabel(String),

    #[error("covering check failed: frequency {point:?} is not covered{detail}")]
    NotCovered { point: Vec<f64>, detail: String },

    #[error("partition of unity denominator {value:e} below 1e-12 at {point:?} (inner sets do not cover)")]
    PartitionDenominator { point: Vec<f64>, value: f64 },

    #[error("Calderón lower bound fails: minimum of t_0 on the grid is {0:e}")]
    CalderonLowerBound(f64),

    #[error("non-finite value in pair ({i}, {j}) at {point:?}")]
    NonFinitePair { i: String, j: String, point: Vec<f64> },

    #[error("lattice vector {alpha:?} is not a multiple of the grid spacing {spacing}; try n = {suggested_n}")]
    OffGridLattice {
        alpha: Vec<f64>,
        spacing: f64,
        suggested_n: usize,
    },

    #[error("signal does not decay near the grid boundary: |f| = {value:e} at index {index} within margin {margin}")]
    BoundaryViolation {
        index: usize,
        value: f64,
        margin: f64,
    },

    #[error("t_0 = {value:e} below 1e-12 at grid point {point:?}")]
    MultiplierVanishes { point: Vec<f64>, value: f64 },

    #[error("contraction failed: residual did not decrease for 5 consecutive iterations (measured ratio {ratio})")]
    ContractionFailed { ratio: f64, history: Vec<f64> },

    #[error("lattice tolerance {0} too large: distinct lattice points would merge")]
    LatticeTolerance(f64),

    #[error("zero denominator in threshold computation")]
    ZeroDenominator,

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;
