use alloc::vec::Vec;

/// Errors produced by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("matrix must be square, got {rows}x{cols}")]
    NonSquare { rows: usize, cols: usize },
    #[error("matrix has no states")]
    Empty,
    #[error("row {row} sums to {sum}, expected 1")]
    RowSumViolation { row: usize, sum: f64 },
    #[error("entry ({row}, {col}) is negative: {value}")]
    NegativeEntry { row: usize, col: usize, value: f64 },
    #[error("entry ({row}, {col}) is not finite")]
    NotFinite { row: usize, col: usize },
    #[error("state weights are invalid: {0}")]
    InvalidWeights(&'static str),
    #[error("invalid partition: {0}")]
    InvalidPartition(&'static str),
    #[error("superstate {0} is not used by any state")]
    UnusedSuperstate(usize),
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("simplex basis needs at least 2 states, got {0}")]
    BasisTooSmall(usize),
    #[error("no convergence after {0} iterations")]
    NoConvergence(usize),
    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),
    #[error("superstate {0} has no mass")]
    EmptySuperstate(usize),
    #[error("Cholesky factorization failed for superstate {0}")]
    CholeskyFailure(usize),
    #[error("perturbation row {row} sums to {sum}, expected 0")]
    InadmissiblePerturbation { row: usize, sum: f64 },
    #[error("distribution of superstate {superstate} is below the floor at coordinate {coordinate}")]
    FloorViolation { superstate: usize, coordinate: usize },
    #[error("partitions are not given for a consecutive range of k; missing {0:?}")]
    NonConsecutiveK(Vec<usize>),
    #[error("partition stored under k = {key} has {found} superstates")]
    PartitionSizeMismatch { key: usize, found: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("block sizes must be positive")]
    BlockTooSmall,
    #[error("class counts do not match: {0}")]
    CountMismatch(&'static str),
}

pub type Result<T> = core::result::Result<T, Error>;
