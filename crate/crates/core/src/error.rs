//! Crate-wide error type.

/// Errors reported by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Two empirical measures (or point clouds) have different particle counts.
    #[error("particle counts differ: {0} vs {1}")]
    SizeMismatch(usize, usize),

    /// Two objects live in different ambient dimensions.
    #[error("ambient dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    /// A moment/Wasserstein exponent below 1 was requested.
    #[error("exponent must satisfy p >= 1, got {0}")]
    InvalidExponent(f64),

    /// An interpolation parameter outside `[0, 1]`.
    #[error("interpolation parameter must lie in [0, 1], got {0}")]
    InvalidInterpolant(f64),

    /// A structurally invalid argument (empty input, bad shape, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Two operands were built over different time grids.
    #[error("time grid mismatch: {0}")]
    GridMismatch(String),

    /// A control value lies outside the control set, or a control array is
    /// otherwise malformed.
    #[error("invalid control: {0}")]
    InvalidControl(String),

    /// The integrator produced a non-finite state; reports the first
    /// offending grid node. Signals a vector field violating the Lipschitz
    /// and growth contract.
    #[error("non-finite state at t = {time} (grid cell {cell}); the vector field likely violates its declared regularity")]
    NonFiniteState { time: f64, cell: usize },

    /// A marginal path is malformed (wrong length, inconsistent sizes, ...).
    #[error("invalid marginal path: {0}")]
    InvalidPath(String),

    /// Underlying I/O failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// Malformed CSV input.
    #[error("csv: {0}")]
    Csv(String),
}

pub type Result<T> = std::result::Result<T, Error>;
