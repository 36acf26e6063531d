use thiserror::Error;

/// Crate-wide error type. Data-dependent failures only; shape and
/// finiteness violations inside the math kernels are programmer errors
/// and panic via assertions instead.
#[derive(Error, Debug)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {pivot:.3e} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix is not Hermitian (max asymmetry {max_dev:.3e})")]
    NotHermitian { max_dev: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("distance must be positive, got {0}")]
    NonPositiveDistance(f64),

    #[error("user {0} has an all-zero channel")]
    ZeroChannel(usize),

    #[error("stacked channel is singular, cannot zero-force")]
    SingularChannel,

    #[error("MSE matrix is singular for user {0}")]
    SingularMse(usize),

    #[error("all per-user outputs are zero, no beamformer to reconstruct")]
    AllZeroOutput,

    #[error("reference objective is degenerate ({0:.3e})")]
    DegenerateReference(f64),

    #[error("solver failed at iteration {iter}: {source}")]
    AtIteration {
        iter: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("bad file format: {0}")]
    BadFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn at_iteration(self, iter: usize) -> Error {
        Error::AtIteration {
            iter,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
