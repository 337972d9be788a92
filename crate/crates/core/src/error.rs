use thiserror::Error;

/// Errors raised by the metric-learning routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("{0} must not be empty")]
    Empty(&'static str),
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
    #[error("invalid label {0}: expected -1 or +1")]
    InvalidLabel(f64),
    #[error("index {index} out of range for {len} items")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("matrix is not positive definite (min eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },
    #[error("basis columns are not orthonormal (max deviation {deviation:e})")]
    NotOrthonormal { deviation: f64 },
    #[error("numerically singular system")]
    Singular,
    #[error("item {index} lies outside the subspace (relative distance {distance:e})")]
    OutsideSubspace { index: usize, distance: f64 },
    #[error("check applies to at most d edges: {edges} acyclic edges in dimension {dim}")]
    TooManyEdges { edges: usize, dim: usize },
    #[error("design {design} has {rows} comparisons, more than the dimension {dim}")]
    TooManyComparisons {
        design: usize,
        rows: usize,
        dim: usize,
    },
    #[error("items of design {design} do not have generic pairwise relations")]
    NotGeneric { design: usize },
    #[error("items do not quadratically span the subspace: rank {rank} < {required}")]
    NotSpanning { rank: usize, required: usize },
    #[error("under-determined: rank {rank} < {required}")]
    Underdetermined { rank: usize, required: usize },
    #[error("linear system is inconsistent (residual {residual:e})")]
    Inconsistent { residual: f64 },
    #[error("objective became non-finite at iteration {iteration}")]
    NonFinite { iteration: usize },
    #[error("iteration did not converge within {iterations} iterations")]
    NoConvergence { iterations: usize },
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
