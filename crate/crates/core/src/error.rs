use thiserror::Error;

/// Errors raised by the plant, structure, oracle and learning routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),

    #[error("(A, B) is not controllable: controllability matrix has rank {rank} < {n}")]
    NotControllable { rank: usize, n: usize },

    #[error("invalid cost parameters: {0}")]
    InvalidCost(String),

    #[error("state diverged at step {step}: |x| = {norm:e}")]
    DivergedState { step: usize, norm: f64 },

    #[error("weight count is not integral for n={n}, m={m}, N={horizon}, q={q}")]
    NonIntegralCount {
        n: usize,
        m: usize,
        horizon: usize,
        q: usize,
    },

    #[error("entry H[{row},{col}] = {value:e} violates the structural zero pattern")]
    StructureViolation { row: usize, col: usize, value: f64 },

    #[error("{0} is not positive definite")]
    NotPositiveDefinite(&'static str),

    #[error("no convergence after {iterations} iterations (last change {last_change:e})")]
    MaxIterationsExceeded { iterations: usize, last_change: f64 },

    #[error("excitation deficient: regressor rank {rank} < {required} weights")]
    ExcitationDeficient { rank: usize, required: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("oracle weight vector is identically zero")]
    ZeroOracle,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            found,
        })
    }
}
