use thiserror::Error;

/// Errors surfaced by the library. Constraint violations inside the MCMC
/// never raise these; they are signalled with a `-inf` log density instead.
#[derive(Debug, Error)]
pub enum PqrError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("infeasible state: {0}")]
    Infeasible(String),

    #[error("initialization failed: {0}")]
    Initialization(String),

    #[error("linear program failed: {0}")]
    LinearProgram(String),
}

pub type Result<T> = std::result::Result<T, PqrError>;
