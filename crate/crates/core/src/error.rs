use thiserror::Error;

/// Errors produced anywhere in the emulator.
#[derive(Debug, Error)]
pub enum Error {
    /// A vector that has to be normalized or refreshed carries no weight.
    #[error("degenerate state: {0}")]
    DegenerateState(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid gate: {0}")]
    InvalidGate(String),

    #[error("invalid program: {0}")]
    InvalidProgram(String),

    #[error("invalid lattice: {0}")]
    InvalidLattice(String),

    #[error("invalid potential: {0}")]
    InvalidPotential(String),

    /// The time step leaves the stochastic polytope; `max_dt` is the largest admissible step.
    #[error("time step {dt} too large, maximal admissible step is {max_dt}")]
    StepTooLarge { dt: f64, max_dt: f64 },

    #[error("invalid time step: {0}")]
    InvalidTimeStep(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(field: &str, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.to_string(),
            message: message.into(),
        }
    }
}
