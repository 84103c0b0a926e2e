use thiserror::Error;

/// Every failure the toolkit reports.
#[derive(Debug, Error)]
pub enum Error {
    #[error("position {u} outside the domain [{lo}, {hi}] of {what}")]
    Domain { what: String, u: f64, lo: f64, hi: f64 },

    #[error("exponential moment diverges: {0}")]
    Divergence(String),

    #[error("|t| = {t} exceeds delta = {delta}; the moment inequality does not apply")]
    Range { t: f64, delta: f64 },

    #[error("invalid regime: {0}")]
    InvalidRegime(String),

    #[error("derivative unavailable: {0}")]
    Derivative(String),

    #[error("nested Monte Carlo cost {cost} steps exceeds the budget of {cap}")]
    Budget { cost: u64, cap: u64 },

    #[error("degenerate weights: effective sample size {ess:.1} is below the floor {floor:.1}")]
    DegenerateWeights { ess: f64, floor: f64 },

    #[error("population went extinct at generation {0}")]
    Extinction(usize),

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("missing output: {0}")]
    MissingOutput(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidArgument(message.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
