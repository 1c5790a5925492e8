use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("integration became unstable: compartment {compartment} reached {value:e} at t = {time} h")]
    Stiffness {
        compartment: usize,
        time: f64,
        value: f64,
    },

    #[error("integration diverged at t = {time} h (non-finite state)")]
    Divergence { time: f64 },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate event id {id:?} (lines {first_line} and {line})")]
    DuplicateId {
        id: String,
        first_line: usize,
        line: usize,
    },

    #[error("{} event(s) precede their cascade root: {}", offenders.len(), offenders.join(", "))]
    ClockSkew { offenders: Vec<String> },

    #[error("target series has zero norm")]
    DegenerateTarget,

    #[error("fit failed: {0}")]
    FitFailed(String),

    #[error("degenerate test: {0}")]
    DegenerateTest(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
