use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("degenerate vector in {0}: norm below tolerance")]
    DegenerateVector(&'static str),

    #[error("degenerate rotation: {0}")]
    DegenerateRotation(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("transport error after {attempts} attempt(s){}: {message}", status.map(|s| format!(" (last status {s})")).unwrap_or_default())]
    Transport {
        attempts: u32,
        status: Option<u16>,
        message: String,
    },

    #[error("integrity check failed: {0}")]
    Integrity(String),

    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),

    #[error("cannot resolve edit term {index}: {message}")]
    Resolution { index: usize, message: String },

    #[error("provider failed for triplet {id}: {source}")]
    Triplet {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: u64, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Dimension {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    /// Short machine-readable code, used by the HTTP layer and CLI exit mapping.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension_mismatch",
            Error::DegenerateVector(_) => "degenerate_vector",
            Error::DegenerateRotation(_) => "degenerate_rotation",
            Error::Input(_) => "invalid_input",
            Error::Contract(_) => "contract_violation",
            Error::NonFinite(_) => "non_finite",
            Error::Unsupported(_) => "unsupported",
            Error::Transport { .. } => "transport_error",
            Error::Integrity(_) => "integrity_error",
            Error::ConfigMismatch(_) => "config_mismatch",
            Error::Resolution { .. } => "unresolved_term",
            Error::Triplet { .. } => "provider_error",
            Error::Diverged { .. } => "diverged",
            Error::Io(_) => "io_error",
            Error::Json(_) => "json_error",
        }
    }
}
