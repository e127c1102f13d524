use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("io: {0}")]
    Io(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("mesh format: {0}")]
    MeshFormat(String),
    #[error("degenerate geometry")]
    DegenerateGeometry,
    #[error("resolution mismatch")]
    ResolutionMismatch,
    #[error("config error: {0}")]
    Config(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("timed out after {0:.1}s")]
    Timeout(f64),
    #[error("http status {status}: {body}")]
    Http { status: u16, body: String },
    #[error("empty response from {0} backend")]
    EmptyResponse(String),
    #[error("backend contract violation: {0}")]
    BackendContractViolation(String),
    #[error("EmptyForeground")]
    EmptyForeground,
    #[error("prompt parse error: {0}")]
    PromptParse(String),
    #[error("all drafts failed in iteration {0}")]
    AllDraftsFailed(u32),
    #[error("memory order error: expected iteration {expected}, got {got}")]
    MemoryOrder { expected: u32, got: u32 },
    #[error("load error: {0}")]
    Load(String),
    #[error("dataset error: {case}: {message}")]
    Dataset { case: String, message: String },
    #[error("metric error: {0}")]
    Metric(String),
}

impl Error {
    /// Failures worth retrying: connection problems, timeouts, 5xx and 429.
    pub fn is_retriable(&self) -> bool {
        match self {
            Error::Transport(_) | Error::Timeout(_) => true,
            Error::Http { status, .. } => *status >= 500 || *status == 429,
            _ => false,
        }
    }

    /// Short stable name, used in logs and discard reasons.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io(_) => "Io",
            Error::InvalidInput(_) => "InvalidInput",
            Error::Precondition(_) => "Precondition",
            Error::MeshFormat(_) => "MeshFormat",
            Error::DegenerateGeometry => "DegenerateGeometry",
            Error::ResolutionMismatch => "ResolutionMismatch",
            Error::Config(_) => "Config",
            Error::Transport(_) | Error::Timeout(_) | Error::Http { .. } => "TransportError",
            Error::EmptyResponse(_) => "EmptyResponse",
            Error::BackendContractViolation(_) => "BackendContractViolation",
            Error::EmptyForeground => "EmptyForeground",
            Error::PromptParse(_) => "PromptParseError",
            Error::AllDraftsFailed(_) => "AllDraftsFailed",
            Error::MemoryOrder { .. } => "MemoryOrderError",
            Error::Load(_) => "LoadError",
            Error::Dataset { .. } => "DatasetError",
            Error::Metric(_) => "MetricError",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
