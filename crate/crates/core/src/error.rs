use thiserror::Error;

/// Every failure the simulated stack can report.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("region length must be positive")]
    BadSize,
    #[error("semaphore increment must be at least 1")]
    BadDelta,
    #[error("unknown semaphore {0}")]
    NoSem(usize),
    #[error("access [{offset}, {offset}+{size}) out of bounds for length {len}")]
    Oob { offset: usize, size: usize, len: usize },
    #[error("deadlock: blocked contexts {}", blocked.join(", "))]
    Deadlock { blocked: Vec<String> },
    #[error("proxy worker for queue {0} is not running")]
    ProxyDown(usize),
    #[error("operation not valid for protocol {0}")]
    WrongProtocol(String),
    #[error("LL flag 0 is reserved for empty packets")]
    ZeroFlag,
    #[error("range not aligned to element size {0}")]
    BadAlign(usize),
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("unsupported plan version {0}")]
    Version(u64),
    #[error("dangling reference at {location}: {what}")]
    Ref { location: String, what: String },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("plan expects {expected} ranks but the world has {actual}")]
    RankMismatch { expected: usize, actual: usize },
    #[error("topology error: {0}")]
    Topology(String),
    #[error("no algorithm covers {bytes} bytes for {collective}")]
    NoAlgo { collective: String, bytes: u64 },
    #[error("latency must be positive")]
    BadTime,
    #[error("invalid plan: {0}")]
    Invalid(String),
    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    /// Stable error code, e.g. `E_DEADLOCK`.
    pub fn code(&self) -> &'static str {
        match self {
            Error::BadSize => "E_BAD_SIZE",
            Error::BadDelta => "E_BAD_DELTA",
            Error::NoSem(_) => "E_NO_SEM",
            Error::Oob { .. } => "E_OOB",
            Error::Deadlock { .. } => "E_DEADLOCK",
            Error::ProxyDown(_) => "E_PROXY_DOWN",
            Error::WrongProtocol(_) => "E_WRONG_PROTOCOL",
            Error::ZeroFlag => "E_ZERO_FLAG",
            Error::BadAlign(_) => "E_BAD_ALIGN",
            Error::Syntax(_) => "E_SYNTAX",
            Error::Version(_) => "E_VERSION",
            Error::Ref { .. } => "E_REF",
            Error::Shape(_) => "E_SHAPE",
            Error::Protocol(_) => "E_PROTOCOL",
            Error::RankMismatch { .. } => "E_RANK_MISMATCH",
            Error::Topology(_) => "E_TOPOLOGY",
            Error::NoAlgo { .. } => "E_NO_ALGO",
            Error::BadTime => "E_BAD_TIME",
            Error::Invalid(_) => "E_INVALID",
            Error::Config(_) => "E_CONFIG",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
