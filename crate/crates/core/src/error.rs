use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Data,
    Config,
    Internal,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: field `{field}`: {reason}")]
    Parse {
        line: usize,
        field: String,
        reason: String,
    },

    #[error("missing required counter `{0}`")]
    MissingCounter(String),

    #[error("no samples")]
    NoSamples,

    #[error("event `{0}` was not counted")]
    NotCounted(String),

    #[error("double normalization: profile set is already normalized")]
    DoubleNormalization,

    #[error("expected a {expected} profile set")]
    WrongValueState { expected: &'static str },

    #[error("sample {index}: {reason}")]
    InvalidSample { index: usize, reason: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value at component {0}")]
    NonFinite(usize),

    #[error("invalid topology: {0}")]
    Topology(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("training diverged: non-finite loss at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("function `{function}` has {count} samples, below the minimum of {min}")]
    TooFewSamples {
        function: String,
        count: usize,
        min: usize,
    },

    #[error("cluster {0} was left without any function")]
    EmptyCluster(usize),

    #[error("unknown function `{0}`")]
    UnknownFunction(String),

    #[error("unknown counter `{0}`")]
    UnknownCounter(String),

    #[error("counter spec mismatch: {0}")]
    CounterSpecMismatch(String),

    #[error("run id mismatch: {0}")]
    RunMismatch(String),

    #[error("bundle checksum mismatch (document corrupted or truncated)")]
    Checksum,

    #[error("unsupported bundle format version {found} (this build reads version {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("malformed bundle: {0}")]
    MalformedBundle(String),

    #[error("i/o error on `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::Topology(_) => ErrorKind::Config,
            Error::Diverged { .. } => ErrorKind::Internal,
            _ => ErrorKind::Data,
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
