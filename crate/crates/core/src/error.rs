use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("attention dimension {dim} is not divisible by {heads} heads")]
    HeadsDivisibility { dim: usize, heads: usize },
    #[error("empty set passed to {op}")]
    EmptySet { op: &'static str },
    #[error("parameter `{name}` has no gradient")]
    MissingGradient { name: String },
    #[error("parameter `{name}` registered twice")]
    DuplicateParam { name: String },
    #[error("unknown parameter `{name}`")]
    UnknownParam { name: String },
    #[error("non-finite value in {context}")]
    NonFinite { context: String },
    #[error("sigma must be strictly positive, got {value}")]
    NonPositiveSigma { value: f64 },
    #[error("invalid architecture dag: {reason}")]
    InvalidDag { reason: String },
    #[error("no valid candidates to rank")]
    NoValidCandidates,
    #[error("inputs have zero variance, pearson correlation undefined")]
    ZeroVariance,
    #[error("need at least {need} paired values, got {got}")]
    TooFewValues { need: usize, got: usize },
    #[error("task set is empty")]
    EmptyTasks,
    #[error("accuracy {value} outside [0, 1]")]
    AccuracyOutOfRange { value: f64 },
    #[error("unsupported format version {found}, this build reads version {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt file {path}: {reason}")]
    Corrupt { path: String, reason: String },
    #[error("cannot parse `{input}` as {what}")]
    Parse { input: String, what: &'static str },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
