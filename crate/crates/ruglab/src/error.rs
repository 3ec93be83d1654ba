use thiserror::Error;

/// Unified error type for the whole pipeline.
///
/// Variants are grouped by the exit code the CLI maps them to:
/// configuration/usage problems (1), data problems (2), and
/// experiment/model problems (3).
#[derive(Debug, Error)]
pub enum Error {
    // -------- configuration / usage --------
    #[error("invalid configuration: {0}")]
    Config(String),

    // -------- data --------
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}: bad header: {msg}")]
    BadHeader { file: String, msg: String },
    #[error("{file}:{line}: {msg}")]
    MalformedRow { file: String, line: u64, msg: String },
    #[error("{file}:{line}: duplicate token metadata for `{token_id}`")]
    DuplicateMeta {
        file: String,
        line: u64,
        token_id: String,
    },
    #[error("corpus is empty after filtering")]
    EmptyCorpus,
    /// No TVL observation exists at or before the end of the label window.
    #[error("no TVL observation within or before the label window")]
    EmptyTvl,

    // -------- models / experiments --------
    #[error("input has no rows")]
    EmptyInput,
    #[error("input lengths disagree: {0}")]
    LengthMismatch(String),
    #[error("feature columns do not match the model: expected [{expected}], got [{got}]")]
    ColumnMismatch { expected: String, got: String },
    #[error("AUC is undefined: needs at least one positive and one negative label")]
    UndefinedAuc,
    #[error("warm start is only supported for boosting families, not {0}")]
    UnsupportedWarmStart(String),
    #[error("model file: {0}")]
    ModelFormat(String),
    #[error("model format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("grid search failed: {0}")]
    GridSearch(String),
    #[error("experiment failed: {0}")]
    Experiment(String),
}

impl Error {
    /// Process exit code for the CLI: 1 usage, 2 data, 3 experiment.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Io { .. }
            | Error::BadHeader { .. }
            | Error::MalformedRow { .. }
            | Error::DuplicateMeta { .. }
            | Error::EmptyCorpus
            | Error::EmptyTvl => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
