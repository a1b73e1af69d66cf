use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = KtError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum KtError {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{0}: no unmasked position to normalize over")]
    EmptySupport(&'static str),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("non-finite value produced by {0}")]
    Numeric(String),
    #[error("index {index} out of range for {what} of size {size}")]
    Index {
        what: &'static str,
        index: usize,
        size: usize,
    },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("corrupt id mapping in section '{section}': {detail}")]
    CorruptMapping { section: String, detail: String },
    #[error("{path}:{line}: {detail}")]
    Parse {
        path: PathBuf,
        line: u64,
        detail: String,
    },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("degenerate evidence: observation has zero probability")]
    DegenerateEvidence,
    #[error("no signal: {0}")]
    NoSignal(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("undefined AUC: {0}")]
    UndefinedAuc(String),
    #[error("completeness error: {0}")]
    Completeness(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl KtError {
    /// Short stable identifier used in machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            KtError::Dimension { .. } => "dimension",
            KtError::EmptySupport(_) => "empty_support",
            KtError::Contract(_) => "contract",
            KtError::Numeric(_) => "numeric",
            KtError::Index { .. } => "index",
            KtError::Schema(_) => "schema",
            KtError::CorruptMapping { .. } => "corrupt_mapping",
            KtError::Parse { .. } => "parse",
            KtError::Protocol(_) => "protocol",
            KtError::Data(_) => "data",
            KtError::InsufficientData(_) => "insufficient_data",
            KtError::DegenerateEvidence => "degenerate_evidence",
            KtError::NoSignal(_) => "no_signal",
            KtError::Config(_) => "config",
            KtError::UndefinedAuc(_) => "undefined_auc",
            KtError::Completeness(_) => "completeness",
            KtError::Validation(_) => "validation",
            KtError::Io { .. } => "io",
            KtError::Json(_) => "json",
            KtError::Csv(_) => "csv",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        KtError::Io {
            path: path.into(),
            source,
        }
    }
}
