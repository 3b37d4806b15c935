use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate {kind} id `{id}`{}", context.as_deref().map(|c| format!(" in {c}")).unwrap_or_default())]
    DuplicateId {
        kind: &'static str,
        id: String,
        context: Option<String>,
    },

    #[error("query `{0}` has an empty corpus")]
    EmptyCorpus(String),

    #[error("collection is empty")]
    EmptyCollection,

    #[error("invalid item in query `{query_id}`: {message}")]
    InvalidItem { query_id: String, message: String },

    #[error("missing utility labels for {} (query, item) pairs, e.g. {}", .0.len(), fmt_pairs(.0))]
    MissingLabels(Vec<(String, String)>),

    #[error("label refers to unknown pair ({query_id}, {item_id})")]
    UnknownLabelPair { query_id: String, item_id: String },

    #[error("unknown query `{0}`")]
    UnknownQuery(String),

    #[error("unknown item `{item_id}` for query `{query_id}`")]
    UnknownItem { query_id: String, item_id: String },

    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("temperature alpha = {alpha} overflows the score range")]
    TemperatureOverflow { alpha: f64 },

    #[error("corpus of {n} items exceeds the exact-enumeration limit of {limit}")]
    CorpusTooLarge { n: usize, limit: usize },

    #[error("exposure vectors have mismatched support ({left} vs {right} items)")]
    MismatchedSupport { left: usize, right: usize },

    #[error("{metric} = {value} lies outside its bound [0, {bound}]")]
    OutOfBounds {
        metric: &'static str,
        value: f64,
        bound: f64,
    },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error(transparent)]
    Generation(#[from] GenerationError),

    #[error("labeling aborted at query `{query_id}`: {source}")]
    LabelingAborted {
        query_id: String,
        #[source]
        source: GenerationError,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Failures of the generator bridge. Every variant that concerns a single
/// request carries its id.
#[derive(Debug, Error)]
pub enum GenerationError {
    #[error("failed to spawn generator `{command}`: {source}")]
    Spawn {
        command: String,
        #[source]
        source: std::io::Error,
    },

    #[error("generator did not announce readiness: {0}")]
    NotReady(String),

    #[error("request {id}: timed out after {secs:.1}s")]
    Timeout { id: u64, secs: f64 },

    #[error("request {id}: malformed response `{line}`")]
    Malformed { id: u64, line: String },

    #[error("request {id}: generator process exited")]
    ProcessExited { id: u64 },

    #[error("request {expected}: response carried unexpected id {got}")]
    IdMismatch { expected: u64, got: u64 },

    #[error("request {id}: write failed: {source}")]
    Write {
        id: u64,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    /// Configuration problems map to exit code 2 in the CLI.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::InvalidSpec(_) | Error::Parse { .. } | Error::Io { .. }
        )
    }
}

fn fmt_pairs(pairs: &[(String, String)]) -> String {
    pairs
        .iter()
        .take(3)
        .map(|(q, i)| format!("({q}, {i})"))
        .collect::<Vec<_>>()
        .join(", ")
}
