use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
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

    #[error("malformed embeddings file {path}: {reason}")]
    MalformedEmbeddings { path: PathBuf, reason: String },

    #[error("duplicate id `{id}`")]
    DuplicateId { id: String },

    #[error("invalid document `{id}`: {reason}")]
    InvalidDocument { id: String, reason: String },

    #[error("embedding id `{id}` has no matching document")]
    UnknownEmbeddingId { id: String },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimMismatch {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in embedding `{id}`")]
    NonFiniteEmbedding { id: String },

    #[error("user `{user_id}` has no embedded profile documents; a cold-start record is required")]
    ColdStartRequired { user_id: String },

    #[error("no candidate documents for user `{user_id}`")]
    EmptyCandidates { user_id: String },

    #[error("ranker {ranker} needs embeddings but {what}")]
    MissingEmbeddings { ranker: String, what: String },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("silhouette needs at least 2 non-outlier clusters, found {found}")]
    TooFewClusters { found: usize },

    #[error("artifact `{0}` is missing")]
    MissingArtifact(String),

    #[error("artifact `{artifact}` is corrupt: expected sha256 {expected}, found {found}")]
    Corruption {
        artifact: String,
        expected: String,
        found: String,
    },

    #[error("unknown task `{0}`")]
    UnknownTask(String),

    #[error("invalid template `{name}`: {reason}")]
    Template { name: String, reason: String },

    #[error("generation endpoint unavailable after {attempts} attempts: {reason}")]
    GenerationUnavailable { attempts: u32, reason: String },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 1 validation, 2 runtime, 3 endpoint.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. }
            | Error::MalformedEmbeddings { .. }
            | Error::DuplicateId { .. }
            | Error::InvalidDocument { .. }
            | Error::UnknownEmbeddingId { .. }
            | Error::DimMismatch { .. }
            | Error::NonFiniteEmbedding { .. }
            | Error::InvalidParams(_)
            | Error::UnknownTask(_)
            | Error::Template { .. }
            | Error::Config(_) => 1,
            Error::GenerationUnavailable { .. } | Error::Protocol(_) => 3,
            _ => 2,
        }
    }
}
