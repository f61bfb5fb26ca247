use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("row {row}: {message}")]
    Row { row: usize, message: String },

    #[error("invalid value for `{field}`: {value}{}", row.map(|r| format!(" (row {r})")).unwrap_or_default())]
    Validation {
        field: String,
        value: String,
        row: Option<usize>,
    },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("track {id} is missing feature `{feature}`")]
    MissingFeature { id: String, feature: String },

    #[error("only one class present: {0}")]
    SingleClass(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("transport error: {message}")]
    Transport { message: String, retryable: bool },

    #[error("fixture miss: no recorded response for {0}")]
    FixtureMiss(String),

    #[error("malformed payload: {0}")]
    Format(String),

    #[error("unresolved track: {0}")]
    Unresolved(String),

    #[error("credentials: {0}")]
    Credentials(String),

    #[error("model file: {0}")]
    ModelFile(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Path {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn validation(field: &str, value: impl ToString) -> Self {
        Error::Validation {
            field: field.to_string(),
            value: value.to_string(),
            row: None,
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    pub fn path(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Path {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit code: 1 for validation/data problems, 2 for environment/IO problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Stage { source, .. } => source.exit_code(),
            Error::Io(_)
            | Error::Path { .. }
            | Error::FixtureMiss(_)
            | Error::Credentials(_)
            | Error::Transport { .. } => 2,
            _ => 1,
        }
    }
}

/// Attach a pipeline stage name to an error.
pub trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.in_stage(stage))
    }
}
