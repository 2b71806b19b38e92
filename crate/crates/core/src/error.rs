use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no samples")]
    NoSamples,

    #[error("ragged samples: expected length {expected}, found {found}")]
    RaggedSamples { expected: usize, found: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("unknown category {value:?} for {field}")]
    UnknownCategory { field: &'static str, value: String },

    #[error("empty cohort")]
    EmptyCohort,

    #[error("duplicate patient_id {0:?} in clinical table")]
    DuplicatePatient(String),

    #[error("{file}: embedding dimension {found} on line {line}, expected {expected}")]
    InconsistentDim {
        file: PathBuf,
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("{file}: {message}")]
    Parse { file: PathBuf, message: String },

    #[error("degenerate fit: at least 2 rows required, got {0}")]
    DegenerateFit(usize),

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("pca dim out of range: {q} not in [1, {max}]")]
    PcaDimOutOfRange { q: usize, max: usize },

    #[error("no events")]
    NoEvents,

    #[error("singular system")]
    SingularSystem,

    #[error("not computable: {0}")]
    NotComputable(&'static str),

    #[error("degenerate stratification: one risk group is empty")]
    DegenerateStratification,

    #[error("empty curve list")]
    EmptyCurves,

    #[error("evaluation time {time} outside follow-up range ({min}, {max})")]
    TimeOutOfRange { time: f64, min: f64, max: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("empty report")]
    EmptyReport,

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps the error with a short description of where it happened.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Strips any context layers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }
}

pub(crate) trait ResultExt<T> {
    fn context_with<F: FnOnce() -> String>(self, f: F) -> Result<T>;
}

impl<T> ResultExt<T> for Result<T> {
    fn context_with<F: FnOnce() -> String>(self, f: F) -> Result<T> {
        self.map_err(|e| e.context(f()))
    }
}
