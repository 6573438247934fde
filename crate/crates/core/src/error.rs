use std::path::PathBuf;

/// Errors surfaced by the library. Variants map onto the CLI exit codes:
/// missing upstream artifacts are reported separately from everything else.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown domain preset `{0}`")]
    UnknownPreset(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("manifest error in {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },

    #[error("{path}: manifest lists {expected} images but {found} were found")]
    CountMismatch {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("{path}: unsupported format version {found} (this build reads {supported})")]
    FormatVersion {
        path: PathBuf,
        found: u32,
        supported: u32,
    },

    #[error("missing artifact: {0}")]
    MissingArtifact(PathBuf),

    #[error("config hash mismatch for stage `{stage}`: upstream {upstream}, current {current}")]
    ConfigMismatch {
        stage: String,
        upstream: String,
        current: String,
    },

    #[error("image codec error for {path}: {reason}")]
    Image { path: PathBuf, reason: String },

    #[error("io error at {path}: {source}")]
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

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| Error::Io {
            path: path.into(),
            source,
        })
    }
}
