use std::path::PathBuf;

/// Errors produced by the landmark toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("expected {expected} landmarks, found {found}")]
    PointCount { expected: usize, found: usize },

    #[error("landmark {index} has a non-finite coordinate")]
    NonFinite { index: usize },

    #[error("malformed landmark file {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown landmark group `{0}`")]
    UnknownGroup(String),

    #[error("unknown region `{0}`")]
    UnknownRegion(String),

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("registration failed: best hypothesis had {best} inliers, {required} required")]
    RegistrationFailed { best: usize, required: usize },

    #[error("size mismatch: {0}")]
    SizeMismatch(String),

    #[error("unnormalized coordinate {value} (expected within [-0.5, 0.5])")]
    Unnormalized { value: f64 },

    #[error("training diverged at {batch}")]
    Diverged { batch: String },

    #[error("empty split `{0}`")]
    EmptySplit(String),

    #[error("stylizer failed: {0}")]
    Stylizer(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable identifier used in machine-readable error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::PointCount { .. } => "point_count",
            Error::NonFinite { .. } => "non_finite",
            Error::Malformed { .. } => "malformed",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::UnknownGroup(_) => "unknown_group",
            Error::UnknownRegion(_) => "unknown_region",
            Error::Degenerate(_) => "degenerate",
            Error::RegistrationFailed { .. } => "registration_failed",
            Error::SizeMismatch(_) => "size_mismatch",
            Error::Unnormalized { .. } => "unnormalized",
            Error::Diverged { .. } => "diverged",
            Error::EmptySplit(_) => "empty_split",
            Error::Stylizer(_) => "stylizer",
            Error::Model(_) => "model",
            Error::Internal(_) => "internal",
            Error::Io { .. } => "io",
            Error::Image(_) => "image",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
            Error::Tensor(_) => "tensor",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
