use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point at depth {0} is on or behind the camera plane")]
    NonPositiveDepth(f64),
    #[error("nothing projects inside the image")]
    EmptyProjection,
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("no object-free region found after {0} attempts")]
    NoFreeRegion(usize),
    #[error("bad shape: {0}")]
    BadShape(String),
    #[error("shape mismatch for {what}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        what: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("task `{0}` requires a reference image")]
    MissingReference(String),
    #[error("task `{0}` requires target boxes")]
    MissingTargetBoxes(String),
    #[error("unknown object `{0}`")]
    UnknownObject(String),
    #[error("unknown scene `{0}`")]
    UnknownScene(String),
    #[error("unknown object bank entry `{0}`")]
    UnknownBankEntry(String),
    #[error("object bank has no entry of category `{0}`")]
    EmptyCategory(String),
    #[error("no detection for instance {0}")]
    NoDetection(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid field `{field}`: {message}")]
    Validation { field: String, message: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("png: {0}")]
    Png(String),
}

impl Error {
    /// Stable machine-readable code, shared by the HTTP service and the C API.
    pub fn code(&self) -> &'static str {
        match self {
            Error::NonPositiveDepth(_) => "NonPositiveDepth",
            Error::EmptyProjection => "EmptyProjection",
            Error::DegenerateGeometry(_) => "DegenerateGeometry",
            Error::NoFreeRegion(_) => "NoFreeRegion",
            Error::BadShape(_) => "BadShape",
            Error::ShapeMismatch { .. } => "ShapeMismatch",
            Error::MissingReference(_) => "MissingReference",
            Error::MissingTargetBoxes(_) => "MissingTargetBoxes",
            Error::UnknownObject(_) => "UnknownObject",
            Error::UnknownScene(_) => "UnknownScene",
            Error::UnknownBankEntry(_) => "UnknownBankEntry",
            Error::EmptyCategory(_) => "EmptyCategory",
            Error::NoDetection(_) => "NoDetection",
            Error::Config(_) => "ConfigError",
            Error::Validation { .. } => "ValidationError",
            Error::Checkpoint(_) => "CheckpointError",
            Error::Io(_) => "IoError",
            Error::Json(_) => "JsonError",
            Error::Png(_) => "PngError",
        }
    }

    pub fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
