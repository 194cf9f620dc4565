use thiserror::Error;

/// Errors surfaced by the geometry, simulation and training layers.
#[derive(Error, Debug)]
pub enum Error {
    #[error("empty mesh")]
    EmptyMesh,
    #[error("empty cloud")]
    EmptyCloud,
    #[error("face {face} references vertex {index} but mesh has {len} vertices")]
    FaceIndexOutOfRange { face: usize, index: usize, len: usize },
    #[error("face {face} is degenerate (area {area} <= {min_area})")]
    DegenerateFace { face: usize, area: f64, min_area: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("pairing tolerance too large")]
    PairingToleranceTooLarge,
    #[error("fitted chart count {got} does not match successful touch chart count {expected}")]
    EnforceLengthMismatch { got: usize, expected: usize },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("parse error in {path}: {msg}")]
    Parse { path: String, msg: String },
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { context: context.into(), source }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
