use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {}", .0.display())]
    FileNotFound(PathBuf),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to decode image: {0}")]
    Decode(String),

    #[error("failed to encode image: {0}")]
    Encode(String),

    #[error("unsupported pixel format: {0}")]
    UnsupportedFormat(String),

    #[error("dimension mismatch: expected {expected_w}x{expected_h}, got {actual_w}x{actual_h}")]
    DimensionMismatch {
        expected_w: u32,
        expected_h: u32,
        actual_w: u32,
        actual_h: u32,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("manifest parse error: {0}")]
    ManifestParse(String),

    #[error("manifest entry `{id}`: {reason}")]
    ManifestEntry { id: String, reason: String },

    #[error("point ({x}, {y}) is outside the {width}x{height} image")]
    OutOfBounds { x: u32, y: u32, width: u32, height: u32 },

    #[error("non-binary pixel {value:?} at ({x}, {y})")]
    NonBinaryPixel { x: u32, y: u32, value: [u8; 3] },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("missing prediction for id `{0}`")]
    MissingPrediction(String),

    #[error(transparent)]
    Gcode(#[from] crate::gcode::GcodeError),

    #[error(transparent)]
    External(#[from] crate::segmentation::ExternalError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::FileNotFound(path)
        } else {
            Error::Io { path, source }
        }
    }
}
