//! Error type shared by every module of the crate.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("image of {height}x{width}x{channels} exceeds the raster budget of {budget} values")]
    ImageTooLarge {
        width: usize,
        height: usize,
        channels: usize,
        budget: usize,
    },

    #[error("image of {height}x{width} is smaller than the {window}x{window} SSIM window")]
    ImageTooSmall {
        width: usize,
        height: usize,
        window: usize,
    },

    #[error("feature dimension {0} is too small; at least 4 channels are required")]
    FeatureDimTooSmall(usize),

    #[error("raster auxiliary data does not match the gradient buffer: {0}")]
    StaleAux(String),

    #[error("modulation trace does not match the gradient buffer: {0}")]
    StaleTrace(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing field `{field}` in {context}")]
    MissingField { field: String, context: String },

    #[error("frame {frame}: missing image {}", path.display())]
    MissingImage { frame: usize, path: PathBuf },

    #[error("frame {frame}: transform is not a rigid motion ({reason})")]
    BadMatrix { frame: usize, reason: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("index {index} out of range (0..{len})")]
    Range { index: usize, len: usize },

    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
