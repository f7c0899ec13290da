use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid mask: {0}")]
    InvalidMask(String),
    #[error("calibration failed: {0}")]
    Calibration(String),
    #[error("insufficient calibration data: {rows} equations for {cols} unknowns")]
    InsufficientCalibration { rows: usize, cols: usize },
    #[error("invalid acceleration factor {0}")]
    InvalidAcceleration(usize),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("reference image is all zero")]
    DegenerateReference,
    #[error("training diverged at epoch {epoch}")]
    TrainingDiverged { epoch: usize },
    #[error("state error: {0}")]
    State(String),
    #[error("bad file format: {0}")]
    Format(String),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncation { expected: usize, found: usize },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u8),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("png encoding: {0}")]
    Png(String),
}
