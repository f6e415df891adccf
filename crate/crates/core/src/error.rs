use crate::stereo::Frame;
use thiserror::Error;

/// Errors produced by the sensing pipeline and simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("rotation matrix is not orthonormal (max deviation {0:.3e})")]
    NotOrthonormal(f64),

    #[error("rotation matrix determinant is {0}, expected +1")]
    NotProperRotation(f64),

    #[error("vector norm {0} is not unit length")]
    NotUnit(f64),

    #[error("cannot normalize near-zero vector (norm {0:.3e})")]
    ZeroVector(f64),

    #[error("normal z component {0} is not positive; tilt angles are undefined")]
    NonUpwardNormal(f64),

    #[error("tilt angle {0}° is outside the open interval (-90°, 90°)")]
    TiltOutOfRange(f64),

    #[error("point depth {0} mm is not positive; point is behind the camera")]
    NonPositiveDepth(f64),

    #[error("disparity {0} px is not positive; point is at or beyond infinity")]
    NonPositiveDisparity(f64),

    #[error("degenerate fiducial configuration: {0}")]
    DegenerateFiducials(&'static str),

    #[error("no pose sign places all fiducials in front of the camera")]
    FiducialsBehindCamera,

    #[error("point cloud is in frame {actual:?}, expected {expected:?}")]
    FrameMismatch { expected: Frame, actual: Frame },

    #[error("plane fit needs at least 3 points, got {0}")]
    InsufficientPoints(usize),

    #[error("degenerate point configuration for plane fit: {0}")]
    DegenerateCloud(&'static str),

    #[error("calibration sweep produced no usable samples")]
    EmptySweep,

    #[error("degenerate sweep: tilt angles have zero variance")]
    DegenerateSweep,

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParam { name: &'static str, reason: String },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed PGM image: {0}")]
    PgmFormat(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParam {
            name,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
