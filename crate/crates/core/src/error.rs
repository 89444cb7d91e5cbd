use std::path::PathBuf;

/// Errors produced by the library.
#[derive(thiserror::Error, Debug)]
pub enum Error {
    #[error("expected {expected} channels, found {found}")]
    ChannelMismatch { expected: usize, found: usize },
    #[error("pixel {index} is not a probability distribution: {reason}")]
    NotADistribution { index: usize, reason: String },
    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimensionMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("no keypoints found")]
    NoKeypoints,
    #[error("need at least {required} matches, got {found}")]
    InsufficientMatches { required: usize, found: usize },
    #[error("no RANSAC iteration produced a valid fundamental matrix")]
    DegenerateSample,
    #[error("pose candidates are ambiguous: best has {best} points in front, runner-up {runner_up}")]
    CheiralityAmbiguous { best: usize, runner_up: usize },
    #[error("no inlier triangulates to a valid depth")]
    NoValidTriangulation,
    #[error("point lands behind the target camera")]
    BehindCamera,

    #[error("confidence threshold {0} outside [1/C, 1]")]
    ThetaOutOfRange(f64),

    #[error("alignment mode needs a daytime depth map")]
    MissingDepth,
    #[error("alignment mode needs camera intrinsics")]
    MissingCameras,

    #[error("reference set is empty")]
    EmptyReferenceSet,
    #[error("{path}:{line}: {message}")]
    SchemaError {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("duplicate record id {0:?}")]
    DuplicateId(String),
    #[error("malformed {format} data: {message}")]
    Format {
        format: &'static str,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dims(left: (usize, usize), right: (usize, usize)) -> Self {
        Error::DimensionMismatch { left, right }
    }
}
