use crate::skeleton::JointId;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid quaternion: non-finite component")]
    InvalidQuaternion,

    #[error("zero-length vector")]
    ZeroVector,

    #[error("invalid topology: {0}")]
    Topology(String),

    #[error("incomplete kinematic state: {0}")]
    IncompleteState(String),

    #[error("cannot initialize from frame: joint {0} is lost or non-finite")]
    LostJoint(JointId),

    #[error("degenerate frame: segment ending at {0} has zero length")]
    DegenerateSegment(JointId),

    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("stream needs at least {needed} frames, got {got}")]
    TooFewFrames { needed: usize, got: usize },

    #[error("numerical failure{}: {detail}", context(*.pass, *.frame))]
    Numerical {
        pass: Option<usize>,
        frame: Option<usize>,
        detail: String,
    },

    #[error("timestamps outside source span: {0:?}")]
    OutOfRange(Vec<f64>),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("streams do not overlap in time")]
    NoOverlap,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid value: {0}")]
    Invalid(String),
}

fn context(pass: Option<usize>, frame: Option<usize>) -> String {
    match (pass, frame) {
        (Some(p), Some(f)) => format!(" in pass {p} at frame {f}"),
        (Some(p), None) => format!(" in pass {p}"),
        (None, Some(f)) => format!(" at frame {f}"),
        (None, None) => String::new(),
    }
}

impl Error {
    pub(crate) fn numerical(detail: impl Into<String>) -> Self {
        Error::Numerical {
            pass: None,
            frame: None,
            detail: detail.into(),
        }
    }

    /// Attaches pass/frame context to a numerical failure, leaving other
    /// errors untouched. Existing context is kept.
    pub fn at(self, pass: Option<usize>, frame: Option<usize>) -> Self {
        match self {
            Error::Numerical {
                pass: p,
                frame: f,
                detail,
            } => Error::Numerical {
                pass: p.or(pass),
                frame: f.or(frame),
                detail,
            },
            other => other,
        }
    }

    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical { .. })
    }
}
