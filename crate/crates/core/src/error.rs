use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown joint set `{0}`")]
    UnknownJointSet(String),

    #[error("invalid joint set `{name}`: {reason}")]
    InvalidJointSet { name: String, reason: String },

    #[error("joint set mismatch: expected `{expected}`, found `{found}`")]
    JointSetMismatch { expected: String, found: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("missing branch `{0}`")]
    MissingBranch(String),

    #[error("branch `{0}` does not provide head joints")]
    NoHeadJoints(String),

    #[error("frame index {frame} is not after the previous frame {previous}")]
    NonMonotoneFrame { frame: u64, previous: u64 },

    #[error("missing dataset for domain `{0}`")]
    MissingDataset(String),

    #[error("malformed heatmap data: {0}")]
    MalformedHeatmap(String),

    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),

    #[error("{path}: {message}")]
    File { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag for error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::UnknownJointSet(_) => "unknown_joint_set",
            Error::InvalidJointSet { .. } => "invalid_joint_set",
            Error::JointSetMismatch { .. } => "joint_set_mismatch",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::InvalidValue(_) => "invalid_value",
            Error::MissingBranch(_) => "missing_branch",
            Error::NoHeadJoints(_) => "no_head_joints",
            Error::NonMonotoneFrame { .. } => "non_monotone_frame",
            Error::MissingDataset(_) => "missing_dataset",
            Error::MalformedHeatmap(_) => "malformed_heatmap",
            Error::MalformedCheckpoint(_) => "malformed_checkpoint",
            Error::File { .. } => "file",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }

    /// Attaches a file (and optional location) to an error.
    pub fn in_file(self, path: impl Into<String>) -> Error {
        match self {
            Error::File { .. } => self,
            other => Error::File {
                path: path.into(),
                message: other.to_string(),
            },
        }
    }
}
