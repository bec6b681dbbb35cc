//! Multi-domain top-down pose estimation and tracking.
//!
//! The crate covers joint-set handling across datasets, heatmap rendering and
//! decoding, multi-branch fusion, OKS-based suppression, Hungarian tracking,
//! PoseTrack-style evaluation, and a small multi-domain trainer on synthetic
//! data.

pub mod assignment;
pub mod config;
pub mod error;
pub mod fusion;
pub mod heatmap;
pub mod instance;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod skeleton;
pub mod suppression;
pub mod synth;
pub mod tracker;
pub mod train;

pub use config::{PipelineConfig, Stages};
pub use error::{Error, Result};
pub use heatmap::{DecodedPose, Geometry, Heatmap};
pub use instance::{BBox, Keypoint, PersonInstance};
pub use pipeline::{run_pipeline, PipelineOutput};
pub use skeleton::{builtin_joint_set, mapping, JointMapping, JointSet};
