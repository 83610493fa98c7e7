//! Part-aware residual motion tokenizer.

pub mod commands;
pub mod container;
pub mod curation;
pub mod error;
pub mod features;
pub mod longmotion;
pub mod metrics;
pub mod parts;
pub mod pose;
pub mod prq;
pub mod rotation;
pub mod skeleton;
pub mod tokens;

pub use error::{Error, ErrorKind, Result};
pub use features::{MotionSequence, HUMO263_DIM, HUMO263_V1};
pub use parts::PartitionSpec;
pub use pose::PoseFrame;
pub use rotation::Rotation6D;
pub use skeleton::Skeleton;
