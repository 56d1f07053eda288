//! Combinatorial brick-construction engine: 2x4-brick geometry, graph-structured
//! assembly state, action-validity oracles, voxel/IoU rewards, an episodic
//! environment, a small reverse-mode tensor library with graph-network policy
//! models, PPO training, non-learned planners, and canonical enumeration of
//! distinct buildings.

pub mod assembly;
pub mod enumeration;
pub mod env;
pub mod error;
pub mod geometry;
pub mod masks;
pub mod models;
pub mod nn;
pub mod planners;
pub mod reward;
pub mod targets;
pub mod training;
pub mod voxel;

pub use error::{Error, Result};
