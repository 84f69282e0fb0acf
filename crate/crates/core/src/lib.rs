//! Closed-form kinematic-tree refinement of 3D human pose, shape and camera
//! translation from 2D keypoints.

// Negated comparisons are used on purpose so NaN fails every check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod camera;
pub mod cli;
pub mod depth_solver;
pub mod error;
pub mod hypothesis;
pub mod refiner;
pub mod rotation;
pub mod shape_opt;
pub mod skeleton;

pub use error::{KitroError, Result};
pub use refiner::{refine, refine_batch, RefineConfig, Refined, RefinementTrace};
pub use skeleton::{BodyState, SkeletonModel};
