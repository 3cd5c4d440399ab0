//! Differentiable point-cloud projection and multi-view fitting.
//!
//! A point cloud is smoothed into Gaussian densities, discretized on a
//! camera-aligned grid, converted into ray termination probabilities, and
//! projected to a silhouette, depth map or color image. Every stage has a
//! hand-written adjoint, so shapes and camera poses can be recovered from
//! views by gradient descent.

// `!(x > 0.0)` is used on purpose so NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cloud;
pub mod diff;
pub mod error;
pub mod fit;
pub mod geom;
pub mod io;
pub mod metrics;
pub mod render;
pub mod splat;

pub use cloud::PointCloud;
pub use error::{Error, Result};
pub use geom::{CameraModel, GridSpec, Pose, Quaternion, SizeParams, Vec3};
pub use render::{render, Modality, Projection, RenderOptions, SplatPath};
