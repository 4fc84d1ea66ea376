//! Learning an implicit skeleton (bones, joints, skinning weights, rigidity
//! coefficients and per-frame rigid transforms) for an articulated mesh from
//! its motion across frames.
//!
//! The pipeline runs in stages, each usable on its own:
//!
//! - [`contraction`]: Laplacian mesh contraction to a zero-volume shape and
//!   edge-collapse surgery down to a 1D skeleton graph.
//! - [`skeleton`]: Gaussian-ellipsoid bones and joints built from that graph.
//! - [`skinning`]: Mahalanobis soft-max skinning weights, entropy-based
//!   rigidity coefficients, one-hot part selection.
//! - [`kinematics`]: rigid transforms, forward/backward linear blend skinning,
//!   per-bone pose fitting.
//! - [`rendering`]: pinhole camera, z-buffer silhouettes, ray-cast
//!   visibility, dense flow rasters.
//! - [`flowwarp`]: optical flow to per-bone 2D motion directions.
//! - [`refine`]: joint localization, bone-length tracking, merge/split rules
//!   and the alternating shape/skeleton optimization loop.
//! - [`losses`]: silhouette, colour, flow, shape and rigidity-weighted edge
//!   losses.
//! - [`synth`]: capsule-chain generator with full ground truth.
//! - [`eval`] and [`cli`]: metrics and the `skelkit` command line.

pub mod cli;
pub mod contraction;
pub mod error;
pub mod eval;
pub mod flowwarp;
pub mod geometry;
pub mod io;
pub mod kinematics;
pub mod losses;
pub mod refine;
pub mod rendering;
pub mod skeleton;
pub mod skinning;
pub mod synth;

pub use error::{Error, Result};

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Vec2 = nalgebra::Vector2<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;
pub type Mat4 = nalgebra::Matrix4<f64>;
