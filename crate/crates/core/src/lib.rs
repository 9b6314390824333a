//! Synthetic multi-modal face annotation pipeline.
//!
//! The crate builds parametric head meshes, samples pinhole cameras around
//! them, rasterizes per-pixel class/depth/landmark annotations, renders
//! expected-ray-length depth from density fields, and aligns the mesh to a
//! density field with an affine transform. The multi-task loss formulas used
//! to train on the resulting data live in [`losses`].
//!
//! Module map:
//!
//! - [`camera`]: normalized pinhole intrinsics, look-at extrinsics, rays
//! - [`headmodel`]: blendshape head assets, landmarks, mesh-to-density
//! - [`raster`]: z-buffered class/depth rasterization
//! - [`volume`]: density fields, ray marching, level sets
//! - [`align`]: chamfer/depth losses and the affine alignment optimizer
//! - [`losses`]: per-task losses, weighted task sum, warp-equivariance loss
//! - [`dataset`]: deterministic sample and dataset generation
//! - [`selfcheck`]: invariant suites runnable from the command line

pub mod align;
pub mod camera;
pub mod dataset;
pub mod error;
pub mod geometry;
pub mod headmodel;
pub mod imageio;
pub mod json;
pub mod losses;
pub mod raster;
pub mod selfcheck;
pub mod spatial;
pub mod volume;

pub use error::{Error, Result};

/// Double-precision 3-vector used for all geometry.
pub type Vec3 = nalgebra::Vector3<f64>;
/// Double-precision 3×3 matrix.
pub type Mat3 = nalgebra::Matrix3<f64>;
