//! Simulation of high-resolution gel touch sensors on triangle meshes and
//! chart-based surface reconstruction from fused vision and touch signals.
//!
//! The crate is split along the pipeline:
//!
//! - [`geometry`] — meshes, point clouds, Chamfer distance, ray casting and
//!   sphere tracing against triangle soups.
//! - [`tactile`] — the touch sensor simulator (orthographic depth, gel
//!   impression, three-light shading) and a minimal vision rasterizer.
//! - [`atlas`] — chart/atlas surface representation and the communication
//!   graph connecting vision and touch charts.
//! - [`nn`] — a small tape-based reverse-mode autodiff engine with the graph
//!   convolution, convolution and pooling layers the reconstruction needs.
//! - [`recon`] — touch-chart fitting, the depth predictor, the global chart
//!   deformation model and their training loops.
//!
//! All numeric code is generic over [`Real`]; the aliases below fix the
//! default `f64` instantiation used by the CLI and the file formats.

pub mod atlas;
pub mod error;
pub mod geometry;
pub mod io;
pub mod nn;
pub mod recon;
pub mod scalar;
pub mod tactile;

pub use error::{Error, Result};
pub use scalar::Real;

/// Default scalar precision for the shipped tools.
pub type Scalar = f64;
/// 3D vector/point at default precision.
pub type Vec3d = geometry::Vec3<Scalar>;
/// Triangle mesh at default precision.
pub type Mesh = geometry::TriMesh<Scalar>;
/// Point cloud at default precision.
pub type Cloud = geometry::PointCloud<Scalar>;
