//! Mesh and point-cloud primitives: surface sampling, nearest-neighbor
//! search, Chamfer distance, ray casting and sphere tracing.
//!
//! Everything here is a pure function over immutable inputs and safe to call
//! concurrently. Batch work (e.g. Chamfer over many cloud pairs) can be
//! parallelized per pair; no floating-point reduction crosses pairs.

mod bvh;
mod chamfer;
mod cloud;
mod kdtree;
mod mesh;
pub mod primitives;
mod ray;
mod sample;
mod vec3;

pub use bvh::{sphere_trace, sphere_trace_bvh, MeshBvh};
pub use chamfer::{chamfer, chamfer_grad};
pub use cloud::PointCloud;
pub use kdtree::{nearest, KdTree};
pub use mesh::{TriMesh, MIN_FACE_AREA};
pub use ray::{
    closest_point_on_triangle, ray_triangle, raycast_exact, triangles_intersect, Ray,
};
pub use sample::{sample_surface, SurfaceSampler};
pub use vec3::Vec3;
