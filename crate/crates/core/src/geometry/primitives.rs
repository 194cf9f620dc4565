//! Procedural test and dataset shapes.

use std::collections::HashMap;

use crate::geometry::{TriMesh, Vec3};
use crate::scalar::Real;

const ICO_VERTS: [[f64; 3]; 12] = [
    [-1.0, PHI, 0.0],
    [1.0, PHI, 0.0],
    [-1.0, -PHI, 0.0],
    [1.0, -PHI, 0.0],
    [0.0, -1.0, PHI],
    [0.0, 1.0, PHI],
    [0.0, -1.0, -PHI],
    [0.0, 1.0, -PHI],
    [PHI, 0.0, -1.0],
    [PHI, 0.0, 1.0],
    [-PHI, 0.0, -1.0],
    [-PHI, 0.0, 1.0],
];
const PHI: f64 = 1.618033988749895;

const ICO_FACES: [[usize; 3]; 20] = [
    [0, 11, 5],
    [0, 5, 1],
    [0, 1, 7],
    [0, 7, 10],
    [0, 10, 11],
    [1, 5, 9],
    [5, 11, 4],
    [11, 10, 2],
    [10, 7, 6],
    [7, 1, 8],
    [3, 9, 4],
    [3, 4, 2],
    [3, 2, 6],
    [3, 6, 8],
    [3, 8, 9],
    [4, 9, 5],
    [2, 4, 11],
    [6, 2, 10],
    [8, 6, 7],
    [9, 8, 1],
];

/// Subdivided icosahedron projected onto a sphere of `radius` at the origin.
/// Level 0 is the raw icosahedron (20 faces); each level quadruples faces.
pub fn icosphere<T: Real>(radius: T, subdivisions: u32) -> TriMesh<T> {
    let mut vertices: Vec<Vec3<T>> = ICO_VERTS
        .iter()
        .map(|v| {
            Vec3::new(T::c(v[0]), T::c(v[1]), T::c(v[2]))
                .normalized()
                .unwrap()
        })
        .collect();
    let mut faces: Vec<[usize; 3]> = ICO_FACES.to_vec();
    let mut midpoint_cache: HashMap<(usize, usize), usize> = HashMap::new();
    for _ in 0..subdivisions {
        midpoint_cache.clear();
        let mut next = Vec::with_capacity(faces.len() * 4);
        for f in &faces {
            let mut mid = [0usize; 3];
            for i in 0..3 {
                let (a, b) = (f[i], f[(i + 1) % 3]);
                let key = (a.min(b), a.max(b));
                mid[i] = *midpoint_cache.entry(key).or_insert_with(|| {
                    let m = ((vertices[a] + vertices[b]) * T::c(0.5)).normalized().unwrap();
                    vertices.push(m);
                    vertices.len() - 1
                });
            }
            next.push([f[0], mid[0], mid[2]]);
            next.push([f[1], mid[1], mid[0]]);
            next.push([f[2], mid[2], mid[1]]);
            next.push([mid[0], mid[1], mid[2]]);
        }
        faces = next;
    }
    for v in &mut vertices {
        *v = *v * radius;
    }
    TriMesh::new(vertices, faces).expect("icosphere is non-degenerate")
}

/// Axis-aligned box centered at the origin with half-extents `hx, hy, hz`,
/// faces wound outward.
pub fn cuboid<T: Real>(hx: T, hy: T, hz: T) -> TriMesh<T> {
    let v = |sx: f64, sy: f64, sz: f64| {
        Vec3::new(hx * T::c(sx), hy * T::c(sy), hz * T::c(sz))
    };
    let vertices = vec![
        v(-1.0, -1.0, -1.0),
        v(1.0, -1.0, -1.0),
        v(1.0, 1.0, -1.0),
        v(-1.0, 1.0, -1.0),
        v(-1.0, -1.0, 1.0),
        v(1.0, -1.0, 1.0),
        v(1.0, 1.0, 1.0),
        v(-1.0, 1.0, 1.0),
    ];
    let faces = vec![
        [0, 2, 1],
        [0, 3, 2], // -z
        [4, 5, 6],
        [4, 6, 7], // +z
        [0, 1, 5],
        [0, 5, 4], // -y
        [2, 3, 7],
        [2, 7, 6], // +y
        [1, 2, 6],
        [1, 6, 5], // +x
        [3, 0, 4],
        [3, 4, 7], // -x
    ];
    TriMesh::new(vertices, faces).expect("cuboid is non-degenerate")
}

/// Closed cylinder along z, radius `r`, total height `h`.
pub fn cylinder<T: Real>(r: T, h: T, segments: usize) -> TriMesh<T> {
    assert!(segments >= 3);
    let half = h * T::c(0.5);
    let mut vertices = Vec::with_capacity(segments * 2 + 2);
    for ring in [-T::one(), T::one()] {
        let z = half * ring;
        for s in 0..segments {
            let ang = T::c(2.0 * std::f64::consts::PI) * T::of_usize(s) / T::of_usize(segments);
            vertices.push(Vec3::new(r * ang.cos(), r * ang.sin(), z));
        }
    }
    let bottom_center = vertices.len();
    vertices.push(Vec3::new(T::zero(), T::zero(), -half));
    let top_center = vertices.len();
    vertices.push(Vec3::new(T::zero(), T::zero(), half));
    let mut faces = Vec::with_capacity(segments * 4);
    for s in 0..segments {
        let s1 = (s + 1) % segments;
        let (b0, b1) = (s, s1);
        let (t0, t1) = (segments + s, segments + s1);
        faces.push([b0, b1, t1]);
        faces.push([b0, t1, t0]);
        faces.push([bottom_center, b1, b0]);
        faces.push([top_center, t0, t1]);
    }
    TriMesh::new(vertices, faces).expect("cylinder is non-degenerate")
}

/// Square pyramid: base `a x b` at z = 0 (centered), apex at height `h`.
pub fn pyramid<T: Real>(a: T, b: T, h: T) -> TriMesh<T> {
    let ha = a * T::c(0.5);
    let hb = b * T::c(0.5);
    let vertices = vec![
        Vec3::new(-ha, -hb, T::zero()),
        Vec3::new(ha, -hb, T::zero()),
        Vec3::new(ha, hb, T::zero()),
        Vec3::new(-ha, hb, T::zero()),
        Vec3::new(T::zero(), T::zero(), h),
    ];
    let faces = vec![
        [0, 2, 1],
        [0, 3, 2], // base, wound downward
        [0, 1, 4],
        [1, 2, 4],
        [2, 3, 4],
        [3, 0, 4],
    ];
    TriMesh::new(vertices, faces).expect("pyramid is non-degenerate")
}

/// Unit p-norm ball surface: an icosphere whose vertices are pushed onto
/// `|x|^p + |y|^p + |z|^p = 1`. `p = 2` is a sphere; large `p` approaches a
/// box with rounded edges.
pub fn pnorm_ball<T: Real>(p: T, subdivisions: u32) -> TriMesh<T> {
    let sphere = icosphere(T::one(), subdivisions);
    sphere.map_vertices(|v| {
        let np = (v.x.abs().powf(p) + v.y.abs().powf(p) + v.z.abs().powf(p)).powf(T::one() / p);
        v / np
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn icosphere_counts_and_radius() {
        let m = icosphere::<f64>(2.0, 3);
        assert_eq!(m.faces().len(), 20 * 4usize.pow(3));
        for v in m.vertices() {
            assert!((v.norm() - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn primitives_have_outward_normals() {
        // For star-shaped solids centered near the origin, winding normals
        // should point away from the centroid.
        for mesh in [
            icosphere::<f64>(1.0, 1),
            cuboid(0.5, 0.7, 0.9),
            cylinder(0.5, 1.2, 16),
            pnorm_ball(4.0, 2),
        ] {
            let c = mesh.centroid();
            for fi in 0..mesh.faces().len() {
                let n = mesh.face_normal(fi).unwrap();
                let [a, b, cc] = mesh.face_points(fi);
                let mid = (a + b + cc) / 3.0;
                assert!(n.dot(mid - c) > 0.0, "inward-facing face {fi}");
            }
        }
    }

    #[test]
    fn pyramid_is_closed_enough_for_area() {
        let m = pyramid::<f64>(1.0, 1.0, 0.8);
        assert!(m.total_area() > 1.0);
    }
}
