use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::scalar::Real;
use crate::tactile::SensorPose;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChartKind {
    Vision,
    Touch,
}

/// One planar triangulated surface element.
#[derive(Debug, Clone, PartialEq)]
pub struct Chart<T> {
    pub kind: ChartKind,
    pub vertices: Vec<Vec3<T>>,
    pub faces: Vec<[usize; 3]>,
    /// Vertices incident to an edge used by exactly one face.
    pub boundary: Vec<usize>,
    /// Designated reference vertex (touch charts only); never a boundary
    /// vertex.
    pub center_ref: Option<usize>,
    /// Whether the touch that produced this chart made contact. Vision
    /// charts are always `false`.
    pub success: bool,
}

pub const VISION_CHART_VERTICES: usize = 19;
pub const VISION_CHART_FACES: usize = 24;
pub const TOUCH_CHART_SIDE: usize = 9;
pub const TOUCH_CHART_VERTICES: usize = TOUCH_CHART_SIDE * TOUCH_CHART_SIDE;
pub const TOUCH_CHART_FACES: usize = (TOUCH_CHART_SIDE - 1) * (TOUCH_CHART_SIDE - 1) * 2;

impl<T: Real> Chart<T> {
    pub fn new(
        kind: ChartKind,
        vertices: Vec<Vec3<T>>,
        faces: Vec<[usize; 3]>,
        center_ref: Option<usize>,
        success: bool,
    ) -> Result<Self> {
        for (fi, f) in faces.iter().enumerate() {
            for &v in f {
                if v >= vertices.len() {
                    return Err(Error::FaceIndexOutOfRange {
                        face: fi,
                        index: v,
                        len: vertices.len(),
                    });
                }
            }
        }
        let boundary = boundary_vertices(vertices.len(), &faces);
        if let Some(cr) = center_ref {
            if cr >= vertices.len() {
                return Err(Error::invalid(format!("center_ref {cr} out of range")));
            }
            if boundary.contains(&cr) {
                return Err(Error::invalid("center_ref must not be a boundary vertex"));
            }
        }
        Ok(Chart { kind, vertices, faces, boundary, center_ref, success })
    }

    /// Undirected mesh edges, each as `(lo, hi)` local indices.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut edges: Vec<(usize, usize)> = self
            .faces
            .iter()
            .flat_map(|f| {
                (0..3).map(move |i| {
                    let (a, b) = (f[i], f[(i + 1) % 3]);
                    (a.min(b), a.max(b))
                })
            })
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges
    }
}

fn boundary_vertices(n_vertices: usize, faces: &[[usize; 3]]) -> Vec<usize> {
    use std::collections::HashMap;
    let mut edge_use: HashMap<(usize, usize), usize> = HashMap::new();
    for f in faces {
        for i in 0..3 {
            let (a, b) = (f[i], f[(i + 1) % 3]);
            *edge_use.entry((a.min(b), a.max(b))).or_insert(0) += 1;
        }
    }
    let mut on_boundary = vec![false; n_vertices];
    for ((a, b), uses) in edge_use {
        if uses == 1 {
            on_boundary[a] = true;
            on_boundary[b] = true;
        }
    }
    (0..n_vertices).filter(|&v| on_boundary[v]).collect()
}

/// Planar hexagonal vision chart: one center, 6 inner-ring and 12 outer-ring
/// vertices with unit circumradius in the local xy plane.
pub fn make_vision_chart<T: Real>() -> Chart<T> {
    let mut vertices = Vec::with_capacity(VISION_CHART_VERTICES);
    vertices.push(Vec3::zero());
    let half = T::c(0.5);
    for k in 0..6 {
        let ang = T::c(std::f64::consts::PI / 3.0) * T::of_usize(k);
        vertices.push(Vec3::new(half * ang.cos(), half * ang.sin(), T::zero()));
    }
    for k in 0..12 {
        let ang = T::c(std::f64::consts::PI / 6.0) * T::of_usize(k);
        vertices.push(Vec3::new(ang.cos(), ang.sin(), T::zero()));
    }
    let r1 = |k: usize| 1 + (k % 6);
    let r2 = |k: usize| 7 + (k % 12);
    let mut faces = Vec::with_capacity(VISION_CHART_FACES);
    for k in 0..6 {
        faces.push([0, r1(k), r1(k + 1)]);
    }
    // Outer ring: ring-2 vertex 2k sits on the ray through ring-1 vertex k.
    for k in 0..6 {
        faces.push([r1(k), r2(2 * k), r2(2 * k + 1)]);
        faces.push([r1(k), r2(2 * k + 1), r2(2 * k + 2)]);
        faces.push([r1(k), r2(2 * k + 2), r1(k + 1)]);
    }
    Chart::new(ChartKind::Vision, vertices, faces, None, false)
        .expect("hex patch construction is valid")
}

fn touch_grid_faces() -> Vec<[usize; 3]> {
    let n = TOUCH_CHART_SIDE;
    let idx = |i: usize, j: usize| i * n + j;
    let mut faces = Vec::with_capacity(TOUCH_CHART_FACES);
    for i in 0..n - 1 {
        for j in 0..n - 1 {
            faces.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
            faces.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
        }
    }
    faces
}

/// 9x9 planar grid chart with the same position, orientation and size as
/// the sensor. `center_ref` is the grid's central vertex.
pub fn make_touch_chart<T: Real>(pose: &SensorPose<T>) -> Chart<T> {
    let n = TOUCH_CHART_SIDE;
    let mut vertices = Vec::with_capacity(TOUCH_CHART_VERTICES);
    for i in 0..n {
        for j in 0..n {
            let fu = T::of_usize(i) / T::of_usize(n - 1) - T::c(0.5);
            let fv = T::of_usize(j) / T::of_usize(n - 1) - T::c(0.5);
            vertices.push(
                pose.center
                    + pose.tangent_u * (fu * pose.width)
                    + pose.tangent_v * (fv * pose.width),
            );
        }
    }
    let center = (n / 2) * n + n / 2;
    Chart::new(ChartKind::Touch, vertices, touch_grid_faces(), Some(center), true)
        .expect("touch grid construction is valid")
}

/// Chart for a failed touch: every vertex at the fingertip position. Keeps
/// the grid topology so it still participates in message passing.
pub fn init_unsuccessful_touch_chart<T: Real>(pose: &SensorPose<T>) -> Chart<T> {
    let n = TOUCH_CHART_SIDE;
    let vertices = vec![pose.center; TOUCH_CHART_VERTICES];
    let center = (n / 2) * n + n / 2;
    Chart::new(ChartKind::Touch, vertices, touch_grid_faces(), Some(center), false)
        .expect("touch grid construction is valid")
}
