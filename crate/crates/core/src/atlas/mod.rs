//! Chart/atlas surface representation: the closed-sphere arrangement of
//! vision charts, touch charts anchored at sensor poses, and the three-tier
//! communication graph (within charts, between touching vision boundaries,
//! and between touch reference vertices and vision boundaries).

mod chart;
mod comm;
mod sphere;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{TriMesh, Vec3};
use crate::scalar::Real;

pub use chart::{
    init_unsuccessful_touch_chart, make_touch_chart, make_vision_chart, Chart, ChartKind,
    TOUCH_CHART_FACES, TOUCH_CHART_SIDE, TOUCH_CHART_VERTICES, VISION_CHART_FACES,
    VISION_CHART_VERTICES,
};
pub use comm::{build_comm_graph, default_pairing_tol, MAX_PAIR_PARTNERS};
pub use sphere::{build_sphere_atlas, fibonacci_directions};

/// Ordered collection of charts plus the communication edges over flattened
/// global vertex ids (chart vertices concatenated in chart order).
#[derive(Debug, Clone, PartialEq)]
pub struct Atlas<T> {
    pub charts: Vec<Chart<T>>,
    /// Undirected edges as `(lo, hi)` global ids, sorted and deduplicated.
    pub comm_edges: Vec<(u32, u32)>,
    offsets: Vec<usize>,
}

impl<T: Real> Atlas<T> {
    pub fn new(charts: Vec<Chart<T>>) -> Result<Self> {
        let mut offsets = Vec::with_capacity(charts.len() + 1);
        let mut acc = 0usize;
        for c in &charts {
            offsets.push(acc);
            acc += c.vertices.len();
        }
        offsets.push(acc);
        Ok(Atlas { charts, comm_edges: Vec::new(), offsets })
    }

    pub fn total_vertices(&self) -> usize {
        *self.offsets.last().unwrap_or(&0)
    }

    /// Global id of the first vertex of chart `ci`.
    pub fn chart_offset(&self, ci: usize) -> usize {
        self.offsets[ci]
    }

    pub fn chart_of_vertex(&self, global: usize) -> usize {
        match self.offsets.binary_search(&global) {
            Ok(i) => i.min(self.charts.len() - 1),
            Err(i) => i - 1,
        }
    }

    pub fn n_vision(&self) -> usize {
        self.charts.iter().filter(|c| c.kind == ChartKind::Vision).count()
    }

    pub fn n_touch(&self) -> usize {
        self.charts.iter().filter(|c| c.kind == ChartKind::Touch).count()
    }

    /// All vertex positions flattened in global-id order.
    pub fn flat_positions(&self) -> Vec<Vec3<T>> {
        self.charts.iter().flat_map(|c| c.vertices.iter().copied()).collect()
    }

    /// Replaces every vertex position from a flat global array, keeping
    /// structure and edges.
    pub fn with_positions(&self, positions: &[Vec3<T>]) -> Result<Self> {
        if positions.len() != self.total_vertices() {
            return Err(Error::shape(format!(
                "expected {} positions, got {}",
                self.total_vertices(),
                positions.len()
            )));
        }
        let mut out = self.clone();
        for (ci, chart) in out.charts.iter_mut().enumerate() {
            let base = self.offsets[ci];
            for (li, v) in chart.vertices.iter_mut().enumerate() {
                *v = positions[base + li];
            }
        }
        Ok(out)
    }

    /// Global ids of vertices in successful touch charts.
    pub fn enforced_vertex_ids(&self) -> Vec<usize> {
        let mut ids = Vec::new();
        for (ci, chart) in self.charts.iter().enumerate() {
            if chart.kind == ChartKind::Touch && chart.success {
                let base = self.offsets[ci];
                ids.extend(base..base + chart.vertices.len());
            }
        }
        ids
    }
}

/// Overwrites the vertex positions of successful touch charts with the
/// fitted charts, in order. Unsuccessful touch charts are left as deformed.
pub fn enforce_touch_positions<T: Real>(
    atlas: &Atlas<T>,
    fitted: &[Chart<T>],
) -> Result<Atlas<T>> {
    let expected =
        atlas.charts.iter().filter(|c| c.kind == ChartKind::Touch && c.success).count();
    if fitted.len() != expected {
        return Err(Error::EnforceLengthMismatch { got: fitted.len(), expected });
    }
    let mut out = atlas.clone();
    let mut it = fitted.iter();
    for chart in &mut out.charts {
        if chart.kind == ChartKind::Touch && chart.success {
            let f = it.next().expect("length checked above");
            if f.vertices.len() != chart.vertices.len() {
                return Err(Error::shape(format!(
                    "fitted chart has {} vertices, expected {}",
                    f.vertices.len(),
                    chart.vertices.len()
                )));
            }
            chart.vertices.clone_from(&f.vertices);
        }
    }
    Ok(out)
}

/// Concatenates every chart into one mesh with index offsets, welding
/// nothing. Collapsed charts from unsuccessful touches are kept, so the
/// output intentionally skips degeneracy validation.
pub fn atlas_to_mesh<T: Real>(atlas: &Atlas<T>) -> TriMesh<T> {
    let mut vertices = Vec::with_capacity(atlas.total_vertices());
    let mut faces = Vec::new();
    for chart in &atlas.charts {
        let base = vertices.len();
        vertices.extend(chart.vertices.iter().copied());
        faces.extend(chart.faces.iter().map(|f| [f[0] + base, f[1] + base, f[2] + base]));
    }
    TriMesh::from_raw(vertices, faces)
}

#[derive(Serialize, Deserialize)]
struct ChartMeta {
    kind: ChartKind,
    success: bool,
    center_ref: Option<usize>,
    vertex_count: usize,
    faces: Vec<[usize; 3]>,
}

#[derive(Serialize, Deserialize)]
struct AtlasManifest {
    charts: Vec<ChartMeta>,
    comm_edges: Vec<(u32, u32)>,
    vertex_file: String,
}

/// Saves `<stem>.json` (chart metadata + comm edges) and
/// `<stem>.vertices.bin` (flat little-endian f64 xyz per global vertex).
pub fn save_atlas<T: Real>(atlas: &Atlas<T>, stem: impl AsRef<Path>) -> Result<()> {
    let stem = stem.as_ref();
    let json_path = stem.with_extension("json");
    let bin_name = format!(
        "{}.vertices.bin",
        stem.file_stem().and_then(|s| s.to_str()).unwrap_or("atlas")
    );
    let bin_path = stem.with_file_name(&bin_name);
    let manifest = AtlasManifest {
        charts: atlas
            .charts
            .iter()
            .map(|c| ChartMeta {
                kind: c.kind,
                success: c.success,
                center_ref: c.center_ref,
                vertex_count: c.vertices.len(),
                faces: c.faces.clone(),
            })
            .collect(),
        comm_edges: atlas.comm_edges.clone(),
        vertex_file: bin_name,
    };
    std::fs::write(&json_path, serde_json::to_vec_pretty(&manifest)?)
        .map_err(|e| Error::io(format!("write {}", json_path.display()), e))?;
    let mut bytes = Vec::with_capacity(atlas.total_vertices() * 24);
    for chart in &atlas.charts {
        for v in &chart.vertices {
            for c in v.to_f64() {
                bytes.extend_from_slice(&c.to_le_bytes());
            }
        }
    }
    std::fs::write(&bin_path, bytes)
        .map_err(|e| Error::io(format!("write {}", bin_path.display()), e))
}

pub fn load_atlas<T: Real>(stem: impl AsRef<Path>) -> Result<Atlas<T>> {
    let stem = stem.as_ref();
    let json_path = stem.with_extension("json");
    let manifest: AtlasManifest = serde_json::from_slice(
        &std::fs::read(&json_path)
            .map_err(|e| Error::io(format!("read {}", json_path.display()), e))?,
    )?;
    let bin_path = stem.with_file_name(&manifest.vertex_file);
    let bytes = std::fs::read(&bin_path)
        .map_err(|e| Error::io(format!("read {}", bin_path.display()), e))?;
    let total: usize = manifest.charts.iter().map(|c| c.vertex_count).sum();
    if bytes.len() != total * 24 {
        return Err(Error::Parse {
            path: bin_path.display().to_string(),
            msg: format!("expected {} bytes of vertex data, got {}", total * 24, bytes.len()),
        });
    }
    let mut coords = bytes
        .chunks_exact(8)
        .map(|c| T::c(f64::from_le_bytes(c.try_into().unwrap())));
    let mut charts = Vec::with_capacity(manifest.charts.len());
    for meta in manifest.charts {
        let mut vertices = Vec::with_capacity(meta.vertex_count);
        for _ in 0..meta.vertex_count {
            let x = coords.next().unwrap();
            let y = coords.next().unwrap();
            let z = coords.next().unwrap();
            vertices.push(Vec3::new(x, y, z));
        }
        charts.push(Chart::new(meta.kind, vertices, meta.faces, meta.center_ref, meta.success)?);
    }
    let mut atlas = Atlas::new(charts)?;
    atlas.comm_edges = manifest.comm_edges;
    Ok(atlas)
}
