use crate::atlas::Atlas;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Compressed sparse adjacency over global vertex ids, with a per-vertex
/// degree cache. Always symmetric: both directions of every undirected edge
/// are stored.
#[derive(Debug, Clone, PartialEq)]
pub struct CommGraphCsr {
    row_offsets: Vec<usize>,
    cols: Vec<u32>,
}

impl CommGraphCsr {
    /// Builds from undirected edges; self loops are rejected.
    pub fn from_edges(n_vertices: usize, edges: &[(u32, u32)]) -> Result<Self> {
        let mut pairs = Vec::with_capacity(edges.len() * 2);
        for &(a, b) in edges {
            if a == b {
                return Err(Error::invalid(format!("self loop at vertex {a}")));
            }
            if a as usize >= n_vertices || b as usize >= n_vertices {
                return Err(Error::invalid(format!(
                    "edge ({a},{b}) out of range for {n_vertices} vertices"
                )));
            }
            pairs.push((a, b));
            pairs.push((b, a));
        }
        pairs.sort_unstable();
        pairs.dedup();
        let mut row_offsets = vec![0usize; n_vertices + 1];
        for &(a, _) in &pairs {
            row_offsets[a as usize + 1] += 1;
        }
        for i in 0..n_vertices {
            row_offsets[i + 1] += row_offsets[i];
        }
        let cols = pairs.into_iter().map(|(_, b)| b).collect();
        Ok(CommGraphCsr { row_offsets, cols })
    }

    pub fn from_atlas<T: Real>(atlas: &Atlas<T>) -> Result<Self> {
        Self::from_edges(atlas.total_vertices(), &atlas.comm_edges)
    }

    pub fn n_vertices(&self) -> usize {
        self.row_offsets.len() - 1
    }

    pub fn neighbors(&self, u: usize) -> &[u32] {
        &self.cols[self.row_offsets[u]..self.row_offsets[u + 1]]
    }

    /// Neighbor count, self excluded.
    pub fn degree(&self, u: usize) -> usize {
        self.row_offsets[u + 1] - self.row_offsets[u]
    }
}
