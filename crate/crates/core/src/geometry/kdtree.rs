//! Exact nearest-neighbor search over 3D points.
//!
//! A balanced kd-tree built once over a point set. Queries return the true
//! nearest neighbor; equal distances resolve to the lowest point index so
//! results never depend on traversal order.

use crate::error::Result;
use crate::geometry::{PointCloud, Vec3};
use crate::scalar::Real;

#[derive(Debug, Clone)]
struct Node {
    /// Index into the permuted point array of this node's pivot.
    point: u32,
    axis: u8,
    left: i32,
    right: i32,
}

#[derive(Debug, Clone)]
pub struct KdTree<T> {
    points: Vec<Vec3<T>>,
    /// Original index of each permuted point.
    ids: Vec<u32>,
    nodes: Vec<Node>,
    root: i32,
}

impl<T: Real> KdTree<T> {
    pub fn build(points: &[Vec3<T>]) -> Self {
        let mut pts: Vec<(Vec3<T>, u32)> =
            points.iter().enumerate().map(|(i, &p)| (p, i as u32)).collect();
        let mut tree = KdTree {
            points: Vec::with_capacity(points.len()),
            ids: Vec::with_capacity(points.len()),
            nodes: Vec::with_capacity(points.len()),
            root: -1,
        };
        tree.root = tree.build_rec(&mut pts, 0);
        tree
    }

    fn build_rec(&mut self, pts: &mut [(Vec3<T>, u32)], depth: usize) -> i32 {
        if pts.is_empty() {
            return -1;
        }
        let axis = (depth % 3) as u8;
        let mid = pts.len() / 2;
        pts.select_nth_unstable_by(mid, |a, b| {
            a.0[axis as usize]
                .partial_cmp(&b.0[axis as usize])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.1.cmp(&b.1))
        });
        let (pivot, pivot_id) = pts[mid];
        let point = self.points.len() as u32;
        self.points.push(pivot);
        self.ids.push(pivot_id);
        let node_idx = self.nodes.len() as i32;
        self.nodes.push(Node { point, axis, left: -1, right: -1 });
        let (lo, rest) = pts.split_at_mut(mid);
        let hi = &mut rest[1..];
        let left = self.build_rec(lo, depth + 1);
        let right = self.build_rec(hi, depth + 1);
        self.nodes[node_idx as usize].left = left;
        self.nodes[node_idx as usize].right = right;
        node_idx
    }

    /// Exact nearest neighbor: `(original index, squared distance)`.
    /// Ties break toward the lowest original index.
    pub fn nearest(&self, query: Vec3<T>) -> (usize, T) {
        debug_assert!(!self.ids.is_empty(), "nearest on empty tree");
        let mut best = (u32::MAX, T::infinity());
        self.nearest_rec(self.root, query, &mut best);
        (best.0 as usize, best.1)
    }

    fn nearest_rec(&self, node: i32, query: Vec3<T>, best: &mut (u32, T)) {
        if node < 0 {
            return;
        }
        let n = &self.nodes[node as usize];
        let p = self.points[n.point as usize];
        let id = self.ids[n.point as usize];
        let d2 = query.dist_sq(p);
        if d2 < best.1 || (d2 == best.1 && id < best.0) {
            *best = (id, d2);
        }
        let delta = query[n.axis as usize] - p[n.axis as usize];
        let (near, far) = if delta < T::zero() { (n.left, n.right) } else { (n.right, n.left) };
        self.nearest_rec(near, query, best);
        // The far half-space can still contain an equal-distance point with a
        // lower index, so recurse on <= rather than <.
        if delta * delta <= best.1 {
            self.nearest_rec(far, query, best);
        }
    }
}

/// Exact nearest neighbor of `query` in `cloud`: `(index, squared distance)`.
/// Ties broken by lowest index. Errors on an empty cloud.
pub fn nearest<T: Real>(query: Vec3<T>, cloud: &PointCloud<T>) -> Result<(usize, T)> {
    cloud.require_non_empty()?;
    Ok(KdTree::build(&cloud.points).nearest(query))
}
