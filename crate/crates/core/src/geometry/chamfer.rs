//! Chamfer distance between point clouds, in the resolution-independent mean
//! form: each directional term is the mean over its cloud of the squared
//! distance to the nearest point of the other cloud.

use crate::error::Result;
use crate::geometry::{KdTree, PointCloud, Vec3};
use crate::scalar::Real;

/// `mean_{p in a} min_{q in b} |p-q|^2 + mean_{q in b} min_{p in a} |q-p|^2`.
pub fn chamfer<T: Real>(a: &PointCloud<T>, b: &PointCloud<T>) -> Result<T> {
    a.require_non_empty()?;
    b.require_non_empty()?;
    let tree_a = KdTree::build(&a.points);
    let tree_b = KdTree::build(&b.points);
    Ok(directional_mean(&a.points, &tree_b) + directional_mean(&b.points, &tree_a))
}

fn directional_mean<T: Real>(from: &[Vec3<T>], to: &KdTree<T>) -> T {
    let mut acc = T::zero();
    for &p in from {
        acc += to.nearest(p).1;
    }
    acc / T::of_usize(from.len())
}

/// Gradient of [`chamfer`] with respect to each point of `a`, holding the
/// nearest-neighbor assignments fixed (the standard subgradient at ties).
pub fn chamfer_grad<T: Real>(a: &PointCloud<T>, b: &PointCloud<T>) -> Result<Vec<Vec3<T>>> {
    a.require_non_empty()?;
    b.require_non_empty()?;
    let tree_a = KdTree::build(&a.points);
    let tree_b = KdTree::build(&b.points);
    let na = T::of_usize(a.len());
    let nb = T::of_usize(b.len());
    let mut grad = vec![Vec3::zero(); a.len()];
    // d/da_i of mean_a |a_i - b_nn(i)|^2
    let two = T::c(2.0);
    for (i, &p) in a.points.iter().enumerate() {
        let (j, _) = tree_b.nearest(p);
        grad[i] += (p - b.points[j]) * (two / na);
    }
    // d/da_i of mean_b |b_j - a_nn(j)|^2 scatters into the assigned a points.
    for &q in &b.points {
        let (i, _) = tree_a.nearest(q);
        grad[i] += (a.points[i] - q) * (two / nb);
    }
    Ok(grad)
}
