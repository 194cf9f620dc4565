use crate::error::{Error, Result};
use crate::geometry::{TriMesh, Vec3};
use crate::scalar::Real;

/// Half-line with unit direction.
#[derive(Debug, Clone, Copy)]
pub struct Ray<T> {
    pub origin: Vec3<T>,
    pub direction: Vec3<T>,
}

impl<T: Real> Ray<T> {
    /// Normalizes `direction`; errors on a zero-length direction.
    pub fn new(origin: Vec3<T>, direction: Vec3<T>) -> Result<Self> {
        let direction = direction
            .normalized()
            .ok_or_else(|| Error::invalid("ray direction must be non-zero"))?;
        Ok(Ray { origin, direction })
    }

    pub fn at(&self, t: T) -> Vec3<T> {
        self.origin + self.direction * t
    }
}

/// Möller–Trumbore ray/triangle intersection (two-sided).
/// Returns the ray parameter `t > 0` of the hit, if any.
pub fn ray_triangle<T: Real>(ray: &Ray<T>, a: Vec3<T>, b: Vec3<T>, c: Vec3<T>) -> Option<T> {
    let e1 = b - a;
    let e2 = c - a;
    let pvec = ray.direction.cross(e2);
    let det = e1.dot(pvec);
    if det == T::zero() {
        return None;
    }
    let inv_det = T::one() / det;
    let tvec = ray.origin - a;
    let u = tvec.dot(pvec) * inv_det;
    if u < T::zero() || u > T::one() {
        return None;
    }
    let qvec = tvec.cross(e1);
    let v = ray.direction.dot(qvec) * inv_det;
    if v < T::zero() || u + v > T::one() {
        return None;
    }
    let t = e2.dot(qvec) * inv_det;
    if t > T::zero() {
        Some(t)
    } else {
        None
    }
}

/// Exact first-hit distance against every face of the mesh; `None` on a miss.
pub fn raycast_exact<T: Real>(ray: &Ray<T>, mesh: &TriMesh<T>) -> Option<T> {
    let mut best: Option<T> = None;
    for fi in 0..mesh.faces().len() {
        let [a, b, c] = mesh.face_points(fi);
        if let Some(t) = ray_triangle(ray, a, b, c) {
            if best.map_or(true, |bt| t < bt) {
                best = Some(t);
            }
        }
    }
    best
}

/// Closest point on triangle `abc` to `p` (Ericson, Real-Time Collision
/// Detection, 5.1.5).
pub fn closest_point_on_triangle<T: Real>(
    p: Vec3<T>,
    a: Vec3<T>,
    b: Vec3<T>,
    c: Vec3<T>,
) -> Vec3<T> {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(ap);
    let d2 = ac.dot(ap);
    if d1 <= T::zero() && d2 <= T::zero() {
        return a;
    }
    let bp = p - b;
    let d3 = ab.dot(bp);
    let d4 = ac.dot(bp);
    if d3 >= T::zero() && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= T::zero() && d1 >= T::zero() && d3 <= T::zero() {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(cp);
    let d6 = ac.dot(cp);
    if d6 >= T::zero() && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= T::zero() && d2 >= T::zero() && d6 <= T::zero() {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= T::zero() && (d4 - d3) >= T::zero() && (d5 - d6) >= T::zero() {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = T::one() / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

/// Exact triangle/triangle intersection (Möller 1997), including the
/// coplanar case. Zero-measure touching counts as intersecting.
pub fn triangles_intersect<T: Real>(t1: [Vec3<T>; 3], t2: [Vec3<T>; 3]) -> bool {
    let n2 = (t2[1] - t2[0]).cross(t2[2] - t2[0]);
    let d2 = -n2.dot(t2[0]);
    let dist1: Vec<T> = t1.iter().map(|&v| n2.dot(v) + d2).collect();
    if dist1.iter().all(|&d| d > T::zero()) || dist1.iter().all(|&d| d < T::zero()) {
        return false;
    }
    let n1 = (t1[1] - t1[0]).cross(t1[2] - t1[0]);
    let d1 = -n1.dot(t1[0]);
    let dist2: Vec<T> = t2.iter().map(|&v| n1.dot(v) + d1).collect();
    if dist2.iter().all(|&d| d > T::zero()) || dist2.iter().all(|&d| d < T::zero()) {
        return false;
    }
    if dist1.iter().all(|&d| d == T::zero()) && dist2.iter().all(|&d| d == T::zero()) {
        return coplanar_intersect(t1, t2, n1);
    }
    // Project on the plane-intersection line and compare intervals.
    let line = n1.cross(n2);
    let axis = {
        let a = [line.x.abs(), line.y.abs(), line.z.abs()];
        if a[0] >= a[1] && a[0] >= a[2] {
            0
        } else if a[1] >= a[2] {
            1
        } else {
            2
        }
    };
    let interval = |tri: [Vec3<T>; 3], dist: &[T]| -> Option<(T, T)> {
        let proj: Vec<T> = tri.iter().map(|v| v[axis]).collect();
        // Pick the vertex on one side and the two on the other (or on the plane).
        let mut ts: Vec<T> = Vec::new();
        for i in 0..3 {
            for j in (i + 1)..3 {
                let (di, dj) = (dist[i], dist[j]);
                if (di > T::zero() && dj < T::zero()) || (di < T::zero() && dj > T::zero()) {
                    ts.push(proj[i] + (proj[j] - proj[i]) * (di / (di - dj)));
                }
            }
            if dist[i] == T::zero() {
                ts.push(proj[i]);
            }
        }
        if ts.is_empty() {
            return None;
        }
        let lo = ts.iter().copied().fold(T::infinity(), T::min);
        let hi = ts.iter().copied().fold(T::neg_infinity(), T::max);
        Some((lo, hi))
    };
    match (interval(t1, &dist1), interval(t2, &dist2)) {
        (Some((a0, a1)), Some((b0, b1))) => a1 >= b0 && b1 >= a0,
        _ => false,
    }
}

fn coplanar_intersect<T: Real>(t1: [Vec3<T>; 3], t2: [Vec3<T>; 3], n: Vec3<T>) -> bool {
    // Drop the dominant normal axis and run a 2D separating-axis test.
    let a = [n.x.abs(), n.y.abs(), n.z.abs()];
    let (i0, i1) = if a[0] >= a[1] && a[0] >= a[2] {
        (1, 2)
    } else if a[1] >= a[2] {
        (0, 2)
    } else {
        (0, 1)
    };
    let p1: Vec<[T; 2]> = t1.iter().map(|v| [v[i0], v[i1]]).collect();
    let p2: Vec<[T; 2]> = t2.iter().map(|v| [v[i0], v[i1]]).collect();
    let axes = |p: &[[T; 2]]| -> Vec<[T; 2]> {
        (0..3)
            .map(|i| {
                let e = [p[(i + 1) % 3][0] - p[i][0], p[(i + 1) % 3][1] - p[i][1]];
                [-e[1], e[0]]
            })
            .collect()
    };
    let mut all_axes = axes(&p1);
    all_axes.extend(axes(&p2));
    for ax in all_axes {
        let project = |p: &[[T; 2]]| {
            let vals = p.iter().map(|q| q[0] * ax[0] + q[1] * ax[1]);
            let lo = vals.clone().fold(T::infinity(), T::min);
            let hi = vals.fold(T::neg_infinity(), T::max);
            (lo, hi)
        };
        let (a0, a1) = project(&p1);
        let (b0, b1) = project(&p2);
        if a1 < b0 || b1 < a0 {
            return false;
        }
    }
    true
}
