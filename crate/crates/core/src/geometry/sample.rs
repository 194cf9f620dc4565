//! Area-weighted uniform surface sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, TriMesh, Vec3};
use crate::scalar::Real;

/// Cumulative-area table for repeated sampling from one mesh.
#[derive(Debug, Clone)]
pub struct SurfaceSampler<T> {
    /// Cumulative face areas (last entry = total area), skipping zero-area
    /// faces is unnecessary because they get zero selection mass.
    cumulative: Vec<T>,
    tris: Vec<[Vec3<T>; 3]>,
}

impl<T: Real> SurfaceSampler<T> {
    pub fn new(mesh: &TriMesh<T>) -> Result<Self> {
        if mesh.faces().is_empty() {
            return Err(Error::EmptyMesh);
        }
        let mut cumulative = Vec::with_capacity(mesh.faces().len());
        let mut acc = T::zero();
        for fi in 0..mesh.faces().len() {
            acc += mesh.face_area(fi);
            cumulative.push(acc);
        }
        let tris = (0..mesh.faces().len()).map(|fi| mesh.face_points(fi)).collect();
        Ok(SurfaceSampler { cumulative, tris })
    }

    pub fn total_area(&self) -> T {
        *self.cumulative.last().unwrap()
    }

    /// One uniform sample; returns the face index and the point.
    pub fn sample(&self, rng: &mut impl Rng) -> (usize, Vec3<T>) {
        let u = T::c(rng.gen::<f64>()) * self.total_area();
        let fi = match self.cumulative.binary_search_by(|c| {
            c.partial_cmp(&u).unwrap_or(std::cmp::Ordering::Equal)
        }) {
            Ok(i) => (i + 1).min(self.cumulative.len() - 1),
            Err(i) => i.min(self.cumulative.len() - 1),
        };
        let [a, b, c] = self.tris[fi];
        // Uniform barycentric coordinates via the square-root trick.
        let r1 = T::c(rng.gen::<f64>()).sqrt();
        let r2 = T::c(rng.gen::<f64>());
        let p = a * (T::one() - r1) + b * (r1 * (T::one() - r2)) + c * (r1 * r2);
        (fi, p)
    }

    /// Sample with the face index and barycentric weights exposed (used by
    /// differentiable chart sampling).
    pub fn sample_barycentric(&self, rng: &mut impl Rng) -> (usize, [T; 3]) {
        let u = T::c(rng.gen::<f64>()) * self.total_area();
        let fi = match self.cumulative.binary_search_by(|c| {
            c.partial_cmp(&u).unwrap_or(std::cmp::Ordering::Equal)
        }) {
            Ok(i) => (i + 1).min(self.cumulative.len() - 1),
            Err(i) => i.min(self.cumulative.len() - 1),
        };
        let r1 = T::c(rng.gen::<f64>()).sqrt();
        let r2 = T::c(rng.gen::<f64>());
        (fi, [T::one() - r1, r1 * (T::one() - r2), r1 * r2])
    }
}

/// `n` points uniformly distributed over the surface (face choice
/// proportional to area, uniform within each face). Deterministic per seed.
pub fn sample_surface<T: Real>(mesh: &TriMesh<T>, n: usize, seed: u64) -> Result<PointCloud<T>> {
    if n == 0 {
        return Err(Error::invalid("sample count must be >= 1"));
    }
    let sampler = SurfaceSampler::new(mesh)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| sampler.sample(&mut rng).1).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_right_triangle() -> TriMesh<f64> {
        TriMesh::new(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2]],
        )
        .unwrap()
    }

    #[test]
    fn empty_mesh_errors() {
        let mesh = TriMesh::<f64>::new(vec![], vec![]).unwrap();
        let err = sample_surface(&mesh, 10, 0).unwrap_err();
        assert_eq!(err.to_string(), "empty mesh");
    }

    #[test]
    fn points_satisfy_barycentric_constraints_and_centroid() {
        let mesh = unit_right_triangle();
        let cloud = sample_surface(&mesh, 10_000, 42).unwrap();
        let mut mean = Vec3::zero();
        for p in &cloud.points {
            assert!(p.x >= -1e-12 && p.y >= -1e-12, "outside triangle: {p:?}");
            assert!(p.x + p.y <= 1.0 + 1e-12);
            assert_eq!(p.z, 0.0);
            mean += *p;
        }
        mean = mean / cloud.len() as f64;
        let centroid = Vec3::new(1.0 / 3.0, 1.0 / 3.0, 0.0);
        assert!(mean.dist(centroid) < 0.01, "mean {mean:?}");
    }

    #[test]
    fn face_selection_proportional_to_area() {
        // Two faces with areas 1 and 3.
        let mesh = TriMesh::new(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(2.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
                Vec3::new(10.0, 0.0, 0.0),
                Vec3::new(12.0, 0.0, 0.0),
                Vec3::new(10.0, 3.0, 0.0),
            ],
            vec![[0, 1, 2], [3, 4, 5]],
        )
        .unwrap();
        let sampler = SurfaceSampler::new(&mesh).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut hits2 = 0usize;
        let n = 40_000;
        for _ in 0..n {
            if sampler.sample(&mut rng).0 == 1 {
                hits2 += 1;
            }
        }
        let frac = hits2 as f64 / n as f64;
        assert!((frac - 0.75).abs() < 0.01, "frac {frac}");
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let mesh = unit_right_triangle();
        let a = sample_surface(&mesh, 257, 99).unwrap();
        let b = sample_surface(&mesh, 257, 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn area_proportionality_chi_square() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let mesh = crate::geometry::primitives::icosphere::<f64>(1.0, 2);
        let sampler = SurfaceSampler::new(&mesh).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let n = 40_000usize;
        let mut counts = vec![0usize; mesh.faces().len()];
        for _ in 0..n {
            counts[sampler.sample(&mut rng).0] += 1;
        }
        let total_area = sampler.total_area();
        let mut stat = 0.0;
        for fi in 0..mesh.faces().len() {
            let expected = n as f64 * mesh.face_area(fi) / total_area;
            let diff = counts[fi] as f64 - expected;
            stat += diff * diff / expected;
        }
        let dof = (mesh.faces().len() - 1) as f64;
        let critical = ChiSquared::new(dof).unwrap().inverse_cdf(0.999);
        assert!(stat < critical, "chi2 stat {stat} >= critical {critical} (p <= 0.001)");
    }
}
