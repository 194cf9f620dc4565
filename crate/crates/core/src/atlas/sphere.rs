use crate::atlas::chart::{make_vision_chart, Chart};
use crate::atlas::Atlas;
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::scalar::Real;

/// `n` directions on the unit sphere along a Fibonacci spiral.
pub fn fibonacci_directions<T: Real>(n: usize) -> Vec<Vec3<T>> {
    let golden_angle = T::c(std::f64::consts::PI * (3.0 - 5.0f64.sqrt()));
    (0..n)
        .map(|i| {
            let z = T::one() - T::c(2.0) * (T::of_usize(i) + T::c(0.5)) / T::of_usize(n);
            let r = (T::one() - z * z).max(T::zero()).sqrt();
            let ang = golden_angle * T::of_usize(i);
            Vec3::new(r * ang.cos(), r * ang.sin(), z)
        })
        .collect()
}

/// Vision charts tangent to the unit sphere at Fibonacci directions, all
/// scaled to 99% of the bound that guarantees no two charts intersect
/// (half the smallest center-to-center chord). Touch charts are appended
/// after the vision charts; the communication graph is built separately.
pub fn build_sphere_atlas<T: Real>(
    n_vision: usize,
    touch_charts: Vec<Chart<T>>,
) -> Result<Atlas<T>> {
    if n_vision < 4 {
        return Err(Error::invalid("need at least 4 vision charts"));
    }
    let dirs = fibonacci_directions::<T>(n_vision);
    let mut min_chord = T::infinity();
    for i in 0..n_vision {
        for j in (i + 1)..n_vision {
            min_chord = min_chord.min(dirs[i].dist(dirs[j]));
        }
    }
    // Each chart fits in a disc of its circumradius around its center, so
    // half the minimum chord cannot overlap; shrink slightly below it.
    let scale = T::c(0.99) * min_chord * T::c(0.5);
    let template = make_vision_chart::<T>();
    let mut charts = Vec::with_capacity(n_vision + touch_charts.len());
    for d in &dirs {
        let e_u = d.any_perpendicular();
        let e_v = d.cross(e_u);
        let mut chart = template.clone();
        for v in &mut chart.vertices {
            let local = *v;
            *v = *d + e_u * (local.x * scale) + e_v * (local.y * scale);
        }
        charts.push(chart);
    }
    charts.extend(touch_charts);
    Atlas::new(charts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atlas::chart::ChartKind;
    use crate::geometry::triangles_intersect;

    #[test]
    fn rejects_fewer_than_four_charts() {
        assert!(build_sphere_atlas::<f64>(3, vec![]).is_err());
    }

    #[test]
    fn default_atlas_has_expected_vertex_count() {
        let atlas = build_sphere_atlas::<f64>(95, vec![]).unwrap();
        assert_eq!(atlas.charts.len(), 95);
        let total: usize = atlas.charts.iter().map(|c| c.vertices.len()).sum();
        assert_eq!(total, 1805);
        assert!(atlas.charts.iter().all(|c| c.kind == ChartKind::Vision));
    }

    #[test]
    fn chart_centers_follow_fibonacci_spacing() {
        // Nearest-neighbor angular spacing should be close to the ideal
        // hexagonal-packing spacing sqrt(8*pi / (sqrt(3) * n)).
        let n = 95;
        let dirs = fibonacci_directions::<f64>(n);
        let ideal = (8.0 * std::f64::consts::PI / (3.0f64.sqrt() * n as f64)).sqrt();
        for (i, a) in dirs.iter().enumerate() {
            let mut nn = f64::INFINITY;
            for (j, b) in dirs.iter().enumerate() {
                if i != j {
                    nn = nn.min(a.dot(*b).clamp(-1.0, 1.0).acos());
                }
            }
            assert!(
                (nn - ideal).abs() <= 0.2 * ideal,
                "chart {i}: nn spacing {nn} vs ideal {ideal}"
            );
        }
    }

    #[test]
    fn no_two_chart_triangles_intersect() {
        // Brute-force pairwise scan over all triangles of different charts.
        let atlas = build_sphere_atlas::<f64>(95, vec![]).unwrap();
        let tris: Vec<(usize, [Vec3<f64>; 3])> = atlas
            .charts
            .iter()
            .enumerate()
            .flat_map(|(ci, c)| {
                c.faces.iter().map(move |f| {
                    (ci, [c.vertices[f[0]], c.vertices[f[1]], c.vertices[f[2]]])
                })
            })
            .collect();
        for i in 0..tris.len() {
            for j in (i + 1)..tris.len() {
                if tris[i].0 == tris[j].0 {
                    continue;
                }
                assert!(
                    !triangles_intersect(tris[i].1, tris[j].1),
                    "charts {} and {} intersect",
                    tris[i].0,
                    tris[j].0
                );
            }
        }
    }
}
