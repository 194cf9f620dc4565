use crate::atlas::chart::ChartKind;
use crate::atlas::Atlas;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Most partners one boundary vertex may acquire through proximity pairing
/// before the tolerance is considered degenerate.
pub const MAX_PAIR_PARTNERS: usize = 8;

/// 0.35 x the mean nearest-neighbor chord between vision chart centers.
pub fn default_pairing_tol<T: Real>(atlas: &Atlas<T>) -> T {
    let centers: Vec<_> = atlas
        .charts
        .iter()
        .filter(|c| c.kind == ChartKind::Vision)
        .map(|c| c.vertices[0])
        .collect();
    let mut acc = T::zero();
    for (i, a) in centers.iter().enumerate() {
        let mut nn = T::infinity();
        for (j, b) in centers.iter().enumerate() {
            if i != j {
                nn = nn.min(a.dist(*b));
            }
        }
        acc += nn;
    }
    T::c(0.35) * acc / T::of_usize(centers.len().max(1))
}

/// Populates the communication edges:
///
/// (a) every within-chart mesh edge;
/// (b) boundary vertices of *different* vision charts within `pairing_tol`;
/// (c) every touch chart's reference vertex to every vision-chart boundary
///     vertex.
///
/// Errors if rule (b) gives any vertex more than [`MAX_PAIR_PARTNERS`]
/// partners.
pub fn build_comm_graph<T: Real>(mut atlas: Atlas<T>, pairing_tol: T) -> Result<Atlas<T>> {
    if !(pairing_tol > T::zero()) {
        return Err(Error::invalid("pairing tolerance must be positive"));
    }
    let mut edges: Vec<(u32, u32)> = Vec::new();
    // (a) within-chart edges.
    for (ci, chart) in atlas.charts.iter().enumerate() {
        let base = atlas.chart_offset(ci) as u32;
        for (a, b) in chart.edges() {
            edges.push((base + a as u32, base + b as u32));
        }
    }
    // (b) proximity pairing between vision chart boundaries.
    let mut vision_boundary: Vec<(u32, usize, crate::geometry::Vec3<T>)> = Vec::new();
    for (ci, chart) in atlas.charts.iter().enumerate() {
        if chart.kind != ChartKind::Vision {
            continue;
        }
        let base = atlas.chart_offset(ci) as u32;
        for &b in &chart.boundary {
            vision_boundary.push((base + b as u32, ci, chart.vertices[b]));
        }
    }
    let tol_sq = pairing_tol * pairing_tol;
    let mut partner_count = std::collections::HashMap::<u32, usize>::new();
    for i in 0..vision_boundary.len() {
        for j in (i + 1)..vision_boundary.len() {
            let (ga, ca, pa) = vision_boundary[i];
            let (gb, cb, pb) = vision_boundary[j];
            if ca == cb {
                continue;
            }
            if pa.dist_sq(pb) <= tol_sq {
                edges.push((ga.min(gb), ga.max(gb)));
                for g in [ga, gb] {
                    let count = partner_count.entry(g).or_insert(0);
                    *count += 1;
                    if *count > MAX_PAIR_PARTNERS {
                        return Err(Error::PairingToleranceTooLarge);
                    }
                }
            }
        }
    }
    // (c) touch reference vertices to all vision boundary vertices.
    for (ci, chart) in atlas.charts.iter().enumerate() {
        if chart.kind != ChartKind::Touch {
            continue;
        }
        let cr = chart.center_ref.ok_or_else(|| {
            Error::invalid(format!("touch chart {ci} has no reference vertex"))
        })?;
        let g_ref = (atlas.chart_offset(ci) + cr) as u32;
        for &(gb, _, _) in &vision_boundary {
            edges.push((g_ref.min(gb), g_ref.max(gb)));
        }
    }
    edges.sort_unstable();
    edges.dedup();
    debug_assert!(edges.iter().all(|&(a, b)| a < b), "no self loops");
    atlas.comm_edges = edges;
    Ok(atlas)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atlas::chart::{init_unsuccessful_touch_chart, make_touch_chart};
    use crate::atlas::sphere::build_sphere_atlas;
    use crate::geometry::Vec3;
    use crate::tactile::SensorPose;

    fn pose_at(z: f64) -> SensorPose<f64> {
        SensorPose::from_direction(
            Vec3::new(0.0, 0.0, z),
            Vec3::new(0.0, 0.0, -1.0),
            0.0,
            0.03,
            0.004,
        )
        .unwrap()
    }

    fn built_atlas(n_touch: usize) -> Atlas<f64> {
        let touch: Vec<_> = (0..n_touch)
            .map(|i| make_touch_chart(&pose_at(1.1 + 0.1 * i as f64)))
            .collect();
        let atlas = build_sphere_atlas(95, touch).unwrap();
        let tol = default_pairing_tol(&atlas);
        build_comm_graph(atlas, tol).unwrap()
    }

    #[test]
    fn edges_are_canonical_and_self_loop_free() {
        let atlas = built_atlas(1);
        for &(a, b) in &atlas.comm_edges {
            assert!(a < b);
        }
        let mut sorted = atlas.comm_edges.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), atlas.comm_edges.len());
    }

    #[test]
    fn touch_reference_vertex_reaches_every_vision_boundary() {
        let atlas = built_atlas(1);
        let g_ref = (atlas.chart_offset(95) + 40) as u32;
        let degree = atlas
            .comm_edges
            .iter()
            .filter(|&&(a, b)| a == g_ref || b == g_ref)
            .count();
        // 6 interior grid neighbors plus 95 charts x 12 boundary vertices.
        assert_eq!(degree, 6 + 95 * 12);
    }

    #[test]
    fn unsuccessful_touch_charts_still_get_rule_c_edges() {
        let touch = vec![init_unsuccessful_touch_chart(&pose_at(1.5))];
        let atlas = build_sphere_atlas(95, touch).unwrap();
        let tol = default_pairing_tol(&atlas);
        let atlas = build_comm_graph(atlas, tol).unwrap();
        let g_ref = (atlas.chart_offset(95) + 40) as u32;
        let degree = atlas
            .comm_edges
            .iter()
            .filter(|&&(a, b)| a == g_ref || b == g_ref)
            .count();
        assert_eq!(degree, 6 + 95 * 12);
    }

    #[test]
    fn boundary_pairing_connects_vision_charts() {
        // With rule (b), the vision charts form one connected component;
        // without it every chart is its own component (rule (c) ignored).
        let atlas = built_atlas(0);
        let n = atlas.total_vertices();
        let mut dsu: Vec<usize> = (0..n).collect();
        fn find(dsu: &mut Vec<usize>, x: usize) -> usize {
            if dsu[x] != x {
                let root = find(dsu, dsu[x]);
                dsu[x] = root;
            }
            dsu[x]
        }
        for &(a, b) in &atlas.comm_edges {
            let (ra, rb) = (find(&mut dsu, a as usize), find(&mut dsu, b as usize));
            dsu[ra] = rb;
        }
        let mut roots: Vec<usize> = (0..n).map(|i| find(&mut dsu, i)).collect();
        roots.sort_unstable();
        roots.dedup();
        assert_eq!(roots.len(), 1, "vision charts should be connected via rule (b)");

        // Drop rule (b) edges (cross-chart pairs) and rule (c): only
        // within-chart edges remain, one component per chart.
        let mut dsu2: Vec<usize> = (0..n).collect();
        for &(a, b) in &atlas.comm_edges {
            if atlas.chart_of_vertex(a as usize) == atlas.chart_of_vertex(b as usize) {
                let (ra, rb) = (find(&mut dsu2, a as usize), find(&mut dsu2, b as usize));
                dsu2[ra] = rb;
            }
        }
        let mut roots2: Vec<usize> = (0..n).map(|i| find(&mut dsu2, i)).collect();
        roots2.sort_unstable();
        roots2.dedup();
        assert_eq!(roots2.len(), atlas.charts.len());
    }

    #[test]
    fn oversized_tolerance_is_rejected() {
        let atlas = build_sphere_atlas::<f64>(95, vec![]).unwrap();
        let err = build_comm_graph(atlas, 10.0).unwrap_err();
        assert_eq!(err.to_string(), "pairing tolerance too large");
    }

    #[test]
    fn comm_graph_independent_of_chart_permutation() {
        let touch = vec![make_touch_chart(&pose_at(1.2)), make_touch_chart(&pose_at(1.4))];
        let atlas = build_sphere_atlas(95, touch).unwrap();
        let tol = default_pairing_tol(&atlas);
        let built = build_comm_graph(atlas.clone(), tol).unwrap();

        // Permute chart order (vision charts reversed, touch swapped),
        // rebuild, and compare after relabeling back.
        let mut order: Vec<usize> = (0..95).rev().collect();
        order.extend([96, 95]);
        let permuted_charts: Vec<_> = order.iter().map(|&i| atlas.charts[i].clone()).collect();
        let permuted = Atlas::new(permuted_charts).unwrap();
        let rebuilt = build_comm_graph(permuted, tol).unwrap();

        // Map permuted global ids back to original ones.
        let mut back = vec![0u32; built.total_vertices()];
        for (new_ci, &old_ci) in order.iter().enumerate() {
            let old_base = built.chart_offset(old_ci) as u32;
            let new_base = rebuilt.chart_offset(new_ci) as u32;
            for local in 0..built.charts[old_ci].vertices.len() as u32 {
                back[(new_base + local) as usize] = old_base + local;
            }
        }
        let mut mapped: Vec<(u32, u32)> = rebuilt
            .comm_edges
            .iter()
            .map(|&(a, b)| {
                let (x, y) = (back[a as usize], back[b as usize]);
                (x.min(y), x.max(y))
            })
            .collect();
        mapped.sort_unstable();
        mapped.dedup();
        assert_eq!(mapped, built.comm_edges);
    }
}
