//! Fits a touch chart to a local point cloud by Chamfer-descent on the
//! vertex positions.
//!
//! The optimization runs in sensor-normalized coordinates (positions
//! centered on the pose and divided by the sensor width) so the halting
//! threshold and learning rate behave the same at any physical sensor size.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::atlas::{make_touch_chart, Chart};
use crate::error::{Error, Result};
use crate::geometry::{KdTree, PointCloud, SurfaceSampler, TriMesh, Vec3};
use crate::nn::{AdamConfig, ParamStore, Tape, Tensor};
use crate::scalar::Real;
use crate::tactile::SensorPose;

#[derive(Debug, Clone)]
pub struct FitConfig {
    /// Adam learning rate in normalized units.
    pub lr: f64,
    /// Halting threshold on the normalized Chamfer loss.
    pub halt: f64,
    pub max_iters: usize,
    /// Points sampled from the chart surface per iteration.
    pub samples_per_iter: usize,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        // The target->prediction Chamfer term has a sampling-density floor
        // near 1/(pi * samples_per_iter), so the sample count must stay
        // well above ~1000 for the halting threshold to be reachable.
        FitConfig { lr: 0.003, halt: 6e-4, max_iters: 2000, samples_per_iter: 2000, seed: 5 }
    }
}

#[derive(Debug, Clone)]
pub struct FitReport {
    /// Loss reached when the fit stopped.
    pub final_loss: f64,
    pub iterations: usize,
    /// False when the iteration cap was hit before the halting threshold;
    /// the returned chart is then the best seen so far.
    pub converged: bool,
    /// Best-so-far loss after each iteration (non-increasing).
    pub best_history: Vec<f64>,
}

/// Optimizes the chart vertex offsets so uniformly sampled chart points
/// match `target` under the Chamfer distance. Returns a successful chart in
/// world coordinates.
pub fn fit_touch_chart<T: Real>(
    target: &PointCloud<T>,
    pose: &SensorPose<T>,
    cfg: &FitConfig,
) -> Result<(Chart<T>, FitReport)> {
    target.require_non_empty()?;
    let template = make_touch_chart(pose);
    let inv_w = T::one() / pose.width;
    // Normalized coordinates: q = (p - center) / width.
    let init: Vec<Vec3<T>> =
        template.vertices.iter().map(|&v| (v - pose.center) * inv_w).collect();
    let target_n: Arc<Vec<Vec3<T>>> =
        Arc::new(target.points.iter().map(|&p| (p - pose.center) * inv_w).collect());
    let target_tree = KdTree::build(&target_n);
    let faces: Vec<[usize; 3]> = template.faces.clone();
    let init_tensor = {
        let mut data = Vec::with_capacity(init.len() * 3);
        for v in &init {
            data.extend(v.to_array());
        }
        Tensor::new(vec![init.len(), 3], data)?
    };

    let mut store = ParamStore::<T>::new();
    store.insert("offsets", Tensor::zeros(&[init.len(), 3]));
    let adam = AdamConfig::with_lr(T::c(cfg.lr));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best_loss = f64::INFINITY;
    let mut best_offsets = store.get("offsets").unwrap().clone();
    let mut best_history = Vec::with_capacity(cfg.max_iters);
    let mut final_loss = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0usize;

    for iter in 0..cfg.max_iters {
        iterations = iter + 1;
        let offsets = store.get("offsets").unwrap().clone();
        // Current chart geometry for area-weighted sampling.
        let verts_now: Vec<Vec3<T>> = init
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                v + Vec3::new(offsets.at2(i, 0), offsets.at2(i, 1), offsets.at2(i, 2))
            })
            .collect();
        let mesh_now = TriMesh::from_raw(verts_now, faces.clone());
        let sampler = SurfaceSampler::new(&mesh_now)?;
        let mut sample_faces = Vec::with_capacity(cfg.samples_per_iter);
        let mut sample_weights = Vec::with_capacity(cfg.samples_per_iter);
        for _ in 0..cfg.samples_per_iter {
            let (fi, w) = sampler.sample_barycentric(&mut rng);
            let f = faces[fi];
            sample_faces.push([f[0] as u32, f[1] as u32, f[2] as u32]);
            sample_weights.push(w);
        }

        let mut tape = Tape::new();
        let theta = tape.input(offsets);
        let base = tape.constant(init_tensor.clone());
        let verts = tape.add(base, theta)?;
        let pts = tape.bary_gather(verts, Arc::new(sample_faces), Arc::new(sample_weights))?;
        let loss = tape.chamfer_vs_fixed(pts, Arc::clone(&target_n), &target_tree)?;
        let loss_v = tape.value(loss).scalar_value().f64();
        final_loss = loss_v;
        if loss_v < best_loss {
            best_loss = loss_v;
            best_offsets = tape.value(theta).clone();
        }
        best_history.push(best_loss);
        if loss_v < cfg.halt {
            converged = true;
            break;
        }
        let mut grads = tape.backward(loss)?;
        let g = grads
            .take(theta)
            .ok_or_else(|| Error::invalid("chart fit produced no gradient"))?;
        let mut gm = BTreeMap::new();
        gm.insert("offsets".to_string(), g);
        store.adam_step(&gm, &adam)?;
    }

    let offsets = if converged { store.get("offsets").unwrap().clone() } else { best_offsets };
    // The halt fired before stepping, so current offsets equal the ones the
    // final loss was computed with.
    let world: Vec<Vec3<T>> = init
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let o = Vec3::new(offsets.at2(i, 0), offsets.at2(i, 1), offsets.at2(i, 2));
            pose.center + (v + o) * pose.width
        })
        .collect();
    let chart = Chart::new(
        crate::atlas::ChartKind::Touch,
        world,
        faces,
        template.center_ref,
        true,
    )?;
    let report = FitReport {
        final_loss: if converged { final_loss } else { best_loss },
        iterations,
        converged,
        best_history,
    };
    Ok((chart, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pose() -> SensorPose<f64> {
        SensorPose::from_direction(
            Vec3::new(0.1, -0.2, 0.5),
            Vec3::new(0.0, 0.0, -1.0),
            0.0,
            0.03,
            0.004,
        )
        .unwrap()
    }

    fn plane_target(pose: &SensorPose<f64>, offset: f64, n_side: usize) -> PointCloud<f64> {
        // Grid of points on a plane `offset` along the sensing direction.
        let mut pts = Vec::new();
        for i in 0..n_side {
            for j in 0..n_side {
                let fu = (i as f64 + 0.5) / n_side as f64 - 0.5;
                let fv = (j as f64 + 0.5) / n_side as f64 - 0.5;
                pts.push(
                    pose.center
                        + pose.tangent_u * (fu * pose.width)
                        + pose.tangent_v * (fv * pose.width)
                        + pose.normal * offset,
                );
            }
        }
        PointCloud::new(pts)
    }

    #[test]
    fn empty_target_is_rejected() {
        let err = fit_touch_chart(&PointCloud::<f64>::new(vec![]), &pose(), &FitConfig::default())
            .unwrap_err();
        assert!(matches!(err, Error::EmptyCloud));
    }

    #[test]
    fn in_plane_target_converges_fast() {
        let pose = pose();
        let target = plane_target(&pose, 0.0, 40);
        let (_, report) = fit_touch_chart(&target, &pose, &FitConfig::default()).unwrap();
        assert!(report.converged);
        assert!(report.iterations < 50, "took {} iterations", report.iterations);
        assert!(report.final_loss < 6e-4);
    }

    #[test]
    fn offset_plane_is_recovered() {
        let pose = pose();
        let offset = 0.002;
        let target = plane_target(&pose, offset, 40);
        let (chart, report) = fit_touch_chart(&target, &pose, &FitConfig::default()).unwrap();
        assert!(report.converged, "final loss {}", report.final_loss);
        // Mean plane of the fitted chart within 1e-3 of the target plane.
        let mean_off: f64 = chart
            .vertices
            .iter()
            .map(|v| (*v - pose.center).dot(pose.normal))
            .sum::<f64>()
            / chart.vertices.len() as f64;
        assert!((mean_off - offset).abs() < 1e-3, "mean offset {mean_off}");
        assert!(chart.success);
    }

    #[test]
    fn best_history_is_monotone_non_increasing() {
        let pose = pose();
        let target = plane_target(&pose, 0.0015, 25);
        let cfg = FitConfig { max_iters: 120, ..FitConfig::default() };
        let (_, report) = fit_touch_chart(&target, &pose, &cfg).unwrap();
        for w in report.best_history.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn iteration_cap_returns_best_so_far_with_warning() {
        let pose = pose();
        let target = plane_target(&pose, 0.003, 25);
        let cfg = FitConfig { max_iters: 3, ..FitConfig::default() };
        let (_, report) = fit_touch_chart(&target, &pose, &cfg).unwrap();
        assert!(!report.converged);
        assert_eq!(report.iterations, 3);
        assert_eq!(report.final_loss, *report.best_history.last().unwrap());
    }

    #[test]
    fn fit_is_deterministic() {
        let pose = pose();
        let target = plane_target(&pose, 0.001, 30);
        let cfg = FitConfig { max_iters: 40, ..FitConfig::default() };
        let (a, ra) = fit_touch_chart(&target, &pose, &cfg).unwrap();
        let (b, rb) = fit_touch_chart(&target, &pose, &cfg).unwrap();
        assert_eq!(a.vertices, b.vertices);
        assert_eq!(ra.final_loss, rb.final_loss);
    }
}
