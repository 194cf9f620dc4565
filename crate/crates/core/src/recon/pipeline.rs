//! Full inference path: touch readings to fitted charts, chart deformation,
//! and the exported mesh.


use crate::atlas::{atlas_to_mesh, init_unsuccessful_touch_chart, Atlas, Chart};
use crate::error::Result;
use crate::geometry::{PointCloud, TriMesh};
use crate::io::Image;
use crate::recon::deform::{assemble_atlas, deform, DeformModel, SceneInput};
use crate::recon::depth_net::{depth_to_cloud, DepthPredictor};
use crate::recon::fit::{fit_touch_chart, FitConfig, FitReport};
use crate::scalar::Real;
use crate::tactile::{CameraModel, TouchSample};

#[derive(Debug, Clone)]
pub struct PredictConfig {
    pub n_vision: usize,
    pub fit: FitConfig,
    /// Use the simulator's ground-truth impression instead of the depth
    /// network when fitting touch charts.
    pub ground_truth_impressions: bool,
    /// Keep at most this many points of the predicted local cloud as the
    /// fit target (uniform stride subsampling).
    pub fit_target_cap: usize,
}

impl Default for PredictConfig {
    fn default() -> Self {
        PredictConfig {
            n_vision: 95,
            fit: FitConfig::default(),
            ground_truth_impressions: false,
            fit_target_cap: 2500,
        }
    }
}

/// Builds per-touch charts: fitted from the (predicted or ground-truth)
/// local cloud for successful touches, fingertip-collapsed otherwise.
pub fn touch_charts_for_samples<T: Real>(
    depth_model: &DepthPredictor<T>,
    touches: &[TouchSample<T>],
    cfg: &PredictConfig,
) -> Result<(Vec<Chart<T>>, Vec<Option<FitReport>>)> {
    let mut charts = Vec::with_capacity(touches.len());
    let mut reports = Vec::with_capacity(touches.len());
    for t in touches {
        if t.success {
            let imp = if cfg.ground_truth_impressions {
                t.impression.clone()
            } else {
                depth_model.predict_impression(&t.reading)?
            };
            let cloud = depth_to_cloud(&imp, &t.pose);
            let capped = subsample(&cloud, cfg.fit_target_cap);
            let (chart, report) = fit_touch_chart(&capped, &t.pose, &cfg.fit)?;
            charts.push(chart);
            reports.push(Some(report));
        } else {
            charts.push(init_unsuccessful_touch_chart(&t.pose));
            reports.push(None);
        }
    }
    Ok((charts, reports))
}

fn subsample<T: Real>(cloud: &PointCloud<T>, cap: usize) -> PointCloud<T> {
    if cloud.len() <= cap || cap == 0 {
        return cloud.clone();
    }
    let stride = cloud.len() as f64 / cap as f64;
    let points = (0..cap)
        .map(|i| cloud.points[(i as f64 * stride) as usize])
        .collect();
    PointCloud::new(points)
}

/// Result of one prediction.
#[derive(Debug, Clone)]
pub struct Prediction<T> {
    pub atlas: Atlas<T>,
    pub mesh: TriMesh<T>,
    pub fit_reports: Vec<Option<FitReport>>,
}

/// Reconstructs a surface from raw touch samples and an optional vision
/// image. Deterministic for fixed inputs.
pub fn predict<T: Real>(
    deform_model: &DeformModel<T>,
    depth_model: &DepthPredictor<T>,
    touches: &[TouchSample<T>],
    image: Option<Image<T>>,
    camera: &CameraModel<T>,
    cfg: &PredictConfig,
) -> Result<Prediction<T>> {
    let (charts, fit_reports) = touch_charts_for_samples(depth_model, touches, cfg)?;
    let (atlas, graph) = assemble_atlas(cfg.n_vision, charts.clone(), deform_model.cfg.no_comm)?;
    let scene = SceneInput { image, touch_charts: charts, camera: *camera };
    let deformed = deform(deform_model, &atlas, &graph, &scene)?;
    let mesh = atlas_to_mesh(&deformed);
    Ok(Prediction { atlas: deformed, mesh, fit_reports })
}
