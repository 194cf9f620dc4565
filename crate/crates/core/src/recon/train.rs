//! End-to-end training of the deformation model against the Chamfer
//! distance between points sampled from the predicted atlas and points
//! sampled from the target surface.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::atlas::{atlas_to_mesh, Atlas};
use crate::error::{Error, Result};
use crate::geometry::{chamfer, KdTree, PointCloud, SurfaceSampler, Vec3};
use crate::nn::{AdamConfig, CommGraphCsr, Tape, ValueId};
use crate::recon::deform::{assemble_atlas, DeformConfig, DeformModel, SceneInput};
use crate::scalar::Real;

/// One training example: the scene plus presampled target surface points.
#[derive(Debug, Clone)]
pub struct TrainScene<T> {
    pub scene: SceneInput<T>,
    pub target_samples: Arc<Vec<Vec3<T>>>,
}

#[derive(Debug, Clone)]
pub struct DeformTrainConfig {
    /// Adam learning rate.
    pub lr: f64,
    pub epochs: usize,
    /// Points sampled from the prediction per loss evaluation.
    pub pred_samples: usize,
    /// Vision charts in the atlas.
    pub n_vision: usize,
    pub seed: u64,
    /// Stop after this many epochs without validation improvement.
    pub early_stop_patience: usize,
}

impl Default for DeformTrainConfig {
    fn default() -> Self {
        DeformTrainConfig {
            lr: 3e-5,
            epochs: 20,
            pred_samples: 4000,
            n_vision: 95,
            seed: 17,
            early_stop_patience: 70,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DeformTrainReport {
    pub train_losses: Vec<f64>,
    /// Mean validation Chamfer per epoch.
    pub val_curve: Vec<f64>,
    /// Epoch (0-based) whose parameters were returned.
    pub best_epoch: usize,
}

struct Prepared<T> {
    atlas: Atlas<T>,
    graph: Arc<CommGraphCsr>,
    scene: SceneInput<T>,
    target: Arc<Vec<Vec3<T>>>,
    target_tree: Arc<KdTree<T>>,
}

fn prepare<T: Real>(scenes: &[TrainScene<T>], cfg: &DeformTrainConfig, no_comm: bool) -> Result<Vec<Prepared<T>>> {
    scenes
        .iter()
        .map(|ts| {
            let (atlas, graph) =
                assemble_atlas(cfg.n_vision, ts.scene.touch_charts.clone(), no_comm)?;
            Ok(Prepared {
                atlas,
                graph,
                scene: ts.scene.clone(),
                target: Arc::clone(&ts.target_samples),
                target_tree: Arc::new(KdTree::build(&ts.target_samples)),
            })
        })
        .collect()
}

fn derive_seed(master: u64, a: u64, b: u64) -> u64 {
    // splitmix64 over the combined words.
    let mut z = master
        .wrapping_add(a.wrapping_mul(0x9E3779B97F4A7C15))
        .wrapping_add(b.wrapping_mul(0xBF58476D1CE4E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Area-weighted surface samples of the deformed atlas as tape values.
/// Collapsed (zero-area) charts contribute nothing.
fn sample_pred_points<T: Real>(
    tape: &mut Tape<T>,
    verts: ValueId,
    atlas: &Atlas<T>,
    n_samples: usize,
    seed: u64,
) -> Result<ValueId> {
    // Deformed geometry for the sampling measure.
    let vt = tape.value(verts);
    let positions: Vec<Vec3<T>> =
        (0..vt.rows()).map(|r| Vec3::new(vt.at2(r, 0), vt.at2(r, 1), vt.at2(r, 2))).collect();
    let deformed = atlas.with_positions(&positions)?;
    let mesh = atlas_to_mesh(&deformed);
    let sampler = SurfaceSampler::new(&mesh)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut faces = Vec::with_capacity(n_samples);
    let mut weights = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let (fi, w) = sampler.sample_barycentric(&mut rng);
        let f = mesh.faces()[fi];
        faces.push([f[0] as u32, f[1] as u32, f[2] as u32]);
        weights.push(w);
    }
    tape.bary_gather(verts, Arc::new(faces), Arc::new(weights))
}

/// Mean test/validation Chamfer of the model on one prepared scene,
/// deterministic per seed.
fn eval_prepared<T: Real>(
    model: &DeformModel<T>,
    p: &Prepared<T>,
    pred_samples: usize,
    seed: u64,
) -> Result<f64> {
    let deformed = crate::recon::deform::deform(model, &p.atlas, &p.graph, &p.scene)?;
    let mesh = atlas_to_mesh(&deformed);
    let sampler = SurfaceSampler::new(&mesh)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pred: PointCloud<T> = (0..pred_samples).map(|_| sampler.sample(&mut rng).1).collect();
    let target = PointCloud::new(p.target.as_ref().clone());
    Ok(chamfer(&pred, &target)?.f64())
}

/// Mean Chamfer of a model over raw scenes (used by evaluation tooling).
pub fn eval_scenes<T: Real>(
    model: &DeformModel<T>,
    scenes: &[TrainScene<T>],
    cfg: &DeformTrainConfig,
) -> Result<Vec<f64>> {
    let prepared = prepare(scenes, cfg, model.cfg.no_comm)?;
    prepared
        .iter()
        .enumerate()
        .map(|(i, p)| eval_prepared(model, p, cfg.pred_samples, derive_seed(cfg.seed, 0xEAA1, i as u64)))
        .collect()
}

/// Trains a fresh model, validating each epoch and returning the parameters
/// of the best validation epoch.
pub fn train_deform<T: Real>(
    model_cfg: DeformConfig,
    train: &[TrainScene<T>],
    val: &[TrainScene<T>],
    cfg: &DeformTrainConfig,
) -> Result<(DeformModel<T>, DeformTrainReport)> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let no_comm = model_cfg.no_comm;
    let prepared = prepare(train, cfg, no_comm)?;
    let prepared_val = prepare(val, cfg, no_comm)?;
    let mut model = DeformModel::<T>::init(model_cfg);
    let adam = AdamConfig::with_lr(T::c(cfg.lr));
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0x51u64, 0));
    let mut report =
        DeformTrainReport { train_losses: Vec::new(), val_curve: Vec::new(), best_epoch: 0 };
    let mut best_val = f64::INFINITY;
    let mut best_params = model.params.clone();
    let mut stall = 0usize;
    for epoch in 0..cfg.epochs {
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        for (step, &si) in order.iter().enumerate() {
            let p = &prepared[si];
            let mut tape = Tape::new();
            let ids = model.register_params(&mut tape, true);
            let (verts, _) = model.forward(&mut tape, &ids, &p.atlas, &p.graph, &p.scene)?;
            let sample_seed = derive_seed(cfg.seed, epoch as u64, step as u64);
            let pts = sample_pred_points(&mut tape, verts, &p.atlas, cfg.pred_samples, sample_seed)?;
            let loss = tape.chamfer_vs_fixed(pts, Arc::clone(&p.target), &p.target_tree)?;
            report.train_losses.push(tape.value(loss).scalar_value().f64());
            let mut grads = tape.backward(loss)?;
            let mut gm = BTreeMap::new();
            for (name, id) in &ids {
                if let Some(g) = grads.take(*id) {
                    gm.insert(name.clone(), g);
                }
            }
            model.params.adam_step(&gm, &adam)?;
        }
        // Validate every epoch and keep the best checkpoint.
        let val_mean = if prepared_val.is_empty() {
            *report.train_losses.last().unwrap()
        } else {
            let mut acc = 0.0;
            for (i, p) in prepared_val.iter().enumerate() {
                acc += eval_prepared(&model, p, cfg.pred_samples, derive_seed(cfg.seed, 0x7Au64, i as u64))?;
            }
            acc / prepared_val.len() as f64
        };
        report.val_curve.push(val_mean);
        if val_mean < best_val {
            best_val = val_mean;
            best_params = model.params.clone();
            report.best_epoch = epoch;
            stall = 0;
        } else {
            stall += 1;
            if stall >= cfg.early_stop_patience {
                break;
            }
        }
    }
    model.params = best_params;
    Ok((model, report))
}
