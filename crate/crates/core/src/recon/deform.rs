//! Global chart deformation: image features are pooled onto every chart
//! vertex, a GCN stack predicts per-vertex residuals, and the process
//! repeats with successful touch charts snapped back to their fitted
//! positions after every step and in the final mesh.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::atlas::{
    atlas_to_mesh, build_comm_graph, build_sphere_atlas, default_pairing_tol, Atlas, Chart,
    ChartKind,
};
use crate::error::{Error, Result};
use crate::geometry::TriMesh;
use crate::io::Image;
use crate::nn::{gcn_layer, Activation, CommGraphCsr, GcnNorm, ParamStore, Tape, Tensor, ValueId};
use crate::scalar::Real;
use crate::tactile::CameraModel;

/// One reconstruction input: the (optionally occluded) vision image, the
/// per-touch charts (fitted when successful, fingertip-collapsed when not)
/// and the camera that produced the image.
#[derive(Debug, Clone)]
pub struct SceneInput<T> {
    pub image: Option<Image<T>>,
    pub touch_charts: Vec<Chart<T>>,
    pub camera: CameraModel<T>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DeformConfig {
    /// Whether the model consumes the vision image at all.
    pub use_vision: bool,
    /// CNN channels at the three pooled scales.
    pub cnn_widths: [usize; 3],
    /// Hidden widths of the GCN stack (input and 3-wide output implied).
    pub gcn_hidden: Vec<usize>,
    /// Number of deformation refinement passes.
    pub iterations: usize,
    /// Drop every cross-chart communication edge (ablation).
    pub no_comm: bool,
    pub norm: GcnNorm,
    pub seed: u64,
}

impl Default for DeformConfig {
    fn default() -> Self {
        DeformConfig {
            use_vision: true,
            cnn_widths: [8, 16, 24],
            gcn_hidden: vec![96, 96],
            iterations: 3,
            no_comm: false,
            norm: GcnNorm::SelfLoop,
            seed: 13,
        }
    }
}

impl DeformConfig {
    pub fn image_feature_width(&self) -> usize {
        if self.use_vision {
            self.cnn_widths.iter().sum()
        } else {
            0
        }
    }

    /// GCN input width: image features plus xyz plus the touch mask bit.
    pub fn gcn_input_width(&self) -> usize {
        self.image_feature_width() + 4
    }

    fn gcn_chain(&self) -> Vec<usize> {
        let mut chain = vec![self.gcn_input_width()];
        chain.extend(&self.gcn_hidden);
        chain.push(3);
        chain
    }
}

#[derive(Debug, Clone)]
pub struct DeformModel<T> {
    pub params: ParamStore<T>,
    pub cfg: DeformConfig,
}

/// CNN layer plan: (stride, pooled) per conv layer.
const CNN_PLAN: [(usize, bool); 5] = [(1, true), (2, false), (1, true), (2, false), (1, true)];

fn cnn_channels(cfg: &DeformConfig) -> [(usize, usize); 5] {
    let [c1, c2, c3] = cfg.cnn_widths;
    [(3, c1), (c1, c2), (c2, c2), (c2, c3), (c3, c3)]
}

impl<T: Real> DeformModel<T> {
    pub fn init(cfg: DeformConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut params = ParamStore::new();
        if cfg.use_vision {
            for (i, (cin, cout)) in cnn_channels(&cfg).iter().enumerate() {
                let limit = (6.0 / ((cin + cout) * 9) as f64).sqrt();
                params.insert(
                    format!("cnn{i}.w"),
                    Tensor::uniform(&[*cout, *cin, 3, 3], limit, &mut rng),
                );
                params.insert(format!("cnn{i}.b"), Tensor::zeros(&[*cout]));
            }
        }
        let chain = cfg.gcn_chain();
        let last = chain.len() - 2;
        for i in 0..chain.len() - 1 {
            // The final layer starts at zero so the initial prediction is
            // the undeformed atlas.
            let w = if i == last {
                Tensor::zeros(&[chain[i], chain[i + 1]])
            } else {
                Tensor::xavier(chain[i], chain[i + 1], &mut rng)
            };
            params.insert(format!("gcn{i}.w"), w);
            params.insert(format!("gcn{i}.b"), Tensor::zeros(&[chain[i + 1]]));
        }
        DeformModel { params, cfg }
    }

    /// Registers every parameter on the tape (as inputs when training).
    pub fn register_params(&self, tape: &mut Tape<T>, train: bool) -> BTreeMap<String, ValueId> {
        let mut ids = BTreeMap::new();
        for name in self.params.names() {
            let t = self.params.get(name).unwrap().clone();
            let id = if train { tape.input(t) } else { tape.constant(t) };
            ids.insert(name.to_string(), id);
        }
        ids
    }

    /// Builds the deformation graph and returns the final `[V, 3]` vertex
    /// value plus the number of refinement passes run.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        param_ids: &BTreeMap<String, ValueId>,
        atlas: &Atlas<T>,
        graph: &Arc<CommGraphCsr>,
        scene: &SceneInput<T>,
    ) -> Result<(ValueId, usize)> {
        let n = atlas.total_vertices();
        if graph.n_vertices() != n {
            return Err(Error::shape(format!(
                "graph has {} vertices, atlas {}",
                graph.n_vertices(),
                n
            )));
        }
        let pid = |name: &str| -> Result<ValueId> {
            param_ids
                .get(name)
                .copied()
                .ok_or_else(|| Error::invalid(format!("missing parameter id '{name}'")))
        };
        // Image features once per scene.
        let maps = if self.cfg.use_vision {
            let image = scene
                .image
                .as_ref()
                .ok_or_else(|| Error::invalid("vision model needs a scene image"))?;
            let x0 = tape.constant(crate::recon::depth_net::image_to_tensor(image));
            let mut maps = Vec::new();
            let mut x = x0;
            for (i, (stride, pooled)) in CNN_PLAN.iter().enumerate() {
                let w = pid(&format!("cnn{i}.w"))?;
                let b = pid(&format!("cnn{i}.b"))?;
                x = tape.conv2d(x, w, b, *stride, 1)?;
                x = tape.relu(x);
                if *pooled {
                    maps.push(x);
                }
            }
            maps
        } else {
            Vec::new()
        };

        // Mask column and enforced rows are fixed per scene.
        let mut mask_data = vec![T::zero(); n];
        for id in atlas.enforced_vertex_ids() {
            mask_data[id] = T::one();
        }
        let mask_col = tape.constant(Tensor::new(vec![n, 1], mask_data)?);
        let enforced_rows = Arc::new(atlas.enforced_vertex_ids());
        let positions0 = {
            let mut data = Vec::with_capacity(n * 3);
            for p in atlas.flat_positions() {
                data.extend(p.to_array());
            }
            Tensor::new(vec![n, 3], data)?
        };
        let enforced_values = {
            let mut data = Vec::with_capacity(enforced_rows.len() * 3);
            for &r in enforced_rows.iter() {
                data.extend_from_slice(&positions0.data()[r * 3..r * 3 + 3]);
            }
            Arc::new(Tensor::new(vec![enforced_rows.len(), 3], data)?)
        };

        let chain = self.cfg.gcn_chain();
        let mut verts = tape.constant(positions0);
        let mut iterations = 0usize;
        for _ in 0..self.cfg.iterations {
            iterations += 1;
            let mut feat_parts = Vec::new();
            if !maps.is_empty() {
                feat_parts.push(tape.pool(&maps, verts, &scene.camera)?);
            }
            feat_parts.push(verts);
            feat_parts.push(mask_col);
            let mut h = tape.concat_cols(&feat_parts)?;
            for li in 0..chain.len() - 1 {
                let w = pid(&format!("gcn{li}.w"))?;
                let b = pid(&format!("gcn{li}.b"))?;
                let act =
                    if li == chain.len() - 2 { Activation::Identity } else { Activation::Relu };
                h = gcn_layer(tape, h, graph, w, b, act, self.cfg.norm)?;
            }
            verts = tape.add(verts, h)?;
            if !enforced_rows.is_empty() {
                verts = tape.overwrite_rows(
                    verts,
                    Arc::clone(&enforced_rows),
                    Arc::clone(&enforced_values),
                )?;
            }
        }
        Ok((verts, iterations))
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        self.params.save(dir)?;
        let path = dir.join("model.json");
        std::fs::write(&path, serde_json::to_vec_pretty(&self.cfg)?)
            .map_err(|e| Error::io(format!("write {}", path.display()), e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join("model.json");
        let cfg: DeformConfig = serde_json::from_slice(
            &std::fs::read(&path).map_err(|e| Error::io(format!("read {}", path.display()), e))?,
        )?;
        Ok(DeformModel { params: ParamStore::load(dir)?, cfg })
    }
}

/// Builds the scene atlas (95 vision charts by default) around the touch
/// charts and its communication graph. With `no_comm` only within-chart
/// edges remain.
pub fn assemble_atlas<T: Real>(
    n_vision: usize,
    touch_charts: Vec<Chart<T>>,
    no_comm: bool,
) -> Result<(Atlas<T>, Arc<CommGraphCsr>)> {
    let atlas = build_sphere_atlas(n_vision, touch_charts)?;
    let tol = default_pairing_tol(&atlas);
    let mut atlas = build_comm_graph(atlas, tol)?;
    if no_comm {
        let filtered: Vec<(u32, u32)> = atlas
            .comm_edges
            .iter()
            .copied()
            .filter(|&(a, b)| {
                atlas.chart_of_vertex(a as usize) == atlas.chart_of_vertex(b as usize)
            })
            .collect();
        atlas.comm_edges = filtered;
    }
    let graph = Arc::new(CommGraphCsr::from_atlas(&atlas)?);
    Ok((atlas, graph))
}

/// Runs the trained deformation on a scene, returning the deformed atlas.
pub fn deform<T: Real>(
    model: &DeformModel<T>,
    atlas: &Atlas<T>,
    graph: &Arc<CommGraphCsr>,
    scene: &SceneInput<T>,
) -> Result<Atlas<T>> {
    Ok(deform_traced(model, atlas, graph, scene)?.0)
}

/// Like [`deform`] but also reports how many refinement passes ran.
pub fn deform_traced<T: Real>(
    model: &DeformModel<T>,
    atlas: &Atlas<T>,
    graph: &Arc<CommGraphCsr>,
    scene: &SceneInput<T>,
) -> Result<(Atlas<T>, usize)> {
    let mut tape = Tape::new();
    let ids = model.register_params(&mut tape, false);
    let (verts, iterations) = model.forward(&mut tape, &ids, atlas, graph, scene)?;
    let vt = tape.value(verts);
    let positions: Vec<crate::geometry::Vec3<T>> = (0..vt.rows())
        .map(|r| crate::geometry::Vec3::new(vt.at2(r, 0), vt.at2(r, 1), vt.at2(r, 2)))
        .collect();
    Ok((atlas.with_positions(&positions)?, iterations))
}

/// Deformed atlas exported as one concatenated mesh.
pub fn deform_to_mesh<T: Real>(
    model: &DeformModel<T>,
    atlas: &Atlas<T>,
    graph: &Arc<CommGraphCsr>,
    scene: &SceneInput<T>,
) -> Result<TriMesh<T>> {
    Ok(atlas_to_mesh(&deform(model, atlas, graph, scene)?))
}

/// Charts of a scene marked successful.
pub fn successful_charts<T: Real>(scene: &SceneInput<T>) -> Vec<&Chart<T>> {
    scene
        .touch_charts
        .iter()
        .filter(|c| c.kind == ChartKind::Touch && c.success)
        .collect()
}
