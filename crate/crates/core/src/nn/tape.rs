//! Tape-based reverse-mode automatic differentiation over dense tensors.
//!
//! Values are created through [`Tape`] methods which evaluate eagerly and
//! record the operation. [`Tape::backward`] walks the tape in reverse and
//! accumulates gradients for every leaf created with `requires_grad`.
//! A tape is single-threaded; independent tapes may run in parallel.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{KdTree, Vec3};
use crate::nn::graph::CommGraphCsr;
use crate::nn::tensor::Tensor;
use crate::scalar::Real;
use crate::tactile::CameraModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValueId(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

/// Per-vertex projection record saved by the pooling op.
#[derive(Debug, Clone, Copy)]
struct PoolRecord<T> {
    /// Continuous image pixel coordinates.
    u: T,
    v: T,
    du_dp: Vec3<T>,
    dv_dp: Vec3<T>,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(ValueId, ValueId),
    Sub(ValueId, ValueId),
    MulElem(ValueId, ValueId),
    Scale(ValueId, T),
    AddBias(ValueId, ValueId),
    Relu(ValueId),
    SumAll(ValueId),
    AddScalars(Vec<ValueId>),
    Matmul(ValueId, ValueId),
    CsrAgg { input: ValueId, graph: Arc<CommGraphCsr>, include_self: bool },
    Conv2d { input: ValueId, kernels: ValueId, bias: ValueId, stride: usize, pad: usize },
    Upsample2(ValueId),
    ConcatCols(Vec<ValueId>),
    Pool { maps: Vec<ValueId>, verts: ValueId, img_w: usize, img_h: usize, records: Vec<PoolRecord<T>> },
    OverwriteRows {
        input: ValueId,
        rows: Arc<Vec<usize>>,
        #[allow(dead_code)] // kept so the op records its full inputs
        values: Arc<Tensor<T>>,
    },
    BaryGather { verts: ValueId, faces: Arc<Vec<[u32; 3]>>, weights: Arc<Vec<[T; 3]>> },
    ChamferVsFixed {
        pred: ValueId,
        target: Arc<Vec<Vec3<T>>>,
        nn_pred_to_target: Vec<u32>,
        nn_target_to_pred: Vec<u32>,
    },
    MaskedSqErr { pred: ValueId, target: Arc<Tensor<T>>, mask: Arc<Vec<bool>>, count: usize },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Records a computation for reverse-mode differentiation.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients of a scalar with respect to leaf values.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, id: ValueId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: ValueId) -> Option<Tensor<T>> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: ValueId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> ValueId {
        self.nodes.push(Node { value, op, needs_grad });
        ValueId(self.nodes.len() - 1)
    }

    fn needs(&self, id: ValueId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Leaf that participates in gradient computation.
    pub fn input(&mut self, value: Tensor<T>) -> ValueId {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor<T>) -> ValueId {
        self.push(value, Op::Leaf, false)
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.check_same_shape(a, b, "add")?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x + y);
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.check_same_shape(a, b, "sub")?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x - y);
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Sub(a, b), ng))
    }

    pub fn mul_elem(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.check_same_shape(a, b, "mul_elem")?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x * y);
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::MulElem(a, b), ng))
    }

    pub fn scale(&mut self, a: ValueId, c: T) -> ValueId {
        let t = self.value(a).map(|v| v * c);
        let ng = self.needs(a);
        self.push(t, Op::Scale(a, c), ng)
    }

    /// Adds a length-`m` bias vector to every row of an `n x m` matrix.
    pub fn add_bias(&mut self, mat: ValueId, bias: ValueId) -> Result<ValueId> {
        let (mt, bt) = (self.value(mat), self.value(bias));
        if mt.shape().len() != 2 || bt.shape() != [mt.cols()] {
            return Err(Error::shape(format!(
                "add_bias: matrix {:?} with bias {:?}",
                mt.shape(),
                bt.shape()
            )));
        }
        let m = mt.cols();
        let data: Vec<T> = mt
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + bt.data()[i % m])
            .collect();
        let t = Tensor::new(mt.shape().to_vec(), data)?;
        let ng = self.needs(mat) || self.needs(bias);
        Ok(self.push(t, Op::AddBias(mat, bias), ng))
    }

    pub fn relu(&mut self, a: ValueId) -> ValueId {
        let t = self.value(a).map(|v| v.max(T::zero()));
        let ng = self.needs(a);
        self.push(t, Op::Relu(a), ng)
    }

    pub fn sum_all(&mut self, a: ValueId) -> ValueId {
        let s: T = self.value(a).data().iter().copied().sum();
        let ng = self.needs(a);
        self.push(Tensor::scalar(s), Op::SumAll(a), ng)
    }

    /// Sum of scalar values.
    pub fn add_scalars(&mut self, ids: &[ValueId]) -> Result<ValueId> {
        let mut s = T::zero();
        for &id in ids {
            if !self.value(id).is_scalar() {
                return Err(Error::shape("add_scalars expects scalar values"));
            }
            s += self.value(id).scalar_value();
        }
        let ng = ids.iter().any(|&id| self.needs(id));
        Ok(self.push(Tensor::scalar(s), Op::AddScalars(ids.to_vec()), ng))
    }

    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (at, bt) = (self.value(a), self.value(b));
        if at.shape().len() != 2 || bt.shape().len() != 2 || at.cols() != bt.rows() {
            return Err(Error::shape(format!(
                "matmul: {:?} x {:?}",
                at.shape(),
                bt.shape()
            )));
        }
        let (n, k, m) = (at.rows(), at.cols(), bt.cols());
        let data = matmul_nn(at.data(), bt.data(), n, k, m);
        let t = Tensor::new(vec![n, m], data)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Matmul(a, b), ng))
    }

    /// Symmetric-normalized neighborhood aggregation:
    /// `out_u = sum_{v in N(u) (+ u)} in_v / sqrt((|N_u|+s)(|N_v|+s))` with
    /// `s = 1` when `include_self`.
    pub fn csr_agg(
        &mut self,
        input: ValueId,
        graph: &Arc<CommGraphCsr>,
        include_self: bool,
    ) -> Result<ValueId> {
        let it = self.value(input);
        if it.shape().len() != 2 || it.rows() != graph.n_vertices() {
            return Err(Error::shape(format!(
                "csr_agg: features {:?} vs {} graph vertices",
                it.shape(),
                graph.n_vertices()
            )));
        }
        let out = csr_agg_apply(it, graph, include_self);
        let ng = self.needs(input);
        Ok(self.push(out, Op::CsrAgg { input, graph: Arc::clone(graph), include_self }, ng))
    }

    /// 2D cross-correlation: input `[C, H, W]`, kernels `[OC, C, KH, KW]`,
    /// bias `[OC]`.
    pub fn conv2d(
        &mut self,
        input: ValueId,
        kernels: ValueId,
        bias: ValueId,
        stride: usize,
        pad: usize,
    ) -> Result<ValueId> {
        let (it, kt, bt) = (self.value(input), self.value(kernels), self.value(bias));
        if it.shape().len() != 3 || kt.shape().len() != 4 {
            return Err(Error::shape("conv2d expects [C,H,W] input and [OC,C,KH,KW] kernels"));
        }
        let (c, h, w) = (it.shape()[0], it.shape()[1], it.shape()[2]);
        let (oc, kc, kh, kw) = (kt.shape()[0], kt.shape()[1], kt.shape()[2], kt.shape()[3]);
        if kc != c || bt.shape() != [oc] {
            return Err(Error::shape(format!(
                "conv2d: input {:?}, kernels {:?}, bias {:?}",
                it.shape(),
                kt.shape(),
                bt.shape()
            )));
        }
        if stride == 0 || h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::invalid("conv2d: stride/padding incompatible with kernel"));
        }
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;
        let out = conv2d_forward(it, kt, bt, stride, pad, oh, ow);
        let ng = self.needs(input) || self.needs(kernels) || self.needs(bias);
        Ok(self.push(out, Op::Conv2d { input, kernels, bias, stride, pad }, ng))
    }

    /// Nearest-neighbor 2x upsampling of a `[C, H, W]` tensor.
    pub fn upsample2(&mut self, input: ValueId) -> Result<ValueId> {
        let it = self.value(input);
        if it.shape().len() != 3 {
            return Err(Error::shape("upsample2 expects [C,H,W]"));
        }
        let (c, h, w) = (it.shape()[0], it.shape()[1], it.shape()[2]);
        let mut data = vec![T::zero(); c * 4 * h * w];
        let (oh, ow) = (2 * h, 2 * w);
        for ci in 0..c {
            for y in 0..oh {
                for x in 0..ow {
                    data[ci * oh * ow + y * ow + x] =
                        it.data()[ci * h * w + (y / 2) * w + x / 2];
                }
            }
        }
        let t = Tensor::new(vec![c, oh, ow], data)?;
        let ng = self.needs(input);
        Ok(self.push(t, Op::Upsample2(input), ng))
    }

    /// Concatenates rank-2 tensors with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[ValueId]) -> Result<ValueId> {
        if parts.is_empty() {
            return Err(Error::invalid("concat_cols needs at least one part"));
        }
        let n = self.value(parts[0]).rows();
        let mut total = 0;
        for &p in parts {
            let t = self.value(p);
            if t.shape().len() != 2 || t.rows() != n {
                return Err(Error::shape("concat_cols: row counts differ"));
            }
            total += t.cols();
        }
        let mut data = vec![T::zero(); n * total];
        let mut col0 = 0;
        for &p in parts {
            let t = self.value(p);
            let m = t.cols();
            for r in 0..n {
                data[r * total + col0..r * total + col0 + m]
                    .copy_from_slice(&t.data()[r * m..(r + 1) * m]);
            }
            col0 += m;
        }
        let t = Tensor::new(vec![n, total], data)?;
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(t, Op::ConcatCols(parts.to_vec()), ng))
    }

    /// Perceptual feature pooling: projects each vertex through the camera
    /// and bilinearly samples every feature map at the projection (clamped
    /// to the map border), concatenating across maps. Differentiable with
    /// respect to both the maps and the vertex positions.
    pub fn pool(
        &mut self,
        maps: &[ValueId],
        verts: ValueId,
        camera: &CameraModel<T>,
    ) -> Result<ValueId> {
        if maps.is_empty() {
            return Err(Error::invalid("pool needs at least one feature map"));
        }
        let vt = self.value(verts);
        if vt.shape().len() != 2 || vt.cols() != 3 {
            return Err(Error::shape("pool expects [V,3] vertex positions"));
        }
        for &m in maps {
            if self.value(m).shape().len() != 3 {
                return Err(Error::shape("pool expects [C,H,W] feature maps"));
            }
        }
        let n = vt.rows();
        let (img_w, img_h) = (camera.width, camera.height);
        let mut records = Vec::with_capacity(n);
        for r in 0..n {
            let p = Vec3::new(vt.at2(r, 0), vt.at2(r, 1), vt.at2(r, 2));
            let rec = match camera.project(p) {
                Some((u, v, z)) => {
                    // d(u)/dp = f * (R0 * z - x * R2) / z^2, likewise for v.
                    let d = p - camera.position;
                    let x = camera.rotation[0].dot(d);
                    let y = camera.rotation[1].dot(d);
                    let inv_z2 = T::one() / (z * z);
                    let du_dp = (camera.rotation[0] * z - camera.rotation[2] * x)
                        * (camera.focal * inv_z2);
                    let dv_dp = (camera.rotation[1] * z - camera.rotation[2] * y)
                        * (camera.focal * inv_z2);
                    PoolRecord { u, v, du_dp, dv_dp }
                }
                // Behind the camera: clamp to the image center with no
                // position gradient.
                None => PoolRecord {
                    u: T::of_usize(img_w) * T::c(0.5),
                    v: T::of_usize(img_h) * T::c(0.5),
                    du_dp: Vec3::zero(),
                    dv_dp: Vec3::zero(),
                },
            };
            records.push(rec);
        }
        let total_c: usize = maps.iter().map(|&m| self.value(m).shape()[0]).sum();
        let mut data = vec![T::zero(); n * total_c];
        let mut c0 = 0;
        for &mid in maps {
            let map = self.value(mid);
            let (c, mh, mw) = (map.shape()[0], map.shape()[1], map.shape()[2]);
            for (r, rec) in records.iter().enumerate() {
                let (xf, yf) = map_coords(rec.u, rec.v, img_w, img_h, mw, mh);
                let s = BilinearSample::at(xf, yf, mw, mh);
                for ci in 0..c {
                    data[r * total_c + c0 + ci] = s.sample(&map.data()[ci * mh * mw..], mw);
                }
            }
            c0 += c;
        }
        let t = Tensor::new(vec![n, total_c], data)?;
        let ng = maps.iter().any(|&m| self.needs(m)) || self.needs(verts);
        Ok(self.push(t, Op::Pool { maps: maps.to_vec(), verts, img_w, img_h, records }, ng))
    }

    /// Copies `input` and overwrites the given rows with constant values
    /// (row `i` of `values` replaces row `rows[i]`).
    pub fn overwrite_rows(
        &mut self,
        input: ValueId,
        rows: Arc<Vec<usize>>,
        values: Arc<Tensor<T>>,
    ) -> Result<ValueId> {
        let it = self.value(input);
        if it.shape().len() != 2
            || values.shape().len() != 2
            || values.cols() != it.cols()
            || values.rows() != rows.len()
        {
            return Err(Error::shape("overwrite_rows: shape mismatch"));
        }
        let m = it.cols();
        let mut data = it.data().to_vec();
        for (i, &r) in rows.iter().enumerate() {
            if r >= it.rows() {
                return Err(Error::shape(format!("overwrite_rows: row {r} out of range")));
            }
            data[r * m..(r + 1) * m].copy_from_slice(&values.data()[i * m..(i + 1) * m]);
        }
        let t = Tensor::new(it.shape().to_vec(), data)?;
        let ng = self.needs(input);
        Ok(self.push(t, Op::OverwriteRows { input, rows, values }, ng))
    }

    /// Barycentric surface samples from a `[V, 3]` vertex tensor: sample `s`
    /// is `sum_k weights[s][k] * verts[faces[s][k]]`.
    pub fn bary_gather(
        &mut self,
        verts: ValueId,
        faces: Arc<Vec<[u32; 3]>>,
        weights: Arc<Vec<[T; 3]>>,
    ) -> Result<ValueId> {
        let vt = self.value(verts);
        if vt.shape().len() != 2 || vt.cols() != 3 || faces.len() != weights.len() {
            return Err(Error::shape("bary_gather: shape mismatch"));
        }
        let n = faces.len();
        let mut data = vec![T::zero(); n * 3];
        for s in 0..n {
            for k in 0..3 {
                let vi = faces[s][k] as usize;
                if vi >= vt.rows() {
                    return Err(Error::shape(format!("bary_gather: vertex {vi} out of range")));
                }
                let wk = weights[s][k];
                for c in 0..3 {
                    data[s * 3 + c] += wk * vt.at2(vi, c);
                }
            }
        }
        let t = Tensor::new(vec![n, 3], data)?;
        let ng = self.needs(verts);
        Ok(self.push(t, Op::BaryGather { verts, faces, weights }, ng))
    }

    /// Mean-form Chamfer distance between the `[P, 3]` prediction and a
    /// fixed target cloud, differentiable with respect to the prediction
    /// with nearest-neighbor assignments held fixed.
    pub fn chamfer_vs_fixed(
        &mut self,
        pred: ValueId,
        target: Arc<Vec<Vec3<T>>>,
        target_tree: &KdTree<T>,
    ) -> Result<ValueId> {
        let pt = self.value(pred);
        if pt.shape().len() != 2 || pt.cols() != 3 || pt.rows() == 0 {
            return Err(Error::shape("chamfer_vs_fixed expects non-empty [P,3]"));
        }
        if target.is_empty() {
            return Err(Error::EmptyCloud);
        }
        let points: Vec<Vec3<T>> = (0..pt.rows())
            .map(|r| Vec3::new(pt.at2(r, 0), pt.at2(r, 1), pt.at2(r, 2)))
            .collect();
        let pred_tree = KdTree::build(&points);
        let np = T::of_usize(points.len());
        let nt = T::of_usize(target.len());
        let mut total = T::zero();
        let mut nn_pred_to_target = Vec::with_capacity(points.len());
        for p in &points {
            let (j, d2) = target_tree.nearest(*p);
            total += d2 / np;
            nn_pred_to_target.push(j as u32);
        }
        let mut nn_target_to_pred = Vec::with_capacity(target.len());
        for q in target.iter() {
            let (i, d2) = pred_tree.nearest(*q);
            total += d2 / nt;
            nn_target_to_pred.push(i as u32);
        }
        let ng = self.needs(pred);
        Ok(self.push(
            Tensor::scalar(total),
            Op::ChamferVsFixed { pred, target, nn_pred_to_target, nn_target_to_pred },
            ng,
        ))
    }

    /// Mean squared error over masked entries; zero when the mask is empty.
    pub fn masked_sq_err(
        &mut self,
        pred: ValueId,
        target: Arc<Tensor<T>>,
        mask: Arc<Vec<bool>>,
    ) -> Result<ValueId> {
        let pt = self.value(pred);
        if pt.numel() != target.numel() || pt.numel() != mask.len() {
            return Err(Error::shape("masked_sq_err: length mismatch"));
        }
        let count = mask.iter().filter(|&&m| m).count();
        let mut acc = T::zero();
        if count > 0 {
            for i in 0..mask.len() {
                if mask[i] {
                    let d = pt.data()[i] - target.data()[i];
                    acc += d * d;
                }
            }
            acc /= T::of_usize(count);
        }
        let ng = self.needs(pred);
        Ok(self.push(Tensor::scalar(acc), Op::MaskedSqErr { pred, target, mask, count }, ng))
    }

    fn check_same_shape(&self, a: ValueId, b: ValueId, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape(format!(
                "{what}: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    /// Reverse pass from a scalar loss. Gradients are accumulated for every
    /// node that (transitively) depends on a `requires_grad` leaf.
    pub fn backward(&self, loss: ValueId) -> Result<Gradients<T>> {
        if !self.value(loss).is_scalar() {
            return Err(Error::shape("backward: loss must be scalar"));
        }
        let mut grads: Vec<Option<Tensor<T>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(Tensor::scalar(T::one()));
        for i in (0..=loss.0).rev() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accum_data(grads, *a, g.data());
                self.accum_data(grads, *b, g.data());
            }
            Op::Sub(a, b) => {
                self.accum_data(grads, *a, g.data());
                if self.needs(*b) {
                    let neg: Vec<T> = g.data().iter().map(|&v| -v).collect();
                    self.accum_data(grads, *b, &neg);
                }
            }
            Op::MulElem(a, b) => {
                if self.needs(*a) {
                    let d = zip_map(g.data(), self.value(*b).data(), |x, y| x * y);
                    self.accum_data(grads, *a, &d);
                }
                if self.needs(*b) {
                    let d = zip_map(g.data(), self.value(*a).data(), |x, y| x * y);
                    self.accum_data(grads, *b, &d);
                }
            }
            Op::Scale(a, c) => {
                if self.needs(*a) {
                    let d: Vec<T> = g.data().iter().map(|&v| v * *c).collect();
                    self.accum_data(grads, *a, &d);
                }
            }
            Op::AddBias(mat, bias) => {
                self.accum_data(grads, *mat, g.data());
                if self.needs(*bias) {
                    let m = self.value(*bias).numel();
                    let mut d = vec![T::zero(); m];
                    for (idx, &v) in g.data().iter().enumerate() {
                        d[idx % m] += v;
                    }
                    self.accum_data(grads, *bias, &d);
                }
            }
            Op::Relu(a) => {
                if self.needs(*a) {
                    let d = zip_map(g.data(), self.value(*a).data(), |gv, x| {
                        if x > T::zero() {
                            gv
                        } else {
                            T::zero()
                        }
                    });
                    self.accum_data(grads, *a, &d);
                }
            }
            Op::SumAll(a) => {
                if self.needs(*a) {
                    let gv = g.scalar_value();
                    let d = vec![gv; self.value(*a).numel()];
                    self.accum_data(grads, *a, &d);
                }
            }
            Op::AddScalars(ids) => {
                for &id in ids {
                    if self.needs(id) {
                        self.accum_data(grads, id, g.data());
                    }
                }
            }
            Op::Matmul(a, b) => {
                let (at, bt) = (self.value(*a), self.value(*b));
                let (n, k, m) = (at.rows(), at.cols(), bt.cols());
                if self.needs(*a) {
                    // dA = dC . B^T
                    let d = matmul_nt(g.data(), bt.data(), n, m, k);
                    self.accum_data(grads, *a, &d);
                }
                if self.needs(*b) {
                    // dB = A^T . dC
                    let d = matmul_tn(at.data(), g.data(), n, k, m);
                    self.accum_data(grads, *b, &d);
                }
            }
            Op::CsrAgg { input, graph, include_self } => {
                if self.needs(*input) {
                    // The normalized operator is symmetric, so the backward
                    // pass applies the same aggregation to the gradient.
                    let d = csr_agg_apply(g, graph, *include_self);
                    self.accum_data(grads, *input, d.data());
                }
            }
            Op::Conv2d { input, kernels, bias, stride, pad } => {
                conv2d_backward(
                    self.value(*input),
                    self.value(*kernels),
                    g,
                    *stride,
                    *pad,
                    self.needs(*input),
                    self.needs(*kernels),
                    self.needs(*bias),
                )
                .apply(self, grads, *input, *kernels, *bias);
            }
            Op::Upsample2(a) => {
                if self.needs(*a) {
                    let it = self.value(*a);
                    let (c, h, w) = (it.shape()[0], it.shape()[1], it.shape()[2]);
                    let (oh, ow) = (2 * h, 2 * w);
                    let mut d = vec![T::zero(); c * h * w];
                    for ci in 0..c {
                        for y in 0..oh {
                            for x in 0..ow {
                                d[ci * h * w + (y / 2) * w + x / 2] +=
                                    g.data()[ci * oh * ow + y * ow + x];
                            }
                        }
                    }
                    self.accum_data(grads, *a, &d);
                }
            }
            Op::ConcatCols(parts) => {
                let n = self.value(parts[0]).rows();
                let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
                let mut col0 = 0;
                for &p in parts {
                    let m = self.value(p).cols();
                    if self.needs(p) {
                        let mut d = vec![T::zero(); n * m];
                        for r in 0..n {
                            d[r * m..(r + 1) * m]
                                .copy_from_slice(&g.data()[r * total + col0..r * total + col0 + m]);
                        }
                        self.accum_data(grads, p, &d);
                    }
                    col0 += m;
                }
            }
            Op::Pool { maps, verts, img_w, img_h, records } => {
                self.pool_backward(maps, *verts, *img_w, *img_h, records, g, grads);
            }
            Op::OverwriteRows { input, rows, .. } => {
                if self.needs(*input) {
                    let m = self.value(*input).cols();
                    let mut d = g.data().to_vec();
                    for &r in rows.iter() {
                        for v in &mut d[r * m..(r + 1) * m] {
                            *v = T::zero();
                        }
                    }
                    self.accum_data(grads, *input, &d);
                }
            }
            Op::BaryGather { verts, faces, weights } => {
                if self.needs(*verts) {
                    let vt = self.value(*verts);
                    let mut d = vec![T::zero(); vt.numel()];
                    for s in 0..faces.len() {
                        for k in 0..3 {
                            let vi = faces[s][k] as usize;
                            let wk = weights[s][k];
                            for c in 0..3 {
                                d[vi * 3 + c] += wk * g.data()[s * 3 + c];
                            }
                        }
                    }
                    self.accum_data(grads, *verts, &d);
                }
            }
            Op::ChamferVsFixed { pred, target, nn_pred_to_target, nn_target_to_pred } => {
                if self.needs(*pred) {
                    let pt = self.value(*pred);
                    let gv = g.scalar_value();
                    let np = T::of_usize(pt.rows());
                    let nt = T::of_usize(target.len());
                    let two = T::c(2.0);
                    let mut d = vec![T::zero(); pt.numel()];
                    for (r, &j) in nn_pred_to_target.iter().enumerate() {
                        let q = target[j as usize];
                        let p = Vec3::new(pt.at2(r, 0), pt.at2(r, 1), pt.at2(r, 2));
                        let grad = (p - q) * (two / np) * gv;
                        d[r * 3] += grad.x;
                        d[r * 3 + 1] += grad.y;
                        d[r * 3 + 2] += grad.z;
                    }
                    for (jt, &r) in nn_target_to_pred.iter().enumerate() {
                        let q = target[jt];
                        let r = r as usize;
                        let p = Vec3::new(pt.at2(r, 0), pt.at2(r, 1), pt.at2(r, 2));
                        let grad = (p - q) * (two / nt) * gv;
                        d[r * 3] += grad.x;
                        d[r * 3 + 1] += grad.y;
                        d[r * 3 + 2] += grad.z;
                    }
                    self.accum_data(grads, *pred, &d);
                }
            }
            Op::MaskedSqErr { pred, target, mask, count } => {
                if self.needs(*pred) && *count > 0 {
                    let pt = self.value(*pred);
                    let gv = g.scalar_value();
                    let scale = T::c(2.0) / T::of_usize(*count) * gv;
                    let mut d = vec![T::zero(); pt.numel()];
                    for idx in 0..mask.len() {
                        if mask[idx] {
                            d[idx] = (pt.data()[idx] - target.data()[idx]) * scale;
                        }
                    }
                    self.accum_data(grads, *pred, &d);
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn pool_backward(
        &self,
        maps: &[ValueId],
        verts: ValueId,
        img_w: usize,
        img_h: usize,
        records: &[PoolRecord<T>],
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) {
        let total_c: usize = maps.iter().map(|&m| self.value(m).shape()[0]).sum();
        let verts_needs = self.needs(verts);
        let mut vert_grad = if verts_needs {
            Some(vec![T::zero(); records.len() * 3])
        } else {
            None
        };
        let mut c0 = 0;
        for &mid in maps {
            let map = self.value(mid);
            let (c, mh, mw) = (map.shape()[0], map.shape()[1], map.shape()[2]);
            let map_needs = self.needs(mid);
            let mut map_grad = if map_needs { Some(vec![T::zero(); map.numel()]) } else { None };
            let su = T::of_usize(mw) / T::of_usize(img_w);
            let sv = T::of_usize(mh) / T::of_usize(img_h);
            for (r, rec) in records.iter().enumerate() {
                let (xf, yf) = map_coords(rec.u, rec.v, img_w, img_h, mw, mh);
                let s = BilinearSample::at(xf, yf, mw, mh);
                for ci in 0..c {
                    let up = g.data()[r * total_c + c0 + ci];
                    if up == T::zero() {
                        continue;
                    }
                    if let Some(mg) = map_grad.as_mut() {
                        s.scatter(&mut mg[ci * mh * mw..(ci + 1) * mh * mw], mw, up);
                    }
                    if let Some(vg) = vert_grad.as_mut() {
                        let plane = &map.data()[ci * mh * mw..(ci + 1) * mh * mw];
                        let (dx, dy) = s.coord_grad(plane, mw);
                        // Chain: map coords scale linearly with image coords.
                        let gp = rec.du_dp * (dx * su * up) + rec.dv_dp * (dy * sv * up);
                        vg[r * 3] += gp.x;
                        vg[r * 3 + 1] += gp.y;
                        vg[r * 3 + 2] += gp.z;
                    }
                }
            }
            if let Some(mg) = map_grad {
                self.accum_data(grads, mid, &mg);
            }
            c0 += c;
        }
        if let Some(vg) = vert_grad {
            self.accum_data(grads, verts, &vg);
        }
    }

    fn accum_data(&self, grads: &mut [Option<Tensor<T>>], id: ValueId, add: &[T]) {
        if !self.needs(id) {
            return;
        }
        let slot = &mut grads[id.0];
        match slot {
            Some(t) => {
                for (dst, &src) in t.data_mut().iter_mut().zip(add) {
                    *dst += src;
                }
            }
            None => {
                *slot = Some(
                    Tensor::new(self.value(id).shape().to_vec(), add.to_vec())
                        .expect("gradient matches value shape"),
                );
            }
        }
    }
}

fn zip_map<T: Real>(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

/// Bilinear interpolation stencil at clamped continuous coordinates.
struct BilinearSample<T> {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
    fx: T,
    fy: T,
    /// Whether the x (resp. y) coordinate was strictly inside the map, i.e.
    /// the positional derivative is non-zero.
    interior_x: bool,
    interior_y: bool,
}

impl<T: Real> BilinearSample<T> {
    fn at(x: T, y: T, w: usize, h: usize) -> Self {
        let max_x = T::of_usize(w - 1);
        let max_y = T::of_usize(h - 1);
        let interior_x = x > T::zero() && x < max_x;
        let interior_y = y > T::zero() && y < max_y;
        let xc = x.max(T::zero()).min(max_x);
        let yc = y.max(T::zero()).min(max_y);
        let x0 = xc.floor().f64() as usize;
        let y0 = yc.floor().f64() as usize;
        let x0 = x0.min(w - 1);
        let y0 = y0.min(h - 1);
        let x1 = (x0 + 1).min(w - 1);
        let y1 = (y0 + 1).min(h - 1);
        let fx = xc - T::of_usize(x0);
        let fy = yc - T::of_usize(y0);
        BilinearSample { x0, x1, y0, y1, fx, fy, interior_x, interior_y }
    }

    fn sample(&self, plane: &[T], w: usize) -> T {
        let one = T::one();
        let v00 = plane[self.y0 * w + self.x0];
        let v10 = plane[self.y0 * w + self.x1];
        let v01 = plane[self.y1 * w + self.x0];
        let v11 = plane[self.y1 * w + self.x1];
        v00 * (one - self.fx) * (one - self.fy)
            + v10 * self.fx * (one - self.fy)
            + v01 * (one - self.fx) * self.fy
            + v11 * self.fx * self.fy
    }

    fn scatter(&self, plane: &mut [T], w: usize, up: T) {
        let one = T::one();
        plane[self.y0 * w + self.x0] += up * (one - self.fx) * (one - self.fy);
        plane[self.y0 * w + self.x1] += up * self.fx * (one - self.fy);
        plane[self.y1 * w + self.x0] += up * (one - self.fx) * self.fy;
        plane[self.y1 * w + self.x1] += up * self.fx * self.fy;
    }

    /// `(d sample / d x, d sample / d y)`; zero along clamped axes.
    fn coord_grad(&self, plane: &[T], w: usize) -> (T, T) {
        let one = T::one();
        let v00 = plane[self.y0 * w + self.x0];
        let v10 = plane[self.y0 * w + self.x1];
        let v01 = plane[self.y1 * w + self.x0];
        let v11 = plane[self.y1 * w + self.x1];
        let dx = if self.interior_x {
            (v10 - v00) * (one - self.fy) + (v11 - v01) * self.fy
        } else {
            T::zero()
        };
        let dy = if self.interior_y {
            (v01 - v00) * (one - self.fx) + (v11 - v10) * self.fx
        } else {
            T::zero()
        };
        (dx, dy)
    }
}

/// Image pixel coordinates to map pixel-center coordinates.
fn map_coords<T: Real>(u: T, v: T, img_w: usize, img_h: usize, mw: usize, mh: usize) -> (T, T) {
    let half = T::c(0.5);
    let x = u * T::of_usize(mw) / T::of_usize(img_w) - half;
    let y = v * T::of_usize(mh) / T::of_usize(img_h) - half;
    (x, y)
}

const PAR_FLOPS_THRESHOLD: usize = 1 << 15;

/// `C = A (n x k) . B (k x m)`.
pub(crate) fn matmul_nn<T: Real>(a: &[T], b: &[T], n: usize, k: usize, m: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * m];
    let row = |i: usize, out_row: &mut [T]| {
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (o, &bv) in out_row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    };
    if n * k * m >= PAR_FLOPS_THRESHOLD {
        out.par_chunks_mut(m).enumerate().for_each(|(i, r)| row(i, r));
    } else {
        for (i, r) in out.chunks_mut(m).enumerate() {
            row(i, r);
        }
    }
    out
}

/// `C = A (n x m) . B^T` where `B` is `(k x m)`; result `n x k`.
pub(crate) fn matmul_nt<T: Real>(a: &[T], b: &[T], n: usize, m: usize, k: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * k];
    let row = |i: usize, out_row: &mut [T]| {
        let arow = &a[i * m..(i + 1) * m];
        for (p, o) in out_row.iter_mut().enumerate() {
            let brow = &b[p * m..(p + 1) * m];
            let mut acc = T::zero();
            for (&av, &bv) in arow.iter().zip(brow) {
                acc += av * bv;
            }
            *o = acc;
        }
    };
    if n * k * m >= PAR_FLOPS_THRESHOLD {
        out.par_chunks_mut(k).enumerate().for_each(|(i, r)| row(i, r));
    } else {
        for (i, r) in out.chunks_mut(k).enumerate() {
            row(i, r);
        }
    }
    out
}

/// `C = A^T . B` where `A` is `(n x k)` and `B` is `(n x m)`; result `k x m`.
pub(crate) fn matmul_tn<T: Real>(a: &[T], b: &[T], n: usize, k: usize, m: usize) -> Vec<T> {
    let mut out = vec![T::zero(); k * m];
    // Row-parallel over the k output rows.
    let row = |p: usize, out_row: &mut [T]| {
        for i in 0..n {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[i * m..(i + 1) * m];
            for (o, &bv) in out_row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    };
    if n * k * m >= PAR_FLOPS_THRESHOLD {
        out.par_chunks_mut(m).enumerate().for_each(|(p, r)| row(p, r));
    } else {
        for (p, r) in out.chunks_mut(m).enumerate() {
            row(p, r);
        }
    }
    out
}

fn csr_agg_apply<T: Real>(input: &Tensor<T>, graph: &CommGraphCsr, include_self: bool) -> Tensor<T> {
    let n = graph.n_vertices();
    let m = input.cols();
    let extra = if include_self { 1usize } else { 0 };
    let inv_sqrt: Vec<T> = (0..n)
        .map(|u| {
            let d = graph.degree(u) + extra;
            if d == 0 {
                T::zero()
            } else {
                T::one() / T::of_usize(d).sqrt()
            }
        })
        .collect();
    let data = input.data();
    let mut out = vec![T::zero(); n * m];
    let row = |u: usize, out_row: &mut [T]| {
        let su = inv_sqrt[u];
        if include_self {
            let w = su * su;
            for (o, &v) in out_row.iter_mut().zip(&data[u * m..(u + 1) * m]) {
                *o += v * w;
            }
        }
        for &vtx in graph.neighbors(u) {
            let v = vtx as usize;
            let w = su * inv_sqrt[v];
            for (o, &val) in out_row.iter_mut().zip(&data[v * m..(v + 1) * m]) {
                *o += val * w;
            }
        }
    };
    if n * m >= PAR_FLOPS_THRESHOLD {
        out.par_chunks_mut(m).enumerate().for_each(|(u, r)| row(u, r));
    } else {
        for (u, r) in out.chunks_mut(m).enumerate() {
            row(u, r);
        }
    }
    Tensor::new(vec![n, m], out).expect("agg output shape")
}

fn conv2d_forward<T: Real>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Tensor<T> {
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (oc, _, kh, kw) = (
        kernels.shape()[0],
        kernels.shape()[1],
        kernels.shape()[2],
        kernels.shape()[3],
    );
    let ind = input.data();
    let kd = kernels.data();
    let bd = bias.data();
    let mut out = vec![T::zero(); oc * oh * ow];
    let plane = |o: usize, out_plane: &mut [T]| {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = bd[o];
                for ci in 0..c {
                    for ky in 0..kh {
                        let iy = oy * stride + ky;
                        if iy < pad || iy - pad >= h {
                            continue;
                        }
                        let iy = iy - pad;
                        for kx in 0..kw {
                            let ix = ox * stride + kx;
                            if ix < pad || ix - pad >= w {
                                continue;
                            }
                            let ix = ix - pad;
                            acc += ind[ci * h * w + iy * w + ix]
                                * kd[((o * c + ci) * kh + ky) * kw + kx];
                        }
                    }
                }
                out_plane[oy * ow + ox] = acc;
            }
        }
    };
    if oc * oh * ow * c * kh * kw >= PAR_FLOPS_THRESHOLD {
        out.par_chunks_mut(oh * ow).enumerate().for_each(|(o, p)| plane(o, p));
    } else {
        for (o, p) in out.chunks_mut(oh * ow).enumerate() {
            plane(o, p);
        }
    }
    Tensor::new(vec![oc, oh, ow], out).expect("conv output shape")
}

struct ConvGrads<T> {
    d_input: Option<Vec<T>>,
    d_kernels: Option<Vec<T>>,
    d_bias: Option<Vec<T>>,
}

impl<T: Real> ConvGrads<T> {
    fn apply(
        self,
        tape: &Tape<T>,
        grads: &mut [Option<Tensor<T>>],
        input: ValueId,
        kernels: ValueId,
        bias: ValueId,
    ) {
        if let Some(d) = self.d_input {
            tape.accum_data(grads, input, &d);
        }
        if let Some(d) = self.d_kernels {
            tape.accum_data(grads, kernels, &d);
        }
        if let Some(d) = self.d_bias {
            tape.accum_data(grads, bias, &d);
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    g: &Tensor<T>,
    stride: usize,
    pad: usize,
    need_input: bool,
    need_kernels: bool,
    need_bias: bool,
) -> ConvGrads<T> {
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (oc, _, kh, kw) = (
        kernels.shape()[0],
        kernels.shape()[1],
        kernels.shape()[2],
        kernels.shape()[3],
    );
    let (oh, ow) = (g.shape()[1], g.shape()[2]);
    let ind = input.data();
    let kd = kernels.data();
    let gd = g.data();
    let mut d_input = if need_input { Some(vec![T::zero(); input.numel()]) } else { None };
    let mut d_kernels = if need_kernels { Some(vec![T::zero(); kernels.numel()]) } else { None };
    let mut d_bias = if need_bias { Some(vec![T::zero(); oc]) } else { None };
    for o in 0..oc {
        for oy in 0..oh {
            for ox in 0..ow {
                let gv = gd[o * oh * ow + oy * ow + ox];
                if gv == T::zero() {
                    continue;
                }
                if let Some(db) = d_bias.as_mut() {
                    db[o] += gv;
                }
                for ci in 0..c {
                    for ky in 0..kh {
                        let iy = oy * stride + ky;
                        if iy < pad || iy - pad >= h {
                            continue;
                        }
                        let iy = iy - pad;
                        for kx in 0..kw {
                            let ix = ox * stride + kx;
                            if ix < pad || ix - pad >= w {
                                continue;
                            }
                            let ix = ix - pad;
                            let in_idx = ci * h * w + iy * w + ix;
                            let k_idx = ((o * c + ci) * kh + ky) * kw + kx;
                            if let Some(di) = d_input.as_mut() {
                                di[in_idx] += gv * kd[k_idx];
                            }
                            if let Some(dk) = d_kernels.as_mut() {
                                dk[k_idx] += gv * ind[in_idx];
                            }
                        }
                    }
                }
            }
        }
    }
    ConvGrads { d_input, d_kernels, d_bias }
}
