//! Named parameter store with Adam state and a flat-binary checkpoint
//! format (JSON manifest + one little-endian f64 blob per tensor).

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;
use crate::scalar::Real;

#[derive(Debug, Clone)]
struct ParamEntry<T> {
    value: Tensor<T>,
    m: Tensor<T>,
    v: Tensor<T>,
}

/// Named parameters plus per-parameter Adam moments and the step counter.
/// Iteration order is the name order, so updates are deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    entries: BTreeMap<String, ParamEntry<T>>,
    step: u64,
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct AdamConfig<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Real> AdamConfig<T> {
    pub fn with_lr(lr: T) -> Self {
        AdamConfig { lr, beta1: T::c(0.9), beta2: T::c(0.999), eps: T::c(1e-8) }
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { entries: BTreeMap::new(), step: 0 }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) {
        let m = Tensor::zeros(value.shape());
        let v = Tensor::zeros(value.shape());
        self.entries.insert(name.into(), ParamEntry { value, m, v });
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.get(name).map(|e| &e.value)
    }

    /// Replaces a parameter value. Moments survive when the shape is
    /// unchanged and reset otherwise.
    pub fn set(&mut self, name: &str, value: Tensor<T>) {
        match self.entries.get_mut(name) {
            Some(e) if e.value.shape() == value.shape() => e.value = value,
            _ => self.insert(name.to_string(), value),
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// One Adam update with bias correction. Parameters without a gradient
    /// entry are left untouched (moments included).
    pub fn adam_step(&mut self, grads: &BTreeMap<String, Tensor<T>>, cfg: &AdamConfig<T>) -> Result<()> {
        for name in grads.keys() {
            if !self.entries.contains_key(name) {
                return Err(Error::invalid(format!("gradient for unknown parameter '{name}'")));
            }
        }
        self.step += 1;
        let t = self.step;
        let one = T::one();
        let bc1 = one - cfg.beta1.powi(t as i32);
        let bc2 = one - cfg.beta2.powi(t as i32);
        for (name, entry) in self.entries.iter_mut() {
            let Some(g) = grads.get(name) else { continue };
            if g.shape() != entry.value.shape() {
                return Err(Error::shape(format!(
                    "gradient shape {:?} for parameter '{name}' of shape {:?}",
                    g.shape(),
                    entry.value.shape()
                )));
            }
            let m = entry.m.data_mut();
            let v = entry.v.data_mut();
            let p = entry.value.data_mut();
            for i in 0..p.len() {
                let gi = g.data()[i];
                m[i] = cfg.beta1 * m[i] + (one - cfg.beta1) * gi;
                v[i] = cfg.beta2 * v[i] + (one - cfg.beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] = p[i] - cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
        Ok(())
    }

    /// Writes `manifest.json` plus one `.bin` per tensor (value and both
    /// moments) into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)
            .map_err(|e| Error::io(format!("create {}", dir.display()), e))?;
        let mut manifest = CheckpointManifest { step: self.step, tensors: Vec::new() };
        for (i, (name, entry)) in self.entries.iter().enumerate() {
            let base = format!("t{i:04}");
            for (suffix, tensor) in
                [("value", &entry.value), ("m", &entry.m), ("v", &entry.v)]
            {
                let file = format!("{base}.{suffix}.bin");
                write_tensor_f64(&dir.join(&file), tensor)?;
                manifest.tensors.push(TensorMeta {
                    name: name.clone(),
                    role: suffix.to_string(),
                    shape: tensor.shape().to_vec(),
                    file,
                });
            }
        }
        let path = dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_vec_pretty(&manifest)?)
            .map_err(|e| Error::io(format!("write {}", path.display()), e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join("manifest.json");
        let manifest: CheckpointManifest = serde_json::from_slice(
            &std::fs::read(&path).map_err(|e| Error::io(format!("read {}", path.display()), e))?,
        )?;
        let mut store = ParamStore::new();
        store.step = manifest.step;
        let mut partial: BTreeMap<String, [Option<Tensor<T>>; 3]> = BTreeMap::new();
        for meta in &manifest.tensors {
            let tensor = read_tensor_f64(&dir.join(&meta.file), &meta.shape)?;
            let slot = match meta.role.as_str() {
                "value" => 0,
                "m" => 1,
                "v" => 2,
                other => {
                    return Err(Error::Parse {
                        path: path.display().to_string(),
                        msg: format!("unknown tensor role '{other}'"),
                    })
                }
            };
            partial.entry(meta.name.clone()).or_default()[slot] = Some(tensor);
        }
        for (name, [value, m, v]) in partial {
            let (Some(value), Some(m), Some(v)) = (value, m, v) else {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    msg: format!("incomplete checkpoint entry for '{name}'"),
                });
            };
            store.entries.insert(name, ParamEntry { value, m, v });
        }
        Ok(store)
    }
}

#[derive(Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    role: String,
    shape: Vec<usize>,
    file: String,
}

#[derive(Serialize, Deserialize)]
struct CheckpointManifest {
    step: u64,
    tensors: Vec<TensorMeta>,
}

fn write_tensor_f64<T: Real>(path: &Path, t: &Tensor<T>) -> Result<()> {
    let mut bytes = Vec::with_capacity(t.numel() * 8);
    for v in t.data() {
        bytes.extend_from_slice(&v.f64().to_le_bytes());
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(format!("write {}", path.display()), e))
}

fn read_tensor_f64<T: Real>(path: &Path, shape: &[usize]) -> Result<Tensor<T>> {
    let bytes =
        std::fs::read(path).map_err(|e| Error::io(format!("read {}", path.display()), e))?;
    let numel: usize = shape.iter().product();
    if bytes.len() != numel * 8 {
        return Err(Error::Parse {
            path: path.display().to_string(),
            msg: format!("expected {} f64 values, got {} bytes", numel, bytes.len()),
        });
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| T::c(f64::from_le_bytes(c.try_into().unwrap())))
        .collect();
    Tensor::new(shape.to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grads_of(name: &str, t: Tensor<f64>) -> BTreeMap<String, Tensor<f64>> {
        let mut g = BTreeMap::new();
        g.insert(name.to_string(), t);
        g
    }

    #[test]
    fn first_step_matches_closed_form() {
        let mut store = ParamStore::<f64>::new();
        store.insert("p", Tensor::scalar(0.0));
        let cfg = AdamConfig::with_lr(0.1);
        store.adam_step(&grads_of("p", Tensor::scalar(1.0)), &cfg).unwrap();
        // With bias correction at t=1: update = lr * g / (|g| + eps).
        let p = store.get("p").unwrap().scalar_value();
        assert!((p - (-0.1 / (1.0 + 1e-8))).abs() < 1e-12, "p = {p}");
    }

    #[test]
    fn zero_grads_leave_fresh_parameters_unchanged() {
        let mut store = ParamStore::<f64>::new();
        store.insert("p", Tensor::new(vec![2], vec![1.5, -2.0]).unwrap());
        let cfg = AdamConfig::with_lr(0.1);
        store
            .adam_step(&grads_of("p", Tensor::zeros(&[2])), &cfg)
            .unwrap();
        assert_eq!(store.get("p").unwrap().data(), &[1.5, -2.0]);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut store = ParamStore::<f64>::new();
        store.insert("p", Tensor::scalar(1.0));
        let cfg = AdamConfig::with_lr(0.05);
        for _ in 0..100 {
            let p = store.get("p").unwrap().scalar_value();
            store.adam_step(&grads_of("p", Tensor::scalar(2.0 * p)), &cfg).unwrap();
        }
        let p = store.get("p").unwrap().scalar_value();
        assert!(p.abs() < 1e-2, "p = {p}");
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut store = ParamStore::<f64>::new();
        store.insert("p", Tensor::zeros(&[2, 2]));
        let cfg = AdamConfig::with_lr(0.1);
        let err = store.adam_step(&grads_of("p", Tensor::zeros(&[3])), &cfg).unwrap_err();
        assert!(err.to_string().contains("shape"));
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = ParamStore::<f64>::new();
        store.insert("w", Tensor::new(vec![2, 3], vec![0.1, -0.2, 0.3, 0.4, -0.5, 0.6]).unwrap());
        store.insert("b", Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
        let cfg = AdamConfig::with_lr(0.01);
        store
            .adam_step(&grads_of("w", Tensor::new(vec![2, 3], vec![1.0; 6]).unwrap()), &cfg)
            .unwrap();
        store.save(dir.path()).unwrap();
        let back = ParamStore::<f64>::load(dir.path()).unwrap();
        assert_eq!(back.step(), store.step());
        for name in ["w", "b"] {
            assert_eq!(back.get(name).unwrap(), store.get(name).unwrap());
        }
        // Moments restored too: a further identical step matches.
        let mut a = store.clone();
        let mut b = back.clone();
        let g = grads_of("w", Tensor::new(vec![2, 3], vec![0.5; 6]).unwrap());
        a.adam_step(&g, &cfg).unwrap();
        b.adam_step(&g, &cfg).unwrap();
        assert_eq!(a.get("w").unwrap(), b.get("w").unwrap());
    }
}
