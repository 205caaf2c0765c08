//! Named parameter store: every trainable tensor, its gradient buffer, and
//! Adam moment state, keyed by name. `BTreeMap` keeps iteration order (and
//! therefore every update and checkpoint) deterministic.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Debug, Clone)]
struct Slot {
    value: Matrix,
    grad: Matrix,
    adam_m: Matrix,
    adam_v: Matrix,
}

#[derive(Debug, Clone)]
pub struct ParamStore {
    slots: BTreeMap<String, Slot>,
    step: u64,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore { slots: BTreeMap::new(), step: 0 }
    }

    pub fn insert(&mut self, name: &str, value: Matrix) {
        let grad = Matrix::zeros(value.rows(), value.cols());
        let slot = Slot { grad: grad.clone(), adam_m: grad.clone(), adam_v: grad, value };
        self.slots.insert(name.to_string(), slot);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.slots.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn param(&self, name: &str) -> &Matrix {
        &self.slots[name].value
    }

    pub fn param_mut(&mut self, name: &str) -> &mut Matrix {
        &mut self.slots.get_mut(name).expect("unknown parameter").value
    }

    pub fn grad(&self, name: &str) -> &Matrix {
        &self.slots[name].grad
    }

    pub fn grad_mut(&mut self, name: &str) -> &mut Matrix {
        &mut self.slots.get_mut(name).expect("unknown parameter").grad
    }

    pub fn zero_grads(&mut self) {
        for slot in self.slots.values_mut() {
            slot.grad.fill(0.0);
        }
    }

    /// Sum of squared entries over all parameters, the `‖Θ‖²` of the
    /// squared-L2 weight decay term.
    pub fn squared_norm(&self) -> f64 {
        self.slots
            .values()
            .map(|s| s.value.data().iter().map(|v| v * v).sum::<f64>())
            .sum()
    }

    /// Adds `lambda * θ` to every gradient, the derivative of `½λ‖Θ‖²`.
    pub fn add_weight_decay_grads(&mut self, lambda: f64) {
        if lambda == 0.0 {
            return;
        }
        for slot in self.slots.values_mut() {
            for (g, v) in slot.grad.data_mut().iter_mut().zip(slot.value.data()) {
                *g += lambda * v;
            }
        }
    }

    /// One bias-corrected Adam update over every parameter. Gradients are
    /// left untouched; the caller clears them.
    pub fn adam_step(&mut self, lr: f64, beta1: f64, beta2: f64, eps: f64) {
        self.step += 1;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for slot in self.slots.values_mut() {
            let n = slot.value.data().len();
            let value = slot.value.data_mut();
            let grad = slot.grad.data();
            let m = slot.adam_m.data_mut();
            let v = slot.adam_v.data_mut();
            for i in 0..n {
                let g = grad[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                value[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }

    /// Snapshot of parameter values only (no grads, no moments).
    pub fn values_snapshot(&self) -> BTreeMap<String, Matrix> {
        self.slots.iter().map(|(k, s)| (k.clone(), s.value.clone())).collect()
    }

    pub fn restore_values(&mut self, snapshot: &BTreeMap<String, Matrix>) {
        for (name, value) in snapshot {
            self.slots.get_mut(name).expect("unknown parameter in snapshot").value =
                value.clone();
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    tensors: Vec<ManifestEntry>,
    adam_step: u64,
}

impl ParamStore {
    /// Writes the checkpoint directory: `manifest.json` with names, shapes
    /// and the Adam step counter, plus one little-endian raw f64 file per
    /// tensor.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = Manifest {
            tensors: self
                .slots
                .iter()
                .map(|(name, slot)| ManifestEntry {
                    name: name.clone(),
                    rows: slot.value.rows(),
                    cols: slot.value.cols(),
                })
                .collect(),
            adam_step: self.step,
        };
        let manifest_path = dir.join("manifest.json");
        let json = serde_json::to_string_pretty(&manifest)?;
        fs::write(&manifest_path, json).map_err(|e| Error::io(&manifest_path, e))?;

        for (name, slot) in &self.slots {
            let path = dir.join(format!("{name}.bin"));
            let mut file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            let mut bytes = Vec::with_capacity(slot.value.data().len() * 8);
            for v in slot.value.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            file.write_all(&bytes).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join("manifest.json");
        let json = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let manifest: Manifest = serde_json::from_str(&json)?;
        let mut store = ParamStore::new();
        for entry in &manifest.tensors {
            let path = dir.join(format!("{}.bin", entry.name));
            let mut file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
            let mut bytes = Vec::new();
            file.read_to_end(&mut bytes).map_err(|e| Error::io(&path, e))?;
            let expected = entry.rows * entry.cols * 8;
            if bytes.len() != expected {
                return Err(Error::InvalidArgument(format!(
                    "tensor file {} has {} bytes, expected {expected}",
                    path.display(),
                    bytes.len()
                )));
            }
            let data: Vec<f64> =
                bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            let matrix = Matrix::from_vec(entry.rows, entry.cols, data)?;
            if !matrix.is_finite() {
                return Err(Error::NonFinite(format!("tensor {}", entry.name)));
            }
            store.insert(&entry.name, matrix);
        }
        store.step = manifest.adam_step;
        Ok(store)
    }
}
