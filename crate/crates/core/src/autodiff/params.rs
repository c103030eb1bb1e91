use std::io::{Read, Write};

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8] = b"HAMLEARN-CKPT-1\n";

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Named parameter tensors with gradient accumulators and Adam moments.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    grads: Vec<Tensor>,
    first_moment: Vec<Tensor>,
    second_moment: Vec<Tensor>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a parameter and returns its index. Names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> usize {
        let name = name.into();
        assert!(self.index_of(&name).is_none(), "duplicate parameter {name}");
        let shape = value.shape();
        self.names.push(name);
        self.values.push(value);
        self.grads.push(Tensor::zeros(shape));
        self.first_moment.push(Tensor::zeros(shape));
        self.second_moment.push(Tensor::zeros(shape));
        self.names.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn value(&self, idx: usize) -> &Tensor {
        &self.values[idx]
    }

    pub fn value_mut(&mut self, idx: usize) -> &mut Tensor {
        &mut self.values[idx]
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.values[i])
    }

    pub fn grad(&self, idx: usize) -> &Tensor {
        &self.grads[idx]
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Records every parameter as a leaf on `tape`, in index order.
    pub fn bind<'t>(&self, tape: &'t Tape) -> Vec<Var<'t>> {
        self.values.iter().map(|v| tape.leaf(v.clone())).collect()
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            g.data_mut().fill(0.0);
        }
    }

    /// Adds `grads` (one tensor per parameter, index order) into the accumulators.
    pub fn accumulate(&mut self, grads: &[Tensor]) -> Result<()> {
        if grads.len() != self.grads.len() {
            return Err(Error::CountMismatch { expected: self.grads.len(), found: grads.len() });
        }
        for (acc, g) in self.grads.iter_mut().zip(grads) {
            acc.add_assign(g)?;
        }
        Ok(())
    }

    pub fn grad_norm(&self) -> f64 {
        self.grads.iter().flat_map(|g| g.data()).map(|x| x * x).sum::<f64>().sqrt()
    }

    /// One bias-corrected Adam update from the accumulated gradients.
    pub fn adam_step(&mut self, cfg: &Adam) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for i in 0..self.values.len() {
            let g = self.grads[i].data();
            let m = self.first_moment[i].data_mut();
            for (m, &g) in m.iter_mut().zip(g) {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            }
            let v = self.second_moment[i].data_mut();
            for (v, &g) in v.iter_mut().zip(g) {
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            }
            let (m, v) = (self.first_moment[i].data(), self.second_moment[i].data());
            for ((p, &m), &v) in self.values[i].data_mut().iter_mut().zip(m).zip(v) {
                *p -= cfg.lr * (m / c1) / ((v / c2).sqrt() + cfg.eps);
            }
        }
    }

    /// Copies parameter values from `other`, which must have the same layout.
    pub fn copy_values_from(&mut self, other: &ParamStore) -> Result<()> {
        if self.names != other.names {
            return Err(Error::Checkpoint("parameter layout differs".into()));
        }
        for (dst, src) in self.values.iter_mut().zip(&other.values) {
            if dst.shape() != src.shape() {
                return Err(Error::Checkpoint("parameter shape differs".into()));
            }
            dst.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }

    pub fn write_checkpoint(&self, mut w: impl Write) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        for (name, value) in self.names.iter().zip(&self.values) {
            w.write_all(&(name.len() as u64).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            let [r, c] = value.shape();
            w.write_all(&(r as u64).to_le_bytes())?;
            w.write_all(&(c as u64).to_le_bytes())?;
            for x in value.data() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Reads a checkpoint into a fresh store (no optimizer state).
    pub fn read_checkpoint(mut r: impl Read) -> Result<Self> {
        let mut magic = vec![0u8; CHECKPOINT_MAGIC.len()];
        r.read_exact(&mut magic).map_err(|_| Error::Checkpoint("truncated header".into()))?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let count = read_u64(&mut r)?;
        let mut store = Self::new();
        for _ in 0..count {
            let len = read_u64(&mut r)? as usize;
            if len > 4096 {
                return Err(Error::Checkpoint("parameter name too long".into()));
            }
            let mut name = vec![0u8; len];
            r.read_exact(&mut name).map_err(|_| Error::Checkpoint("truncated name".into()))?;
            let name = String::from_utf8(name).map_err(|_| Error::Checkpoint("name is not UTF-8".into()))?;
            let rows = read_u64(&mut r)? as usize;
            let cols = read_u64(&mut r)? as usize;
            let n = rows.checked_mul(cols).filter(|&n| n <= 1 << 28);
            let n = n.ok_or_else(|| Error::Checkpoint("tensor too large".into()))?;
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                let mut b = [0u8; 8];
                r.read_exact(&mut b).map_err(|_| Error::Checkpoint("truncated data".into()))?;
                data.push(f64::from_le_bytes(b));
            }
            if store.index_of(&name).is_some() {
                return Err(Error::Checkpoint(format!("duplicate parameter {name}")));
            }
            store.insert(name, Tensor::new([rows, cols], data)?);
        }
        Ok(store)
    }
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|_| Error::Checkpoint("truncated record".into()))?;
    Ok(u64::from_le_bytes(b))
}
