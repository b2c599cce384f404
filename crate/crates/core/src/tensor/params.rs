use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;

use super::Tensor;
use crate::error::{Error, Result};
use crate::seed;

/// Initialization scheme for one parameter tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// `U(-1/√fan_in, 1/√fan_in)` where `fan_in` is the leading dimension.
    Uniform,
    Zeros,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub path: String,
    pub shape: Vec<usize>,
    pub init: Init,
    /// Whether weight decay applies (biases are excluded).
    pub decay: bool,
}

impl ParamSpec {
    pub fn weight(path: impl Into<String>, shape: impl Into<Vec<usize>>) -> Self {
        ParamSpec {
            path: path.into(),
            shape: shape.into(),
            init: Init::Uniform,
            decay: true,
        }
    }

    pub fn zero_weight(path: impl Into<String>, shape: impl Into<Vec<usize>>) -> Self {
        ParamSpec {
            init: Init::Zeros,
            ..ParamSpec::weight(path, shape)
        }
    }

    pub fn bias(path: impl Into<String>, shape: impl Into<Vec<usize>>) -> Self {
        ParamSpec {
            path: path.into(),
            shape: shape.into(),
            init: Init::Zeros,
            decay: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamConfig {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    value: Tensor,
    m: Tensor,
    v: Tensor,
    step: u64,
    decay: bool,
}

impl Entry {
    fn fresh(value: Tensor, decay: bool) -> Self {
        let m = Tensor::zeros(value.shape().to_vec());
        let v = m.clone();
        Entry {
            value,
            m,
            v,
            step: 0,
            decay,
        }
    }
}

/// Named parameters plus their Adam moments.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    entries: BTreeMap<String, Entry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Initializes every spec deterministically. Each tensor draws from its
    /// own stream keyed by `(seed, path)`, so adding a parameter never
    /// changes the values of the others.
    pub fn init(seed: u64, specs: &[ParamSpec]) -> Self {
        let mut store = ParamStore::new();
        for spec in specs {
            store.insert_spec(seed, spec);
        }
        store
    }

    /// Adds (or replaces) one parameter initialized from `spec`.
    pub fn insert_spec(&mut self, seed: u64, spec: &ParamSpec) {
        let n: usize = spec.shape.iter().product();
        let data = match spec.init {
            Init::Zeros => vec![0.0; n],
            Init::Uniform => {
                let fan_in = spec.shape.first().copied().unwrap_or(1).max(1);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let mut rng = seed::rng(seed, &[b"param", spec.path.as_bytes()]);
                (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
            }
        };
        self.insert(
            &spec.path,
            Tensor::new(spec.shape.clone(), data),
            spec.decay,
        );
    }

    pub fn insert(&mut self, path: &str, value: Tensor, decay: bool) {
        self.entries
            .insert(path.to_string(), Entry::fresh(value, decay));
    }

    pub fn get(&self, path: &str) -> Option<&Tensor> {
        self.entries.get(path).map(|e| &e.value)
    }

    pub fn get_mut(&mut self, path: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(path).map(|e| &mut e.value)
    }

    pub fn contains(&self, path: &str) -> bool {
        self.entries.contains_key(path)
    }

    pub fn decays(&self, path: &str) -> Option<bool> {
        self.entries.get(path).map(|e| e.decay)
    }

    pub fn step_count(&self, path: &str) -> Option<u64> {
        self.entries.get(path).map(|e| e.step)
    }

    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, e)| (k.as_str(), &e.value))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.entries.values().map(|e| e.value.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.entries.values().all(|e| e.value.is_finite())
    }

    /// Values only; two stores with equal parameters but different
    /// optimizer histories compare equal here.
    pub fn same_values(&self, other: &ParamStore) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|((ka, a), (kb, b))| ka == kb && a.value == b.value && a.decay == b.decay)
    }

    /// One Adam step with decoupled weight decay.
    ///
    /// Only parameters present in `grads` are touched: a parameter that took
    /// no part in the loss keeps its value, moments and step count. Panics on
    /// unknown paths or shape mismatches.
    pub fn adam_step(&mut self, grads: &BTreeMap<String, Tensor>, cfg: &AdamConfig) {
        for (path, g) in grads {
            let e = self
                .entries
                .get_mut(path)
                .unwrap_or_else(|| panic!("gradient for unknown parameter `{path}`"));
            assert_eq!(
                e.value.shape(),
                g.shape(),
                "gradient shape mismatch for `{path}`"
            );
            e.step += 1;
            let bc1 = 1.0 - cfg.beta1.powi(e.step as i32);
            let bc2 = 1.0 - cfg.beta2.powi(e.step as i32);
            let wd = if e.decay { cfg.weight_decay } else { 0.0 };
            let Entry { value, m, v, .. } = e;
            for (((p, m), v), &g) in value
                .data_mut()
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(g.data())
            {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                let decay = cfg.lr * wd * *p;
                *p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps) + decay;
            }
        }
    }

    /// Serializes parameter values (not optimizer state).
    ///
    /// Layout, little-endian: magic `XFNP`, `u32` version, `u32` count, then
    /// per entry in path order: `u32` path length, UTF-8 path, `u8` decay
    /// flag, `u32` rank, `u64` per dimension, `f64` per value.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.num_values() * 8);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (path, e) in &self.entries {
            out.extend_from_slice(&(path.len() as u32).to_le_bytes());
            out.extend_from_slice(path.as_bytes());
            out.push(e.decay as u8);
            out.extend_from_slice(&(e.value.ndim() as u32).to_le_bytes());
            for &d in e.value.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in e.value.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let count = r.u32()? as usize;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let path = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Checkpoint("non-UTF-8 parameter path".into()))?
                .to_string();
            let decay = r.take(1)?[0] != 0;
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let data = (0..n)
                .map(|_| r.u64().map(f64::from_bits))
                .collect::<Result<Vec<_>>>()?;
            store.insert(&path, Tensor::new(shape, data), decay);
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"XFNP";
pub const CHECKPOINT_VERSION: u32 = 1;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn global_norm(grads: &BTreeMap<String, Tensor>) -> f64 {
    grads
        .values()
        .flat_map(|g| g.data())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut BTreeMap<String, Tensor>, max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.values_mut() {
            for x in g.data_mut() {
                *x *= s;
            }
        }
    }
    norm
}
