//! Named parameter storage and the `TGAN1` tensor container.
//!
//! Container layout: the 6-byte tag `TGAN1\n`, a little-endian `u64` manifest
//! length, a JSON manifest of `{name, shape, dtype, offset}` records (offsets
//! in bytes from the start of the data section), then the raw little-endian
//! `f64` data in manifest order.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const CONTAINER_TAG: &[u8; 6] = b"TGAN1\n";

pub type Gradients = BTreeMap<String, Tensor>;

/// Named tensors with deterministic (lexicographic) iteration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Entries whose name starts with `prefix`.
    pub fn subset(&self, prefix: &str) -> ParamStore {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    pub fn merge(&mut self, other: &ParamStore) {
        for (k, v) in &other.tensors {
            self.tensors.insert(k.clone(), v.clone());
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.tensors.iter().find(|(_, t)| !t.is_finite()) {
            Some((name, _)) => Err(Error::NonFinite(format!("parameter {name}"))),
            None => Ok(()),
        }
    }

    /// Puts every tensor on `graph`, trainable or constant.
    pub fn bind(&self, graph: &mut Graph, trainable: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|(k, t)| {
                let v = if trainable {
                    graph.param(t.clone())
                } else {
                    graph.constant(t.clone())
                };
                (k.clone(), v)
            })
            .collect();
        Bound { vars }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut manifest = Vec::with_capacity(self.tensors.len());
        let mut offset = 0u64;
        for (name, t) in &self.tensors {
            manifest.push(ManifestEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                dtype: "f64".into(),
                offset,
            });
            offset += 8 * t.len() as u64;
        }
        let manifest = serde_json::to_vec(&manifest).expect("manifest serializes");
        let mut out = Vec::with_capacity(CONTAINER_TAG.len() + 8 + manifest.len() + offset as usize);
        out.extend_from_slice(CONTAINER_TAG);
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        for t in self.tensors.values() {
            for x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        check_tag(bytes, CONTAINER_TAG)?;
        let mut pos = CONTAINER_TAG.len();
        let manifest_len = read_u64(bytes, &mut pos)? as usize;
        let manifest_bytes = take(bytes, &mut pos, manifest_len)?;
        let manifest: Vec<ManifestEntry> = serde_json::from_slice(manifest_bytes)
            .map_err(|e| Error::CorruptFile(format!("tensor manifest: {e}")))?;
        let data = &bytes[pos..];
        let mut tensors = BTreeMap::new();
        let mut expected_offset = 0u64;
        for entry in manifest {
            if entry.dtype != "f64" {
                return Err(Error::CorruptFile(format!(
                    "unsupported dtype {:?} for {}",
                    entry.dtype, entry.name
                )));
            }
            if entry.offset != expected_offset {
                return Err(Error::CorruptFile(format!("bad offset for {}", entry.name)));
            }
            let n: usize = entry.shape.iter().product();
            let start = entry.offset as usize;
            let end = start + 8 * n;
            let raw = data
                .get(start..end)
                .ok_or_else(|| Error::CorruptFile(format!("truncated data for {}", entry.name)))?;
            let values = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            tensors.insert(entry.name, Tensor::new(entry.shape, values)?);
            expected_offset = end as u64;
        }
        if expected_offset as usize != data.len() {
            return Err(Error::CorruptFile("trailing bytes after tensor data".into()));
        }
        Ok(ParamStore { tensors })
    }
}

pub(crate) fn check_tag(bytes: &[u8], tag: &[u8]) -> Result<()> {
    if bytes.len() < tag.len() {
        return Err(Error::CorruptFile("file shorter than its header".into()));
    }
    let head = &bytes[..tag.len()];
    if head == tag {
        return Ok(());
    }
    if head.starts_with(b"TGAN") {
        return Err(Error::VersionMismatch(
            String::from_utf8_lossy(head).trim().to_string(),
        ));
    }
    Err(Error::CorruptFile("missing TGAN header".into()))
}

pub(crate) fn read_u64(bytes: &[u8], pos: &mut usize) -> Result<u64> {
    let raw = take(bytes, pos, 8)?;
    Ok(u64::from_le_bytes(raw.try_into().expect("8 bytes")))
}

pub(crate) fn take<'a>(bytes: &'a [u8], pos: &mut usize, n: usize) -> Result<&'a [u8]> {
    let end = pos
        .checked_add(n)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::CorruptFile("unexpected end of file".into()))?;
    let out = &bytes[*pos..end];
    *pos = end;
    Ok(out)
}

/// Graph handles for a bound [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub(crate) fn from_pairs(pairs: impl IntoIterator<Item = (String, Var)>) -> Bound {
        Bound {
            vars: pairs.into_iter().collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::InvalidBundle(format!("missing parameter {name}")))
    }

    /// Gradients of every bound tensor after [`Graph::backward`]; tensors the
    /// loss does not reach get zeros.
    pub fn gradients(&self, graph: &Graph) -> Gradients {
        self.vars
            .iter()
            .map(|(k, &v)| {
                let g = graph.grad(v).cloned().unwrap_or_else(|| {
                    let t = graph.value(v);
                    Tensor::new(t.shape().to_vec(), vec![0.0; t.len()]).expect("same shape")
                });
                (k.clone(), g)
            })
            .collect()
    }
}

/// Scales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut Gradients, max_norm: f64) -> f64 {
    let norm = grads.values().map(Tensor::sum_sq).sum::<f64>().sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        for g in grads.values_mut() {
            g.scale_assign(s);
        }
    }
    norm
}
