//! Single-file model bundle.
//!
//! Layout: the tag `TGAN1\n`, a `u64` length and the JSON sidecar (training
//! configuration and fitted transformer, which carries the schema), a `u64`
//! length and the tensor container, then the SHA-256 of every preceding byte.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::model::{build_step_plan, init_params, StepPlan};
use crate::neural::{check_tag, read_u64, take, ParamStore, CONTAINER_TAG};
use crate::transform::Transformer;

const DIGEST_LEN: usize = 32;

/// Everything needed to sample: configuration, transformer and weights.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub config: TrainConfig,
    pub transformer: Transformer,
    pub params: ParamStore,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    config: TrainConfig,
    transformer: Transformer,
}

impl ModelBundle {
    pub fn plan(&self) -> StepPlan {
        build_step_plan(&self.transformer.schema, self.transformer.m())
    }

    /// Checks internal consistency, including every tensor's name and shape.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        self.transformer.validate()?;
        if self.config.m != self.transformer.m() {
            return Err(Error::InvalidBundle("config m differs from transformer m".into()));
        }
        let template = init_params(&self.transformer.schema, self.config.m, &self.config.model(), 0)?;
        if template.len() != self.params.len() {
            return Err(Error::InvalidBundle(format!(
                "expected {} tensors, found {}",
                template.len(),
                self.params.len()
            )));
        }
        for (name, t) in template.iter() {
            match self.params.get(name) {
                Some(p) if p.shape() == t.shape() => {}
                Some(p) => {
                    return Err(Error::InvalidBundle(format!(
                        "tensor {name} has shape {:?}, expected {:?}",
                        p.shape(),
                        t.shape()
                    )))
                }
                None => return Err(Error::InvalidBundle(format!("missing tensor {name}"))),
            }
        }
        self.params.check_finite()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let sidecar = serde_json::to_vec(&Sidecar {
            config: self.config.clone(),
            transformer: self.transformer.clone(),
        })
        .expect("sidecar serializes");
        let tensors = self.params.to_bytes();
        let mut out = Vec::with_capacity(CONTAINER_TAG.len() + 16 + sidecar.len() + tensors.len() + DIGEST_LEN);
        out.extend_from_slice(CONTAINER_TAG);
        out.extend_from_slice(&(sidecar.len() as u64).to_le_bytes());
        out.extend_from_slice(&sidecar);
        out.extend_from_slice(&(tensors.len() as u64).to_le_bytes());
        out.extend_from_slice(&tensors);
        let digest = Sha256::digest(&out);
        out.extend_from_slice(digest.as_slice());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        check_tag(bytes, CONTAINER_TAG)?;
        if bytes.len() < CONTAINER_TAG.len() + 16 + DIGEST_LEN {
            return Err(Error::CorruptFile("file too short".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::CorruptFile("checksum mismatch".into()));
        }
        let mut pos = CONTAINER_TAG.len();
        let n = read_u64(body, &mut pos)? as usize;
        let sidecar: Sidecar = serde_json::from_slice(take(body, &mut pos, n)?)
            .map_err(|e| Error::CorruptFile(format!("sidecar: {e}")))?;
        let n = read_u64(body, &mut pos)? as usize;
        let params = ParamStore::from_bytes(take(body, &mut pos, n)?)?;
        if pos != body.len() {
            return Err(Error::CorruptFile("trailing bytes".into()));
        }
        let bundle = ModelBundle {
            config: sidecar.config,
            transformer: sidecar.transformer,
            params,
        };
        bundle.validate()?;
        Ok(bundle)
    }

    /// Writes to a temporary sibling, then renames over `path`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    let write = || -> std::io::Result<()> {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::io(path, e)
    })
}
