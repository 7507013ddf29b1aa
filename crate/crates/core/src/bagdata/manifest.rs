use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::generate::{Dataset, DatasetSpec, Experiment};
use super::pool::{synth_pool, InstancePool, SynthPoolSpec};
use super::{load_idx, NestedSample};
use crate::error::{Error, Result};

pub const MANIFEST_FORMAT: &str = "nmil-dataset";
pub const MANIFEST_VERSION: u32 = 1;

/// Where the instances referenced by a manifest come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PoolSource {
    Idx { images: PathBuf, labels: PathBuf },
    Synthetic(SynthPoolSpec),
}

impl PoolSource {
    pub fn load(&self) -> Result<InstancePool> {
        match self {
            PoolSource::Idx { images, labels } => load_idx(images, labels),
            PoolSource::Synthetic(spec) => synth_pool(spec),
        }
    }
}

/// Serialised dataset: generation parameters, pool reference and every
/// sample's index tree, weak label and latent-label tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub experiment: Experiment,
    pub spec: DatasetSpec,
    pub pool: PoolSource,
    pub pool_size: usize,
    pub instance_dim: usize,
    pub samples: Vec<NestedSample>,
}

impl Manifest {
    pub fn new(dataset: &Dataset, source: PoolSource, pool: &InstancePool) -> Self {
        Self {
            format: MANIFEST_FORMAT.to_string(),
            version: MANIFEST_VERSION,
            experiment: dataset.experiment,
            spec: dataset.spec.clone(),
            pool: source,
            pool_size: pool.len(),
            instance_dim: pool.dim(),
            samples: dataset.samples.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Manifest = serde_json::from_str(text)?;
        if m.format != MANIFEST_FORMAT {
            return Err(Error::Config(format!("not a dataset manifest: format `{}`", m.format)));
        }
        if m.version != MANIFEST_VERSION {
            return Err(Error::Config(format!(
                "manifest version {} unsupported (expected {MANIFEST_VERSION})",
                m.version
            )));
        }
        Ok(m)
    }

    /// SHA-256 of the serialised manifest, hex encoded.
    pub fn checksum(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_json()?.as_bytes())))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Rebuilds the dataset against `pool`, checking that every index and
    /// tree agrees with it.
    pub fn to_dataset(&self, pool: &InstancePool) -> Result<Dataset> {
        if pool.len() != self.pool_size || pool.dim() != self.instance_dim {
            return Err(Error::Structure(format!(
                "manifest expects a pool of {} x {}, got {} x {}",
                self.pool_size,
                self.instance_dim,
                pool.len(),
                pool.dim()
            )));
        }
        for s in &self.samples {
            let depth = s.tree.validate()?;
            if depth != self.spec.levels || !s.latent.matches(&s.tree) {
                return Err(Error::Structure(format!("sample {} does not match its spec", s.id)));
            }
            let leaves = s.tree.leaf_indices();
            if let Some(bad) = leaves.iter().find(|&&i| i >= pool.len()) {
                return Err(Error::Structure(format!(
                    "sample {} refers to instance {bad} outside the pool",
                    s.id
                )));
            }
            let labels: Vec<u8> = leaves.iter().map(|&i| pool.label(i)).collect();
            if labels != s.latent.instance_labels() {
                return Err(Error::Structure(format!(
                    "sample {} latent labels disagree with the pool",
                    s.id
                )));
            }
        }
        Ok(Dataset {
            experiment: self.experiment,
            spec: self.spec.clone(),
            samples: self.samples.clone(),
        })
    }
}
