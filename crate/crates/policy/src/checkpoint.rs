//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"ISLICKPT"            8-byte magic
//! u32                    container version
//! u64                    manifest length in bytes
//! [u8; len]              manifest, UTF-8 JSON
//! f32 * n                tensor data, manifest order, row-major
//! ```
//!
//! The manifest records the policy config, the action grid and the name and
//! shape of every tensor. Loading rebuilds the network from the config and
//! rejects any name or shape that does not match.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use isli_core::env::{ACTION_LEVELS, LEVEL_VELOCITIES};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PolicyError, Result};
use crate::network::{Policy, PolicyConfig};

pub const MAGIC: &[u8; 8] = b"ISLICKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionGridInfo {
    pub levels: usize,
    pub min: f64,
    pub max: f64,
}

impl ActionGridInfo {
    pub fn current() -> Self {
        Self {
            levels: ACTION_LEVELS,
            min: LEVEL_VELOCITIES[0],
            max: LEVEL_VELOCITIES[ACTION_LEVELS - 1],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: PolicyConfig,
    pub grid: ActionGridInfo,
    pub tensors: Vec<TensorEntry>,
    /// Free-form provenance (training step, seeds).
    #[serde(default)]
    pub meta: serde_json::Map<String, serde_json::Value>,
}

pub fn to_bytes(
    policy: &Policy,
    meta: serde_json::Map<String, serde_json::Value>,
) -> Result<Vec<u8>> {
    let manifest = Manifest {
        config: policy.config.clone(),
        grid: ActionGridInfo::current(),
        tensors: policy
            .params
            .names()
            .iter()
            .zip(policy.params.tensors())
            .map(|(name, t)| TensorEntry {
                name: name.clone(),
                shape: [t.rows, t.cols],
            })
            .collect(),
        meta,
    };
    let json = serde_json::to_vec(&manifest)?;
    let mut out = Vec::with_capacity(20 + json.len() + 4 * policy.params.n_scalars());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for t in policy.params.tensors() {
        for &x in &t.data {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<(Policy, Manifest)> {
    let mut r = bytes;
    let mut magic = [0u8; 8];
    read(&mut r, &mut magic)?;
    if &magic != MAGIC {
        return Err(PolicyError::Checkpoint("bad magic".into()));
    }
    let mut word = [0u8; 4];
    read(&mut r, &mut word)?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(PolicyError::Checkpoint(format!(
            "unsupported version {version}"
        )));
    }
    let mut len = [0u8; 8];
    read(&mut r, &mut len)?;
    let len = usize::try_from(u64::from_le_bytes(len))
        .map_err(|_| PolicyError::Checkpoint("manifest too large".into()))?;
    if len > r.len() {
        return Err(PolicyError::Checkpoint("truncated manifest".into()));
    }
    let manifest: Manifest = serde_json::from_slice(&r[..len])?;
    r = &r[len..];
    if manifest.grid != ActionGridInfo::current() {
        return Err(PolicyError::Checkpoint(format!(
            "action grid {:?} differs from {:?}",
            manifest.grid,
            ActionGridInfo::current()
        )));
    }

    // Initial values are overwritten below; the seed is irrelevant.
    let mut policy = Policy::new(manifest.config.clone(), &mut ChaCha8Rng::seed_from_u64(0))?;
    if manifest.tensors.len() != policy.params.len() {
        return Err(PolicyError::Checkpoint(format!(
            "expected {} tensors, manifest lists {}",
            policy.params.len(),
            manifest.tensors.len()
        )));
    }
    for (id, entry) in manifest.tensors.iter().enumerate() {
        let expected_name = &policy.params.names()[id];
        if &entry.name != expected_name {
            return Err(PolicyError::Checkpoint(format!(
                "tensor {id} is {:?}, expected {expected_name:?}",
                entry.name
            )));
        }
        let t = policy.params.get_mut(id);
        let found = (entry.shape[0], entry.shape[1]);
        if found != t.shape() {
            return Err(PolicyError::Shape {
                name: entry.name.clone(),
                expected: t.shape(),
                found,
            });
        }
        for x in t.data.iter_mut() {
            read(&mut r, &mut word)?;
            *x = f32::from_le_bytes(word) as f64;
        }
    }
    if !r.is_empty() {
        return Err(PolicyError::Checkpoint(format!(
            "{} trailing bytes",
            r.len()
        )));
    }
    if !policy.params.is_finite() {
        return Err(PolicyError::NonFinite("checkpoint parameters"));
    }
    Ok((policy, manifest))
}

fn read(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| PolicyError::Checkpoint("unexpected end of data".into()))
}

pub fn save(
    policy: &Policy,
    meta: serde_json::Map<String, serde_json::Value>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let bytes = to_bytes(policy, meta)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<(Policy, Manifest)> {
    from_bytes(&fs::read(path)?)
}

/// Round every parameter through `f32`, so an in-memory policy matches what
/// a checkpoint reload produces.
pub fn quantize(policy: &mut Policy) {
    for t in policy.params.tensors_mut() {
        for x in t.data.iter_mut() {
            *x = *x as f32 as f64;
        }
    }
}
