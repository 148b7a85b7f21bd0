//! Checkpoint files: a little-endian f64 blob holding every network's
//! parameters and BatchNorm buffers, plus a JSON manifest next to it
//! (`<blob>.json`).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::Sequential;

pub const FORMAT: &str = "terrain-embed-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkEntry {
    pub name: String,
    pub values: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub kind: ModelKind,
    pub arch_version: String,
    pub k: usize,
    pub scales: Vec<f64>,
    pub seed: u64,
    pub normalization: String,
    pub training_step: usize,
    /// Head names of a supervised model, in output order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub classes: Vec<String>,
    pub networks: Vec<NetworkEntry>,
    pub blob_sha256: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Encoder/decoder/discriminator trained on the reconstruction pretext task.
    Autoencoder,
    /// Supervised CNN baseline.
    Cnn,
}

pub fn manifest_path(blob: &Path) -> PathBuf {
    let mut s = blob.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Write `networks` in order; fills `networks` and `blob_sha256` of `manifest`.
pub fn save(path: &Path, mut manifest: Manifest, networks: &[(&str, &Sequential)]) -> Result<Manifest> {
    let mut blob = Vec::new();
    manifest.networks.clear();
    for (name, net) in networks {
        let mut count = 0;
        for t in net.state() {
            for v in t.iter() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
            count += t.len();
        }
        manifest.networks.push(NetworkEntry { name: name.to_string(), values: count });
    }
    manifest.format = FORMAT.to_string();
    manifest.blob_sha256 = hex::encode(Sha256::digest(&blob));
    write_atomic(path, &blob)?;
    write_atomic(&manifest_path(path), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(manifest)
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(manifest_path(path))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.format != FORMAT {
        return Err(Error::Checkpoint {
            path: path.to_owned(),
            message: format!("unknown format `{}`", manifest.format),
        });
    }
    Ok(manifest)
}

/// Fill `networks` (already built with the manifest's architecture) from the
/// blob, verifying its hash and per-network sizes.
pub fn load_into(path: &Path, manifest: &Manifest, networks: &mut [(&str, &mut Sequential)]) -> Result<()> {
    let fail = |message: String| Error::Checkpoint { path: path.to_owned(), message };
    let blob = fs::read(path)?;
    if hex::encode(Sha256::digest(&blob)) != manifest.blob_sha256 {
        return Err(fail("blob hash does not match manifest".into()));
    }
    if blob.len() % 8 != 0 {
        return Err(fail("blob length is not a multiple of 8".into()));
    }
    let mut values = blob.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    if networks.len() != manifest.networks.len() {
        return Err(fail("network count mismatch".into()));
    }
    for ((name, net), entry) in networks.iter_mut().zip(&manifest.networks) {
        if *name != entry.name {
            return Err(fail(format!("expected network `{}`, found `{name}`", entry.name)));
        }
        let mut count = 0;
        for t in net.state_mut() {
            for slot in t.iter_mut() {
                *slot = values.next().ok_or_else(|| fail("blob truncated".into()))?;
            }
            count += t.len();
        }
        if count != entry.values {
            return Err(fail(format!(
                "network `{name}` holds {count} values but manifest records {}",
                entry.values
            )));
        }
    }
    if values.next().is_some() {
        return Err(fail("blob has trailing values".into()));
    }
    Ok(())
}

/// Write via a temporary sibling and rename, so readers never see a torn file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}
