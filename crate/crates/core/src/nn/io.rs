//! Model file: magic, version, JSON manifest, then a little-endian `f32`
//! blob whose named sections the manifest lists.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamState, Architecture, LocalizerModel, Network, TrainConfig};
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 8] = b"AMDNLOC\0";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BlobSection {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    architecture: Architecture,
    #[serde(rename = "I")]
    num_heads: usize,
    seed: u64,
    target_mean: [f64; 2],
    target_scale: f64,
    train_config: TrainConfig,
    optimizer_steps: Vec<u64>,
    sections: Vec<BlobSection>,
    metadata: serde_json::Value,
}

fn blob_sections(net: &Network) -> Vec<BlobSection> {
    let n = net.num_params();
    let mut out = Vec::new();
    for (prefix, base) in [("", 0), ("adam.m.", n), ("adam.v.", 2 * n)] {
        for s in net.sections() {
            out.push(BlobSection {
                name: format!("{prefix}{}", s.name),
                shape: s.shape.clone(),
                offset: base + s.offset,
                len: s.len,
            });
        }
    }
    out
}

pub fn model_to_bytes(model: &LocalizerModel) -> Result<Vec<u8>> {
    let net = model.network();
    let manifest = Manifest {
        architecture: net.architecture().clone(),
        num_heads: net.num_heads(),
        seed: model.seed,
        target_mean: model.target_mean,
        target_scale: model.target_scale,
        train_config: model.train_config.clone(),
        optimizer_steps: model.optimizer().steps.clone(),
        sections: blob_sections(net),
        metadata: model.metadata.clone(),
    };
    let json = serde_json::to_vec(&manifest)?;
    let mut out = Vec::with_capacity(20 + json.len() + 12 * net.num_params());
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    let opt = model.optimizer();
    for v in model.params().iter().chain(&opt.m).chain(&opt.v) {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn model_from_bytes(bytes: &[u8], origin: &Path) -> Result<LocalizerModel> {
    let truncated = |expected: usize| Error::TruncatedBinary {
        path: origin.to_path_buf(),
        expected: expected as u64,
        found: bytes.len() as u64,
    };
    if bytes.len() < 20 {
        return Err(truncated(20));
    }
    if &bytes[..8] != MODEL_MAGIC {
        return Err(Error::MalformedManifest("not a model file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != MODEL_VERSION {
        return Err(Error::MalformedManifest(format!("unsupported model version {version}")));
    }
    let json_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let json_end = 20usize.checked_add(json_len).ok_or_else(|| truncated(usize::MAX))?;
    if bytes.len() < json_end {
        return Err(truncated(json_end));
    }
    let manifest: Manifest = serde_json::from_slice(&bytes[20..json_end])
        .map_err(|e| Error::MalformedManifest(format!("model manifest: {e}")))?;
    let mut model = LocalizerModel::new(&manifest.architecture, manifest.seed, manifest.train_config.clone())
        .map_err(|e| Error::MalformedManifest(format!("model architecture: {e}")))?;
    let n = model.network().num_params();
    if manifest.num_heads != model.num_heads() || manifest.sections != blob_sections(model.network()) {
        return Err(Error::MalformedManifest("section table does not match the architecture".into()));
    }
    if manifest.optimizer_steps.len() != model.network().sections().len() {
        return Err(Error::MalformedManifest("optimizer step table has the wrong length".into()));
    }
    let expected = json_end + 12 * n;
    if bytes.len() != expected {
        return Err(truncated(expected));
    }
    let floats: Vec<f64> = bytes[json_end..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    if floats.iter().any(|v| !v.is_finite()) {
        return Err(Error::MalformedManifest("non-finite weight".into()));
    }
    model.params_mut().copy_from_slice(&floats[..n]);
    model.set_optimizer(AdamState {
        m: floats[n..2 * n].to_vec(),
        v: floats[2 * n..].to_vec(),
        steps: manifest.optimizer_steps,
    });
    model.target_mean = manifest.target_mean;
    model.target_scale = manifest.target_scale;
    model.metadata = manifest.metadata;
    Ok(model)
}

pub fn save_model(model: &LocalizerModel, path: &Path) -> Result<()> {
    std::fs::write(path, model_to_bytes(model)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<LocalizerModel> {
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    model_from_bytes(&bytes, path)
}
