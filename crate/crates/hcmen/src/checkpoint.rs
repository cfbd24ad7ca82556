//! Checkpoint file format:
//!
//! ```text
//! bytes 0..8    magic "HCMENCK1"
//! bytes 8..12   u32 little-endian length of the JSON header
//! ...           UTF-8 JSON header {version, config, tensors}
//! ...           payload: little-endian f32 values, tensors concatenated in
//!               header (lexicographic) order
//! ```
//!
//! `tensors` maps each parameter name to `{shape, offset, len}` with `offset`
//! and `len` counted in f32 elements of the payload. Loading verifies the
//! magic, version, payload size, and that every tensor matches the shape the
//! config implies, so a round trip is bit-exact or fails loudly.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use hcmen_core::{HcmenModel, ModelConfig, ParamStore, Tensor};

use crate::{HcmenError, Result};

pub const MAGIC: &[u8; 8] = b"HCMENCK1";
pub const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    config: ModelConfig,
    tensors: BTreeMap<String, TensorMeta>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorMeta {
    shape: Vec<usize>,
    /// Element offset into the f32 payload.
    offset: u64,
    /// Element count.
    len: u64,
}

/// Serializes the parameter store with its configuration.
pub fn save(path: &Path, config: &ModelConfig, params: &ParamStore<f32>) -> Result<()> {
    let mut tensors = BTreeMap::new();
    let mut offset = 0u64;
    for (name, tensor) in params.iter() {
        let len = tensor.numel() as u64;
        tensors.insert(
            name.clone(),
            TensorMeta { shape: tensor.shape().to_vec(), offset, len },
        );
        offset += len;
    }
    let header = Header { version: VERSION, config: config.clone(), tensors };
    let header_json = serde_json::to_vec(&header)?;

    let mut buf = Vec::with_capacity(12 + header_json.len() + 4 * offset as usize);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header_json);
    for (_, tensor) in params.iter() {
        for v in tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = fs::File::create(path).map_err(|e| HcmenError::io(path, e))?;
    file.write_all(&buf).map_err(|e| HcmenError::io(path, e))
}

/// Loads and fully validates a checkpoint.
pub fn load(path: &Path) -> Result<(ModelConfig, ParamStore<f32>)> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| HcmenError::io(path, e))?;
    let fail = |msg: String| HcmenError::Format(format!("{}: {msg}", path.display()));

    if bytes.len() < 12 {
        return Err(fail("truncated: shorter than the fixed prelude".into()));
    }
    if &bytes[0..8] != MAGIC {
        return Err(fail(format!("bad magic {:?}", &bytes[0..8])));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if bytes.len() < 12 + header_len {
        return Err(fail("truncated header".into()));
    }
    let header: Header = serde_json::from_slice(&bytes[12..12 + header_len])
        .map_err(|e| fail(format!("bad header: {e}")))?;
    if header.version != VERSION {
        return Err(fail(format!(
            "version mismatch: file has {}, expected {VERSION}",
            header.version
        )));
    }

    let expected = HcmenModel::new(header.config.clone())?.param_shapes()?;
    if expected.len() != header.tensors.len() {
        return Err(fail(format!(
            "tensor table has {} entries, config implies {}",
            header.tensors.len(),
            expected.len()
        )));
    }
    let total: u64 = header.tensors.values().map(|m| m.len).sum();
    let payload = &bytes[12 + header_len..];
    if payload.len() != 4 * total as usize {
        return Err(fail(format!(
            "truncated payload: {} bytes for {} elements",
            payload.len(),
            total
        )));
    }

    let mut store = ParamStore::new();
    for (name, meta) in &header.tensors {
        let expect_shape = expected.get(name).ok_or_else(|| {
            fail(format!("unexpected tensor '{name}' for this config"))
        })?;
        if expect_shape != &meta.shape {
            return Err(fail(format!(
                "tensor '{name}': shape {:?} in file, config implies {expect_shape:?}",
                meta.shape
            )));
        }
        let numel: usize = meta.shape.iter().product();
        if numel as u64 != meta.len {
            return Err(fail(format!(
                "tensor '{name}': len {} inconsistent with shape {:?}",
                meta.len, meta.shape
            )));
        }
        let start = meta.offset as usize * 4;
        let end = start + numel * 4;
        if end > payload.len() {
            return Err(fail(format!("tensor '{name}': range outside payload")));
        }
        let data: Vec<f32> = payload[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        store.insert(name, Tensor::new(meta.shape.clone(), data)?)?;
    }
    Ok((header.config, store))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            seq_len: 4,
            dim: 8,
            state_dim: 2,
            inner_dim: 16,
            fusion_blocks: 1,
            text_dim: 3,
            vision_dim: 4,
            audio_dim: 2,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let config = tiny_config();
        let model = HcmenModel::new(config.clone()).unwrap();
        let store: ParamStore<f32> = model.init_params().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save(&path, &config, &store).unwrap();
        let (loaded_config, loaded) = load(&path).unwrap();
        assert_eq!(loaded_config, config);
        assert_eq!(loaded.len(), store.len());
        for (name, tensor) in store.iter() {
            let other = loaded.get(name).unwrap();
            assert_eq!(tensor.shape(), other.shape());
            for (a, b) in tensor.data().iter().zip(other.data()) {
                assert_eq!(a.to_bits(), b.to_bits(), "{name}");
            }
        }
    }

    #[test]
    fn file_size_is_prelude_plus_header_plus_4_bytes_per_param() {
        let config = tiny_config();
        let model = HcmenModel::new(config.clone()).unwrap();
        let store: ParamStore<f32> = model.init_params().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save(&path, &config, &store).unwrap();

        let bytes = std::fs::read(&path).unwrap();
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        assert_eq!(bytes.len(), 12 + header_len + 4 * store.total_elements());
    }

    #[test]
    fn mismatched_config_dim_fails_with_shape_diagnostic() {
        let config = tiny_config();
        let model = HcmenModel::new(config.clone()).unwrap();
        let store: ParamStore<f32> = model.init_params().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        // header claims a different D than the stored tensors have
        let lying = ModelConfig { dim: 16, inner_dim: 32, ..config };
        save(&path, &lying, &store).unwrap();
        let err = load(&path).unwrap_err().to_string();
        assert!(err.contains("shape") || err.contains("len"), "diagnostic was: {err}");
    }

    #[test]
    fn corrupted_prelude_and_truncation_rejected() {
        let config = tiny_config();
        let model = HcmenModel::new(config.clone()).unwrap();
        let store: ParamStore<f32> = model.init_params().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save(&path, &config, &store).unwrap();

        let bytes = std::fs::read(&path).unwrap();
        let bad_magic = {
            let mut b = bytes.clone();
            b[0] = b'X';
            b
        };
        let truncated = bytes[..bytes.len() - 5].to_vec();
        for (name, blob) in [("magic", bad_magic), ("trunc", truncated)] {
            let p = dir.path().join(format!("{name}.ckpt"));
            std::fs::write(&p, blob).unwrap();
            assert!(load(&p).is_err(), "{name} must fail");
        }
    }
}
