//! Checkpoint persistence: a JSON manifest describing named tensors plus a
//! raw little-endian f32 blob. Parameters are f64 in memory; the cast to f32
//! on save makes save → load → save byte-identical.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EncoderParams, ModelConfig};
use crate::numerics::Tensor;
use crate::training::ProbeParams;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset of this tensor's values within the blob.
    pub offset: usize,
    /// Byte length within the blob (4 bytes per value).
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tensors: Vec<TensorEntry>,
    pub config: ModelConfig,
    pub format_version: u32,
    /// Hash of the run configuration that produced this checkpoint; empty
    /// when saved outside a configured run.
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub fingerprint: String,
}

/// Writes named tensors as manifest + blob. Tensors are laid out in the
/// given order, packed back to back.
pub fn save_tensors(
    named: &[(String, &Tensor)],
    config: &ModelConfig,
    fingerprint: &str,
    manifest_path: &Path,
    blob_path: &Path,
) -> Result<()> {
    let mut entries = Vec::with_capacity(named.len());
    let mut blob: Vec<u8> = Vec::new();
    for (name, tensor) in named {
        let offset = blob.len();
        for &v in tensor.data() {
            blob.extend_from_slice(&(v as f32).to_le_bytes());
        }
        entries.push(TensorEntry {
            name: name.clone(),
            shape: tensor.shape().to_vec(),
            offset,
            len: blob.len() - offset,
        });
    }
    let manifest = Manifest {
        tensors: entries,
        config: config.clone(),
        format_version: FORMAT_VERSION,
        fingerprint: fingerprint.to_string(),
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Checkpoint(format!("manifest encode: {e}")))?;
    fs::write(manifest_path, json)
        .map_err(|e| Error::Checkpoint(format!("write {}: {e}", manifest_path.display())))?;
    fs::write(blob_path, blob)
        .map_err(|e| Error::Checkpoint(format!("write {}: {e}", blob_path.display())))?;
    Ok(())
}

/// Reads a manifest + blob pair back into named tensors, checking that the
/// entries tile the blob exactly and every shape matches its byte length.
pub fn load_tensors(
    manifest_path: &Path,
    blob_path: &Path,
) -> Result<(Manifest, Vec<(String, Tensor)>)> {
    let json = fs::read_to_string(manifest_path)
        .map_err(|e| Error::Checkpoint(format!("read {}: {e}", manifest_path.display())))?;
    let manifest: Manifest = serde_json::from_str(&json)
        .map_err(|e| Error::Checkpoint(format!("manifest decode: {e}")))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format_version {}",
            manifest.format_version
        )));
    }
    let blob = fs::read(blob_path)
        .map_err(|e| Error::Checkpoint(format!("read {}: {e}", blob_path.display())))?;

    let mut expected_offset = 0usize;
    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    for entry in &manifest.tensors {
        if entry.offset != expected_offset {
            return Err(Error::Checkpoint(format!(
                "tensor {} starts at byte {}, expected {}",
                entry.name, entry.offset, expected_offset
            )));
        }
        let count: usize = entry.shape.iter().product();
        if entry.len != count * 4 {
            return Err(Error::Checkpoint(format!(
                "tensor {} shape {:?} wants {} bytes, manifest says {}",
                entry.name,
                entry.shape,
                count * 4,
                entry.len
            )));
        }
        let end = entry.offset + entry.len;
        if end > blob.len() {
            return Err(Error::Checkpoint(format!(
                "tensor {} runs past the blob ({} > {})",
                entry.name,
                end,
                blob.len()
            )));
        }
        let values: Vec<f64> = blob[entry.offset..end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        if entry.shape.len() != 2 {
            return Err(Error::Checkpoint(format!(
                "tensor {} has rank {}, expected 2",
                entry.name,
                entry.shape.len()
            )));
        }
        tensors.push((entry.name.clone(), Tensor::matrix(entry.shape[0], entry.shape[1], values)?));
        expected_offset = end;
    }
    if expected_offset != blob.len() {
        return Err(Error::Checkpoint(format!(
            "blob has {} trailing bytes after the last tensor",
            blob.len() - expected_offset
        )));
    }
    Ok((manifest, tensors))
}

/// Saves an encoder, dropping the contrastive projection head: downstream
/// consumers only ever see the representation.
pub fn save_encoder(
    params: &EncoderParams,
    fingerprint: &str,
    manifest_path: &Path,
    blob_path: &Path,
) -> Result<()> {
    let stripped;
    let to_save = if params.projection.is_some() {
        let mut p = params.clone();
        p.projection = None;
        p.config.with_projection_head = false;
        stripped = p;
        &stripped
    } else {
        params
    };
    let named: Vec<(String, &Tensor)> = to_save.flatten();
    save_tensors(&named, &to_save.config, fingerprint, manifest_path, blob_path)
}

/// Loads an encoder checkpoint, rebuilding parameters from the manifest
/// config and filling every tensor from the blob. Missing, extra, or
/// misshapen tensors are rejected.
pub fn load_encoder(manifest_path: &Path, blob_path: &Path) -> Result<EncoderParams> {
    let (manifest, tensors) = load_tensors(manifest_path, blob_path)?;
    let mut params = EncoderParams::init(&manifest.config, 0)?;
    fill_from(&mut params.flatten_mut(), tensors)?;
    Ok(params)
}

fn fill_from(
    slots: &mut [(String, &mut Tensor)],
    tensors: Vec<(String, Tensor)>,
) -> Result<()> {
    if slots.len() != tensors.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {} tensors, the config wants {}",
            tensors.len(),
            slots.len()
        )));
    }
    for ((slot_name, slot), (name, tensor)) in slots.iter_mut().zip(tensors) {
        if *slot_name != name {
            return Err(Error::Checkpoint(format!(
                "tensor order mismatch: found {name}, expected {slot_name}"
            )));
        }
        if slot.shape() != tensor.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor {name} has shape {:?}, the config wants {:?}",
                tensor.shape(),
                slot.shape()
            )));
        }
        **slot = tensor;
    }
    Ok(())
}

/// Saves probe weights alongside the encoder config they were trained on.
pub fn save_probe(
    probe: &ProbeParams,
    encoder_config: &ModelConfig,
    fingerprint: &str,
    manifest_path: &Path,
    blob_path: &Path,
) -> Result<()> {
    let named: Vec<(String, &Tensor)> = vec![
        ("probe.weight".into(), &probe.weight),
        ("probe.bias".into(), &probe.bias),
    ];
    save_tensors(&named, encoder_config, fingerprint, manifest_path, blob_path)
}

pub fn load_probe(manifest_path: &Path, blob_path: &Path) -> Result<(ProbeParams, ModelConfig)> {
    let (manifest, mut tensors) = load_tensors(manifest_path, blob_path)?;
    if tensors.len() != 2 || tensors[0].0 != "probe.weight" || tensors[1].0 != "probe.bias" {
        return Err(Error::Checkpoint("not a probe checkpoint".into()));
    }
    let bias = tensors.pop().unwrap().1;
    let weight = tensors.pop().unwrap().1;
    Ok((ProbeParams { weight, bias }, manifest.config))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp_dir(tag: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("ckpt-test-{tag}-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    fn small_params(seed: u64) -> EncoderParams {
        let mut cfg = ModelConfig::for_vocab(12);
        cfg.dim = 8;
        cfg.heads = 2;
        cfg.depth = 1;
        cfg.ffn_mult = 2;
        cfg.max_sessions = 8;
        EncoderParams::init(&cfg, seed).unwrap()
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tmp_dir("roundtrip");
        let params = small_params(3);
        let m1 = dir.join("a.manifest.json");
        let b1 = dir.join("a.blob");
        save_encoder(&params, "fp1", &m1, &b1).unwrap();
        let loaded = load_encoder(&m1, &b1).unwrap();
        let m2 = dir.join("b.manifest.json");
        let b2 = dir.join("b.blob");
        save_encoder(&loaded, "fp1", &m2, &b2).unwrap();
        assert_eq!(fs::read(&m1).unwrap(), fs::read(&m2).unwrap());
        assert_eq!(fs::read(&b1).unwrap(), fs::read(&b2).unwrap());
    }

    #[test]
    fn manifest_offsets_tile_the_blob_exactly() {
        let dir = tmp_dir("tiling");
        let params = small_params(4);
        let m = dir.join("m.json");
        let b = dir.join("b.blob");
        save_encoder(&params, "", &m, &b).unwrap();
        let manifest: Manifest =
            serde_json::from_str(&fs::read_to_string(&m).unwrap()).unwrap();
        assert_eq!(manifest.format_version, 1);
        let mut expected = 0;
        for entry in &manifest.tensors {
            assert_eq!(entry.offset, expected, "{}", entry.name);
            assert_eq!(entry.len, entry.shape.iter().product::<usize>() * 4);
            expected += entry.len;
        }
        assert_eq!(expected, fs::read(&b).unwrap().len());
    }

    #[test]
    fn projection_head_never_reaches_disk() {
        let dir = tmp_dir("strip");
        let params = small_params(5);
        assert!(params.projection.is_some());
        let m = dir.join("m.json");
        let b = dir.join("b.blob");
        save_encoder(&params, "", &m, &b).unwrap();
        let manifest: Manifest =
            serde_json::from_str(&fs::read_to_string(&m).unwrap()).unwrap();
        assert!(manifest.tensors.iter().all(|t| !t.name.starts_with("projection.")));
        assert!(!manifest.config.with_projection_head);
        let loaded = load_encoder(&m, &b).unwrap();
        assert!(loaded.projection.is_none());
    }

    #[test]
    fn loaded_representation_matches_f32_rounded_params() {
        let dir = tmp_dir("quantize");
        let mut params = small_params(6);
        let m = dir.join("m.json");
        let b = dir.join("b.blob");
        save_encoder(&params, "", &m, &b).unwrap();
        let loaded = load_encoder(&m, &b).unwrap();
        params.projection = None;
        params.config.with_projection_head = false;
        for ((name_a, a), (_, b)) in params.flatten().iter().zip(loaded.flatten()) {
            for (&x, &y) in a.data().iter().zip(b.data()) {
                assert_eq!(x as f32 as f64, y, "{name_a}");
            }
        }
    }

    #[test]
    fn corrupted_blob_length_is_rejected() {
        let dir = tmp_dir("corrupt");
        let params = small_params(7);
        let m = dir.join("m.json");
        let b = dir.join("b.blob");
        save_encoder(&params, "", &m, &b).unwrap();
        let mut blob = fs::read(&b).unwrap();
        blob.extend_from_slice(&[0, 0, 0, 0]);
        fs::write(&b, blob).unwrap();
        assert!(load_encoder(&m, &b).is_err());
    }

    #[test]
    fn config_shape_mismatch_is_rejected() {
        let dir = tmp_dir("mismatch");
        let params = small_params(8);
        let m = dir.join("m.json");
        let b = dir.join("b.blob");
        save_encoder(&params, "", &m, &b).unwrap();
        let mut manifest: Manifest =
            serde_json::from_str(&fs::read_to_string(&m).unwrap()).unwrap();
        manifest.config.dim = 16;
        fs::write(&m, serde_json::to_string(&manifest).unwrap()).unwrap();
        assert!(load_encoder(&m, &b).is_err());
    }

    #[test]
    fn probe_round_trip_preserves_f32_values() {
        let dir = tmp_dir("probe");
        let probe = ProbeParams {
            weight: Tensor::matrix(3, 2, vec![0.1, -0.2, 0.3, 0.4, -0.5, 0.6]).unwrap(),
            bias: Tensor::matrix(1, 2, vec![0.05, -0.05]).unwrap(),
        };
        let cfg = ModelConfig::for_vocab(12);
        let m = dir.join("m.json");
        let b = dir.join("b.blob");
        save_probe(&probe, &cfg, "fp2", &m, &b).unwrap();
        let (loaded, loaded_cfg) = load_probe(&m, &b).unwrap();
        assert_eq!(loaded_cfg, cfg);
        assert_eq!(loaded.weight.shape(), probe.weight.shape());
        for (&x, &y) in probe.weight.data().iter().zip(loaded.weight.data()) {
            assert_eq!(x as f32 as f64, y);
        }
    }
}
