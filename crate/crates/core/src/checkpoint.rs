//! Checkpoints: one tagged binary file holding a JSON header (model kind,
//! configs, normalization, phone table, run-config echo) followed by
//! named parameter blobs with shapes.

use crate::array::Array;
use crate::audio_net::{AudioNetConfig, VectorFieldModel};
use crate::duration::{DurationModel, DurationNetConfig};
use crate::error::{Error, Result};
use crate::nn::ParamSet;
use crate::rng::Rng;
use crate::seq::PhoneTable;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8] = b"FLOWFILLCKPT1\n";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    Audio { config: AudioNetConfig },
    Duration { config: DurationNetConfig },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model: ModelKind,
    pub phone_table: PhoneTable,
    pub norm_mean: f64,
    pub norm_std: f64,
    pub sigma_min: f64,
    pub frame_rate_hz: f64,
    pub trained_steps: usize,
    pub config: serde_json::Value,
}

pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: Vec<(String, Array)>,
}

fn write_u32(out: &mut impl Write, v: u32) -> Result<()> {
    out.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32(input: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    input.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

pub fn save_checkpoint(
    path: &Path,
    header: &CheckpointHeader,
    params: &ParamSet,
) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let file = std::fs::File::create(path)?;
    let mut out = std::io::BufWriter::new(file);
    out.write_all(CHECKPOINT_MAGIC)?;
    let header_json = serde_json::to_vec(header)?;
    write_u32(&mut out, header_json.len() as u32)?;
    out.write_all(&header_json)?;
    write_u32(&mut out, params.len() as u32)?;
    for (name, array) in params.iter() {
        let name_bytes = name.as_bytes();
        write_u32(&mut out, name_bytes.len() as u32)?;
        out.write_all(name_bytes)?;
        write_u32(&mut out, array.shape().len() as u32)?;
        for &dim in array.shape() {
            write_u32(&mut out, dim as u32)?;
        }
        for &v in array.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = std::fs::File::open(path)?;
    let mut input = std::io::BufReader::new(file);
    let fmt = |msg: &str| Error::Format {
        path: path.display().to_string(),
        msg: msg.to_string(),
    };
    let mut magic = vec![0u8; CHECKPOINT_MAGIC.len()];
    input.read_exact(&mut magic)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(fmt("bad checkpoint magic"));
    }
    let header_len = read_u32(&mut input)? as usize;
    let mut header_json = vec![0u8; header_len];
    input.read_exact(&mut header_json)?;
    let header: CheckpointHeader = serde_json::from_slice(&header_json)?;
    let n_params = read_u32(&mut input)? as usize;
    let mut params = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        let name_len = read_u32(&mut input)? as usize;
        let mut name = vec![0u8; name_len];
        input.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| fmt("non-utf8 parameter name"))?;
        let ndim = read_u32(&mut input)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u32(&mut input)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = vec![0.0f64; numel];
        let mut buf = [0u8; 8];
        for slot in data.iter_mut() {
            input.read_exact(&mut buf)?;
            *slot = f64::from_le_bytes(buf);
        }
        params.push((name, Array::new(shape, data)?));
    }
    Ok(Checkpoint { header, params })
}

fn restore_params(set: &mut ParamSet, loaded: &[(String, Array)], path: &Path) -> Result<()> {
    if set.len() != loaded.len() {
        return Err(Error::Format {
            path: path.display().to_string(),
            msg: format!(
                "checkpoint has {} parameters, model expects {}",
                loaded.len(),
                set.len()
            ),
        });
    }
    for (i, (name, array)) in loaded.iter().enumerate() {
        if set.name_at(i) != name || set.at(i).shape() != array.shape() {
            return Err(Error::Format {
                path: path.display().to_string(),
                msg: format!(
                    "parameter {i} mismatch: {} {:?} vs {} {:?}",
                    name,
                    array.shape(),
                    set.name_at(i),
                    set.at(i).shape()
                ),
            });
        }
        *set.at_mut(i) = array.clone();
    }
    Ok(())
}

/// Rebuild an audio model from a checkpoint.
pub fn audio_model_from(checkpoint: &Checkpoint, path: &Path) -> Result<VectorFieldModel> {
    let ModelKind::Audio { config } = &checkpoint.header.model else {
        return Err(Error::Format {
            path: path.display().to_string(),
            msg: "checkpoint holds a duration model, expected audio".into(),
        });
    };
    let mut model = VectorFieldModel::new(*config, &mut Rng::new(0))?;
    restore_params(&mut model.params, &checkpoint.params, path)?;
    Ok(model)
}

/// Rebuild a duration model from a checkpoint.
pub fn duration_model_from(checkpoint: &Checkpoint, path: &Path) -> Result<DurationModel> {
    let ModelKind::Duration { config } = &checkpoint.header.model else {
        return Err(Error::Format {
            path: path.display().to_string(),
            msg: "checkpoint holds an audio model, expected duration".into(),
        });
    };
    let mut model = DurationModel::new(*config, &mut Rng::new(0))?;
    restore_params(&mut model.params, &checkpoint.params, path)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn audio_checkpoint_roundtrip_bitwise() {
        let mut rng = Rng::new(31);
        let config = AudioNetConfig {
            feature_dim: 3,
            vocab: 10,
            phone_embed_dim: 4,
            model_dim: 16,
            layers: 2,
            heads: 2,
            ffn_width: 24,
            use_skip_connections: true,
            use_alibi_bias: false,
        };
        let model = VectorFieldModel::new(config, &mut rng).unwrap();
        let table = PhoneTable::with_letters(2).unwrap();
        let header = CheckpointHeader {
            model: ModelKind::Audio { config },
            phone_table: table,
            norm_mean: -0.2,
            norm_std: 1.4,
            sigma_min: 1e-5,
            frame_rate_hz: 100.0,
            trained_steps: 123,
            config: serde_json::json!({"run": true}),
        };
        let dir = std::env::temp_dir().join("flowfill-ckpt-test");
        let path = dir.join("model.ffck");
        save_checkpoint(&path, &header, &model.params).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        let restored = audio_model_from(&loaded, &path).unwrap();
        for (i, (name, array)) in loaded.params.iter().enumerate() {
            assert_eq!(model.params.name_at(i), name);
            for (a, b) in model.params.at(i).data().iter().zip(array.data()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
        // The restored model computes identically.
        let x = Array::new(vec![2, 3], rng.gaussian_vec(6)).unwrap();
        let ctx = Array::zeros(&[2, 3]);
        let a = model.eval_field(&x, &ctx, &[1, 2], 0.5).unwrap();
        let b = restored.eval_field(&x, &ctx, &[1, 2], 0.5).unwrap();
        assert_eq!(a.data(), b.data());
        assert!(loaded.header.trained_steps == 123);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn kind_mismatch_rejected() {
        let mut rng = Rng::new(32);
        let config = DurationNetConfig {
            vocab: 10,
            phone_embed_dim: 4,
            model_dim: 16,
            layers: 2,
            heads: 2,
            ffn_width: 24,
            use_skip_connections: true,
            mode: crate::duration::DurationMode::Regression,
            use_context: true,
        };
        let model = DurationModel::new(config, &mut rng).unwrap();
        let header = CheckpointHeader {
            model: ModelKind::Duration { config },
            phone_table: PhoneTable::with_letters(2).unwrap(),
            norm_mean: 0.0,
            norm_std: 1.0,
            sigma_min: 1e-5,
            frame_rate_hz: 100.0,
            trained_steps: 1,
            config: serde_json::Value::Null,
        };
        let dir = std::env::temp_dir().join("flowfill-ckpt-kind");
        let path = dir.join("dur.ffck");
        save_checkpoint(&path, &header, &model.params).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert!(audio_model_from(&loaded, &path).is_err());
        assert!(duration_model_from(&loaded, &path).is_ok());
        std::fs::remove_dir_all(&dir).ok();
    }
}
