//! Model checkpoints: a binary tensor blob plus a JSON sidecar.
//!
//! Blob layout (little endian): magic `GZSQCKP1`, `u32` entry count, then per
//! entry `u32` name length, name bytes, `u8` kind (0 parameter, 1 buffer),
//! `u32` rank, `u64` dims, `f32` values.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{GazeModel, ModelConfig, ModelKind, ModelVariant};
use crate::nn::Module;

pub const BLOB_FILE: &str = "checkpoint.bin";
pub const SIDECAR_FILE: &str = "checkpoint.json";
const MAGIC: &[u8; 8] = b"GZSQCKP1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub variant: ModelKind,
    pub window: usize,
    /// 1-based epoch the weights come from
    pub epoch: usize,
    pub val_mae_mean_deg: f64,
    pub seed: u64,
    pub param_count: usize,
    pub stage: u8,
    pub dataset_seed: u64,
    pub dataset_manifest_sha256: String,
    /// pixel scaling applied before the network
    pub input_normalization: String,
    pub stop_reason: String,
    pub epochs_run: usize,
    pub model: ModelConfig,
}

impl CheckpointMeta {
    pub fn model_variant(&self) -> Result<ModelVariant> {
        let v = ModelVariant {
            kind: self.variant,
            window: self.window,
        };
        v.validate()?;
        Ok(v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub dims: Vec<usize>,
    pub buffer: bool,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub tensors: Vec<TensorEntry>,
}

pub fn model_tensors(model: &GazeModel<f32>) -> Vec<TensorEntry> {
    let mut out = Vec::new();
    model.visit_params(&mut |p| {
        out.push(TensorEntry {
            name: p.name.clone(),
            dims: p.dims.clone(),
            buffer: false,
            data: p.value.clone(),
        })
    });
    model.visit_buffers(&mut |name, v| {
        out.push(TensorEntry {
            name: name.to_string(),
            dims: vec![v.len()],
            buffer: true,
            data: v.clone(),
        })
    });
    out
}

impl Checkpoint {
    pub fn from_model(model: &GazeModel<f32>, meta: CheckpointMeta) -> Self {
        Self {
            meta,
            tensors: model_tensors(model),
        }
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().filter(|t| !t.buffer).map(|t| t.data.len()).sum()
    }

    /// Rebuilds the model described by the sidecar.
    pub fn to_model(&self) -> Result<GazeModel<f32>> {
        let mut model = GazeModel::new(self.meta.model_variant()?, self.meta.model.clone())?;
        load_tensors(&mut model, &self.tensors, "")?;
        Ok(model)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        if self.meta.param_count != self.param_count() {
            return Err(Error::Data("sidecar parameter count disagrees with the blob".into()));
        }
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let blob = dir.join(BLOB_FILE);
        fs::write(&blob, encode(&self.tensors)).map_err(|e| Error::io(&blob, e))?;
        let side = dir.join(SIDECAR_FILE);
        fs::write(&side, serde_json::to_string_pretty(&self.meta)? + "\n").map_err(|e| Error::io(&side, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let side = dir.join(SIDECAR_FILE);
        let meta: CheckpointMeta =
            serde_json::from_str(&fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?)?;
        let blob = dir.join(BLOB_FILE);
        let tensors = decode(&fs::read(&blob).map_err(|e| Error::io(&blob, e))?)?;
        let ck = Self { meta, tensors };
        if ck.meta.param_count != ck.param_count() {
            return Err(Error::Data(format!(
                "{}: sidecar says {} parameters, blob holds {}",
                dir.display(),
                ck.meta.param_count,
                ck.param_count()
            )));
        }
        Ok(ck)
    }
}

/// Copies tensors whose names start with `prefix` into `model`.
pub fn load_tensors(model: &mut GazeModel<f32>, tensors: &[TensorEntry], prefix: &str) -> Result<usize> {
    let entries: Vec<_> = tensors.iter().map(|t| (t.name.clone(), t.dims.clone(), t.data.clone())).collect();
    model.load_state(&entries, prefix)
}

fn encode(tensors: &[TensorEntry]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.push(u8::from(t.buffer));
        out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
        for d in &t.dims {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Data("truncated checkpoint blob".into()))?;
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

fn decode(bytes: &[u8]) -> Result<Vec<TensorEntry>> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(8)? != MAGIC {
        return Err(Error::Data("not a checkpoint blob".into()));
    }
    let n = c.u32()? as usize;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let len = c.u32()? as usize;
        let name = String::from_utf8(c.take(len)?.to_vec()).map_err(|_| Error::Data("bad tensor name".into()))?;
        let buffer = match c.take(1)?[0] {
            0 => false,
            1 => true,
            k => return Err(Error::Data(format!("bad tensor kind {k}"))),
        };
        let rank = c.u32()? as usize;
        let dims = (0..rank).map(|_| c.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel: usize = dims.iter().product();
        let data = c
            .take(numel * 4)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        out.push(TensorEntry { name, dims, buffer, data });
    }
    if c.pos != bytes.len() {
        return Err(Error::Data("trailing bytes in checkpoint blob".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::init_parameters;

    fn meta(model: &GazeModel<f32>) -> CheckpointMeta {
        CheckpointMeta {
            variant: model.variant.kind,
            window: model.variant.window,
            epoch: 3,
            val_mae_mean_deg: 1.25,
            seed: 9,
            param_count: model.param_count(),
            stage: 2,
            dataset_seed: 7,
            dataset_manifest_sha256: String::new(),
            input_normalization: "unit_interval".into(),
            stop_reason: "max_epochs".into(),
            epochs_run: 3,
            model: model.config.clone(),
        }
    }

    #[test]
    fn round_trip() {
        let model = init_parameters::<f32>(ModelVariant::temporal(5).unwrap(), &ModelConfig::default(), 4).unwrap();
        let ck = Checkpoint::from_model(&model, meta(&model));
        let dir = tempfile::tempdir().unwrap();
        ck.save(dir.path()).unwrap();
        let back = Checkpoint::load(dir.path()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_model().unwrap().state(), model.state());
        let json: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join(SIDECAR_FILE)).unwrap()).unwrap();
        for key in ["variant", "window", "epoch", "val_mae_mean_deg", "seed", "param_count"] {
            assert!(json.get(key).is_some(), "{key}");
        }
        assert_eq!(json["variant"], "S1_LSTM");
        assert_eq!(json["param_count"], model.param_count());
    }

    #[test]
    fn mismatched_count_is_rejected() {
        let model = init_parameters::<f32>(ModelVariant::STATIC1, &ModelConfig::default(), 4).unwrap();
        let mut m = meta(&model);
        m.param_count += 1;
        let dir = tempfile::tempdir().unwrap();
        assert!(Checkpoint::from_model(&model, m.clone()).save(dir.path()).is_err());
        m.param_count -= 1;
        Checkpoint::from_model(&model, m).save(dir.path()).unwrap();
        let side = dir.path().join(SIDECAR_FILE);
        let text = fs::read_to_string(&side).unwrap().replace("\"param_count\": ", "\"param_count\": 1");
        fs::write(&side, text).unwrap();
        assert!(Checkpoint::load(dir.path()).is_err());
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let model = init_parameters::<f32>(ModelVariant::STATIC1, &ModelConfig::default(), 4).unwrap();
        let bytes = encode(&model_tensors(&model));
        assert!(decode(&bytes[..bytes.len() - 3]).is_err());
        assert!(decode(b"nonsense").is_err());
    }
}
