//! Model checkpoints.
//!
//! Layout (little-endian):
//!
//! ```text
//! "FMCK"  version:u32=1  header_len:u32  header: JSON
//! block_count:u32
//! block_count × { name_len:u32  name: UTF-8  len:u64  values: len × f64 }
//! ```
//!
//! The blocks are every parameter block followed by `norm.mean` and
//! `norm.std`.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cfm::CfmConfig;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::motion_data::io::{check_magic, Reader};
use crate::motion_data::{ConditionId, ConditionVocab, NormStats, PoseLayout};

use super::network::forward;
use super::params::{ParamLayout, PredictorParams};
use super::{ModelShape, PredictorConfig};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"FMCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to rebuild the network and interpret its features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub predictor: PredictorConfig,
    pub cfm: CfmConfig,
    pub feature_dim: usize,
    pub joint_count: usize,
    pub fps: f64,
    pub prompts: Vec<String>,
    /// Training configuration that produced the weights, kept for provenance.
    #[serde(default)]
    pub train: Option<serde_json::Value>,
}

impl ModelHeader {
    pub fn shape(&self) -> ModelShape {
        ModelShape {
            feature_dim: self.feature_dim,
            condition_rows: self.prompts.len() + 1,
        }
    }

    pub fn vocab(&self) -> Result<ConditionVocab> {
        ConditionVocab::new(self.prompts.clone())
    }

    pub fn pose_layout(&self) -> Result<PoseLayout> {
        let layout = PoseLayout::new(self.joint_count)?;
        if layout.feature_dim() != self.feature_dim {
            return Err(Error::Malformed(format!(
                "{} joints give {} features, header says {}",
                self.joint_count,
                layout.feature_dim(),
                self.feature_dim
            )));
        }
        Ok(layout)
    }
}

/// A trained predictor with its normalization statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub header: ModelHeader,
    pub params: PredictorParams,
    pub norm: NormStats,
}

impl Model {
    /// Network output for normalized input frames.
    pub fn predict(&self, xt: &Matrix, t: f64, condition: ConditionId) -> Result<Matrix> {
        forward(&self.params, &self.header.predictor, xt, t, condition)
    }

    pub fn null_condition(&self) -> ConditionId {
        ConditionId(self.header.prompts.len())
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_block(out: &mut Vec<u8>, name: &str, values: &[f64]) {
    put_u32(out, name.len());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_checkpoint(model: &Model) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&model.header)?;
    let layout = model.params.layout();
    let mut out = Vec::with_capacity(16 + header.len() + model.params.len() * 8 + 1024);
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    put_u32(&mut out, header.len());
    out.extend_from_slice(&header);
    put_u32(&mut out, layout.blocks().len() + 2);
    for b in layout.blocks() {
        put_block(&mut out, &b.name, model.params.block(&b.name));
    }
    put_block(&mut out, "norm.mean", &model.norm.mean);
    put_block(&mut out, "norm.std", &model.norm.std);
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader::new(bytes);
    check_magic(r.take(4.min(bytes.len()))?, CHECKPOINT_MAGIC)?;
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let header_len = r.u32()? as usize;
    let header: ModelHeader = serde_json::from_slice(r.take(header_len)?)?;
    header.predictor.validate()?;
    header.cfm.validate()?;
    let layout = ParamLayout::new(&header.predictor, &header.shape())?;

    if layout.total() > r.remaining() / 8 {
        return Err(Error::Truncated {
            expected: layout.total() * 8,
            found: r.remaining(),
        });
    }
    let count = r.u32()? as usize;
    let mut blocks: HashMap<String, Vec<f64>> = HashMap::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Malformed("block name is not UTF-8".into()))?
            .to_string();
        let len = r.u64()?;
        let bytes_len = len
            .checked_mul(8)
            .filter(|&b| b <= r.remaining() as u64)
            .ok_or_else(|| Error::Truncated {
                expected: len.saturating_mul(8) as usize,
                found: r.remaining(),
            })? as usize;
        let values: Vec<f64> = r
            .take(bytes_len)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if blocks.insert(name.clone(), values).is_some() {
            return Err(Error::Malformed(format!("duplicate block {name}")));
        }
    }
    if r.remaining() != 0 {
        return Err(Error::Malformed(format!("{} trailing bytes", r.remaining())));
    }

    let mut take = |name: &str, len: usize| -> Result<Vec<f64>> {
        let v = blocks
            .remove(name)
            .ok_or_else(|| Error::Malformed(format!("missing block {name}")))?;
        if v.len() != len {
            return Err(Error::Malformed(format!("block {name} has {} values, expected {len}", v.len())));
        }
        Ok(v)
    };
    let mut values = vec![0.0; layout.total()];
    for b in layout.blocks() {
        values[b.range()].copy_from_slice(&take(&b.name, b.len())?);
    }
    let mean = take("norm.mean", header.feature_dim)?;
    let std = take("norm.std", header.feature_dim)?;
    if let Some(name) = blocks.keys().next() {
        return Err(Error::Malformed(format!("unexpected block {name}")));
    }
    if mean.iter().chain(&std).any(|v| !v.is_finite()) || std.iter().any(|&s| s <= 0.0) {
        return Err(Error::Malformed("normalization statistics must be finite with positive std".into()));
    }
    if !header.fps.is_finite() || header.fps <= 0.0 {
        return Err(Error::Malformed(format!("fps {}", header.fps)));
    }
    let params = PredictorParams::from_values(layout, values)?;
    Ok(Model {
        header,
        params,
        norm: NormStats { mean, std },
    })
}

pub fn write_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(model)?).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
