//! Model checkpoint file format.
//!
//! ```text
//! b"AMCP" | version u16
//! | header length u32 | header JSON (architecture, window plan, metadata)
//! | tensor count u32
//! | per tensor: name length u16, UTF-8 name, ndim u8, dims u32 x ndim,
//!   values f64 x prod(dims)
//! ```
//!
//! All integers and floats are little-endian; tensors appear in the
//! architecture's declared order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Parameters, Tensor};
use crate::corpus::{write_atomic, Cursor};
use crate::error::{Error, Result};
use crate::features::WindowPlan;
use crate::network::{ArchitectureConfig, Model};

pub const MAGIC: &[u8; 4] = b"AMCP";
pub const FORMAT_VERSION: u16 = 1;

/// Provenance of the weights in a checkpoint.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainMetadata {
    pub epochs_run: usize,
    /// 1-based epoch whose weights were kept; 0 for untrained weights.
    pub best_epoch: usize,
    pub init_seed: u64,
    pub train_seed: u64,
    pub best_val_loss: Option<f64>,
    pub learning_rate: f64,
    pub batch_size: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    architecture: ArchitectureConfig,
    window_plan: WindowPlan,
    metadata: TrainMetadata,
}

#[derive(Debug, Clone)]
pub struct ModelCheckpoint {
    pub architecture: ArchitectureConfig,
    pub window_plan: WindowPlan,
    pub metadata: TrainMetadata,
    pub params: Parameters,
}

impl ModelCheckpoint {
    pub fn from_model(model: &Model, window_plan: WindowPlan, metadata: TrainMetadata) -> Self {
        Self { architecture: model.config().clone(), window_plan, metadata, params: model.params().clone() }
    }

    pub fn to_model(&self) -> Result<Model> {
        Model::from_parameters(self.architecture.clone(), self.params.clone())
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&Header {
            architecture: self.architecture.clone(),
            window_plan: self.window_plan,
            metadata: self.metadata.clone(),
        })
        .map_err(|e| Error::Data(format!("checkpoint header: {e}")))?;
        let mut out = Vec::with_capacity(16 + header.len() + 8 * self.params.scalar_count() + 64 * self.params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (_, name, t) in self.params.iter() {
            let name = name.as_bytes();
            let name_len = u16::try_from(name.len()).map_err(|_| Error::Data("parameter name too long".into()))?;
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(name);
            out.push(t.shape().len() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    /// Parses a checkpoint and checks the tensors against the shapes the
    /// stored architecture declares.
    pub fn decode(buf: &[u8]) -> Result<Self> {
        let mut c = Cursor::new(buf, "checkpoint");
        if c.take(4)? != MAGIC {
            return Err(Error::Data("not a checkpoint file (bad magic)".into()));
        }
        let version = c.u16()?;
        if version != FORMAT_VERSION {
            return Err(Error::Data(format!("unsupported checkpoint version {version}")));
        }
        let header_len = c.u32()? as usize;
        let header: Header =
            serde_json::from_slice(c.take(header_len)?).map_err(|e| Error::Data(format!("checkpoint header: {e}")))?;
        let count = c.u32()? as usize;
        let mut params = Parameters::new();
        for _ in 0..count {
            let len = c.u16()? as usize;
            let name = std::str::from_utf8(c.take(len)?)
                .map_err(|_| Error::Data("parameter name is not UTF-8".into()))?
                .to_string();
            let ndim = c.u8()? as usize;
            let dims = (0..ndim).map(|_| c.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = dims.iter().product();
            if n.checked_mul(8).is_none_or(|bytes| bytes > c.remaining()) {
                return Err(Error::Data(format!("tensor {name} {dims:?} overruns the file")));
            }
            let data = (0..n).map(|_| c.f64()).collect::<Result<Vec<_>>>()?;
            params.add(name, Tensor::new(dims, data)?)?;
        }
        if c.remaining() != 0 {
            return Err(Error::Data(format!("{} trailing bytes after checkpoint", c.remaining())));
        }
        let ckpt = Self {
            architecture: header.architecture,
            window_plan: header.window_plan,
            metadata: header.metadata,
            params,
        };
        ckpt.to_model()?;
        Ok(ckpt)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode()?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&buf)
    }
}
