//! Binary checkpoint format.
//!
//! ```text
//! "SVLB" | version u32 | config_len u32 | config (UTF-8 JSON)
//! repeated: name_len u32 | name | dtype u8 (0 = f32) | rank u8 | dims u64 * rank | payload
//! crc32 of every preceding byte
//! ```
//!
//! All integers and floats are little-endian.

use std::path::Path;

use serde::{Deserialize, Serialize};
use svlb_core::{ParamStore, Tensor};

pub const MAGIC: &[u8; 4] = b"SVLB";
pub const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("truncated while reading {field}")]
    Truncated { field: String },
    #[error("bad magic {found:?}, expected \"SVLB\"")]
    Magic { found: [u8; 4] },
    #[error("unsupported version {found}, expected {VERSION}")]
    Version { found: u32 },
    #[error("crc mismatch: stored {stored:08x}, computed {computed:08x}")]
    Crc { stored: u32, computed: u32 },
    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> CheckpointError {
    CheckpointError::Invalid {
        field: field.into(),
        reason: reason.into(),
    }
}

/// What kind of model the tensors belong to and how to rebuild it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelMeta {
    pub model: String,
    /// False for MAE pretraining checkpoints, true for adapted segmentation models.
    pub adapted: bool,
    pub decoder: Option<DecoderMeta>,
    pub window: Option<usize>,
    pub pyramid_width: Option<usize>,
    pub num_classes: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderMeta {
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: String,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_store(meta: &ModelMeta, store: &ParamStore) -> Self {
        Self {
            config: serde_json::to_string(meta).expect("meta serializes"),
            tensors: store
                .entries()
                .iter()
                .map(|e| (e.name.clone(), e.tensor.clone()))
                .collect(),
        }
    }

    pub fn meta(&self) -> Result<ModelMeta, CheckpointError> {
        serde_json::from_str(&self.config).map_err(|e| invalid("config", e.to_string()))
    }

    /// Tensors as a store, for name-based transfer.
    pub fn to_store(&self) -> Result<ParamStore, CheckpointError> {
        let mut store = ParamStore::new();
        for (name, t) in &self.tensors {
            store
                .add(name.clone(), t.clone(), true)
                .map_err(|e| invalid(format!("tensor `{name}`"), e.to_string()))?;
        }
        Ok(store)
    }

    /// Overwrites every tensor of `store`. The name sets must match exactly.
    pub fn restore_into(&self, store: &mut ParamStore) -> Result<(), CheckpointError> {
        if self.tensors.len() != store.len() {
            let names: Vec<&str> = self.tensors.iter().map(|(n, _)| n.as_str()).collect();
            let missing: Vec<&str> = store.names().filter(|n| !names.contains(n)).collect();
            return Err(invalid(
                "tensors",
                format!(
                    "{} records for a model with {} tensors (missing {missing:?})",
                    names.len(),
                    store.len()
                ),
            ));
        }
        for (name, t) in &self.tensors {
            store
                .set(name, t.clone())
                .map_err(|e| invalid(format!("tensor `{name}`"), e.to_string()))?;
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.config.len() as u32).to_le_bytes());
        out.extend_from_slice(self.config.as_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(DTYPE_F32);
            out.push(t.rank() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
        if &magic != MAGIC {
            return Err(CheckpointError::Magic { found: magic });
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(CheckpointError::Version { found: version });
        }
        if bytes.len() < r.pos + 4 {
            return Err(CheckpointError::Truncated { field: "crc".into() });
        }
        let body_end = bytes.len() - 4;
        let stored = u32::from_le_bytes(bytes[body_end..].try_into().unwrap());
        let computed = crc32fast::hash(&bytes[..body_end]);
        if stored != computed {
            return Err(CheckpointError::Crc { stored, computed });
        }
        let mut r = Reader {
            bytes: &bytes[..body_end],
            pos: r.pos,
        };
        let config_len = r.u32("config length")? as usize;
        let config = std::str::from_utf8(r.take(config_len, "config")?)
            .map_err(|e| invalid("config", e.to_string()))?
            .to_owned();
        let mut tensors = Vec::new();
        while r.pos < r.bytes.len() {
            let field = |what: &str| format!("tensor record {} {what}", tensors.len());
            let name_len = r.u32(&field("name length"))? as usize;
            let name = std::str::from_utf8(r.take(name_len, &field("name"))?)
                .map_err(|e| invalid(field("name"), e.to_string()))?
                .to_owned();
            let dtype = r.u8(&format!("tensor `{name}` dtype"))?;
            if dtype != DTYPE_F32 {
                return Err(invalid(
                    format!("tensor `{name}` dtype"),
                    format!("unknown code {dtype}"),
                ));
            }
            let rank = r.u8(&format!("tensor `{name}` rank"))? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let d = r.u64(&format!("tensor `{name}` dims"))?;
                shape.push(usize::try_from(d).map_err(|_| invalid(format!("tensor `{name}` dims"), "too large"))?);
            }
            let numel = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| invalid(format!("tensor `{name}` dims"), "size overflows"))?;
            if numel > r.bytes.len() - r.pos {
                return Err(invalid(
                    format!("tensor `{name}` payload"),
                    format!("declares {numel} bytes, {} remain", r.bytes.len() - r.pos),
                ));
            }
            let data = r
                .take(numel, "payload")?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::new(&shape, data).map_err(|e| invalid(format!("tensor `{name}`"), e.to_string()))?;
            tensors.push((name, t));
        }
        Ok(Self { config, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::decode(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8], CheckpointError> {
        if self.bytes.len() - self.pos < n {
            return Err(CheckpointError::Truncated { field: field.into() });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, field: &str) -> Result<u8, CheckpointError> {
        Ok(self.take(1, field)?[0])
    }

    fn u32(&mut self, field: &str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }

    fn u64(&mut self, field: &str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, field)?.try_into().unwrap()))
    }
}
