//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "DREC" | version: u16 | model name: u32 len + UTF-8 | config: u32 len + UTF-8
//! | tensor count: u32 | per tensor { name: u32 len + UTF-8, rank: u8,
//!   dims: u64 × rank, values: f64 × Π dims }
//! ```

use std::fs;
use std::path::Path;

use drec_autodiff::Tensor;
use thiserror::Error;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"DREC";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint: bad magic {0:?}")]
    BadMagic(Vec<u8>),
    #[error("unsupported checkpoint version {found} (this build reads {VERSION})")]
    UnsupportedVersion { found: u16 },
    #[error("checkpoint truncated while reading {what} at byte {offset}")]
    Truncated { what: String, offset: usize },
    #[error("{what} is not valid UTF-8")]
    InvalidUtf8 { what: String },
    #[error("tensor `{name}` is malformed: {reason}")]
    InvalidTensor { name: String, reason: String },
    #[error("{0} unexpected bytes after the last tensor")]
    TrailingBytes(usize),
}

/// A decoded checkpoint: the model name, the config echo and named tensors in
/// file order.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: String,
    pub config: String,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut out, &self.model);
        put_str(&mut out, &self.config);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            put_str(&mut out, name);
            out.push(t.rank() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> std::result::Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if bytes.len() < 4 || bytes[..4] != MAGIC {
            return Err(CheckpointError::BadMagic(bytes[..bytes.len().min(4)].to_vec()));
        }
        r.pos = 4;
        let version = u16::from_le_bytes(r.array("version")?);
        if version != VERSION {
            return Err(CheckpointError::UnsupportedVersion { found: version });
        }
        let model = r.string("model name")?;
        let config = r.string("config echo")?;
        let count = u32::from_le_bytes(r.array("tensor count")?);
        let mut tensors = Vec::new();
        for k in 0..count {
            let name = r.string(&format!("name of tensor {k}"))?;
            let [rank] = r.array(&format!("rank of `{name}`"))?;
            let mut shape = Vec::with_capacity(rank as usize);
            for _ in 0..rank {
                let d = u64::from_le_bytes(r.array(&format!("dims of `{name}`"))?);
                shape.push(usize::try_from(d).map_err(|_| invalid(&name, "dimension overflows usize"))?);
            }
            let len = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| invalid(&name, "element count overflows"))?;
            let nbytes = len
                .checked_mul(8)
                .ok_or_else(|| invalid(&name, "element count overflows"))?;
            let raw = r.take(nbytes, &format!("values of `{name}`"))?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            let t = Tensor::new(shape, data).map_err(|e| invalid(&name, &e.to_string()))?;
            tensors.push((name, t));
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::TrailingBytes(bytes.len() - r.pos));
        }
        Ok(Self { model, config, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::decode(&bytes)?)
    }
}

fn invalid(name: &str, reason: &str) -> CheckpointError {
    CheckpointError::InvalidTensor {
        name: name.to_string(),
        reason: reason.to_string(),
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> std::result::Result<&'a [u8], CheckpointError> {
        if self.bytes.len() - self.pos < n {
            return Err(CheckpointError::Truncated {
                what: what.to_string(),
                offset: self.pos,
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn array<const N: usize>(&mut self, what: &str) -> std::result::Result<[u8; N], CheckpointError> {
        Ok(self.take(N, what)?.try_into().expect("exact length"))
    }

    fn string(&mut self, what: &str) -> std::result::Result<String, CheckpointError> {
        let len = u32::from_le_bytes(self.array(what)?) as usize;
        let raw = self.take(len, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| CheckpointError::InvalidUtf8 { what: what.to_string() })
    }
}
