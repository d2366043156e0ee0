//! Versioned binary checkpoint container.
//!
//! ```text
//! magic        8 bytes  "ALSLCKPT"
//! version      u32      1
//! entry_count  u32
//! entries:
//!   name_len   u16
//!   name       UTF-8
//!   dtype      u8       0 = f32, 1 = f64, 2 = utf8 text
//!   ndim       u8
//!   dims       u32 × ndim
//!   byte_len   u64
//!   data       little-endian values
//! checksum     32 bytes SHA-256 of everything above
//! ```

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::params::{named, Parameters};
use super::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ALSLCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32 = 0,
    F64 = 1,
    Utf8 = 2,
}

impl Dtype {
    fn from_u8(v: u8) -> Result<Self> {
        match v {
            0 => Ok(Dtype::F32),
            1 => Ok(Dtype::F64),
            2 => Ok(Dtype::Utf8),
            _ => Err(Error::Checkpoint(format!("unknown dtype {v}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub dtype: Dtype,
    pub dims: Vec<usize>,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub entries: Vec<CheckpointEntry>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, entry: CheckpointEntry) -> Result<()> {
        if self.entries.iter().any(|e| e.name == entry.name) {
            return Err(Error::Checkpoint(format!("duplicate entry {}", entry.name)));
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn add_f64(&mut self, name: &str, dims: &[usize], values: &[f64]) -> Result<()> {
        if dims.iter().product::<usize>() != values.len() {
            return Err(Error::Checkpoint(format!("{name}: dims {dims:?} do not match {} values", values.len())));
        }
        let bytes = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        self.push(CheckpointEntry { name: name.into(), dtype: Dtype::F64, dims: dims.to_vec(), bytes })
    }

    pub fn add_tensor(&mut self, name: &str, t: &Tensor) -> Result<()> {
        self.add_f64(name, t.shape(), t.data())
    }

    pub fn add_text(&mut self, name: &str, text: &str) -> Result<()> {
        self.push(CheckpointEntry { name: name.into(), dtype: Dtype::Utf8, dims: vec![text.len()], bytes: text.as_bytes().to_vec() })
    }

    /// Adds every tensor of `p` under `prefix`.
    pub fn add_params<P: Parameters + ?Sized>(&mut self, prefix: &str, p: &P) -> Result<()> {
        for (name, t) in named(p) {
            self.add_tensor(&super::params::join(prefix, &name), t)?;
        }
        Ok(())
    }

    pub fn entry(&self, name: &str) -> Result<&CheckpointEntry> {
        self.entries.iter().find(|e| e.name == name).ok_or_else(|| Error::Checkpoint(format!("missing entry {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.iter().any(|e| e.name == name)
    }

    pub fn f64s(&self, name: &str) -> Result<(Vec<usize>, Vec<f64>)> {
        let e = self.entry(name)?;
        let values = match e.dtype {
            Dtype::F64 => e.bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect(),
            Dtype::F32 => e.bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect(),
            Dtype::Utf8 => return Err(Error::Checkpoint(format!("{name} holds text, not numbers"))),
        };
        Ok((e.dims.clone(), values))
    }

    pub fn tensor(&self, name: &str) -> Result<Tensor> {
        let (dims, values) = self.f64s(name)?;
        Tensor::new(dims, values).map_err(|e| Error::Checkpoint(format!("{name}: {e}")))
    }

    pub fn text(&self, name: &str) -> Result<String> {
        let e = self.entry(name)?;
        if e.dtype != Dtype::Utf8 {
            return Err(Error::Checkpoint(format!("{name} is not text")));
        }
        String::from_utf8(e.bytes.clone()).map_err(|_| Error::Checkpoint(format!("{name}: invalid UTF-8")))
    }

    /// Overwrites every tensor of `p` from entries under `prefix`; shapes must match.
    pub fn load_params<P: Parameters + ?Sized>(&self, prefix: &str, p: &mut P) -> Result<()> {
        let mut err = None;
        p.visit_mut(prefix, &mut |name, t| {
            if err.is_some() {
                return;
            }
            match self.tensor(&name) {
                Ok(src) if src.shape() == t.shape() => t.data_mut().copy_from_slice(src.data()),
                Ok(src) => err = Some(Error::Checkpoint(format!("{name}: shape {:?}, model expects {:?}", src.shape(), t.shape()))),
                Err(e) => err = Some(e),
            }
        });
        err.map_or(Ok(()), Err)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            if e.name.len() > u16::MAX as usize || e.dims.len() > u8::MAX as usize {
                return Err(Error::Checkpoint(format!("entry {} too large to encode", e.name)));
            }
            out.extend_from_slice(&(e.name.len() as u16).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.push(e.dtype as u8);
            out.push(e.dims.len() as u8);
            for &d in &e.dims {
                out.extend_from_slice(&u32::try_from(d).map_err(|_| Error::Checkpoint("dimension exceeds u32".into()))?.to_le_bytes());
            }
            out.extend_from_slice(&(e.bytes.len() as u64).to_le_bytes());
            out.extend_from_slice(&e.bytes);
        }
        let sum = Sha256::digest(&out);
        out.extend_from_slice(&sum);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 + 4 + 4 + 32 {
            return Err(Error::Checkpoint("file too short".into()));
        }
        let (body, sum) = bytes.split_at(bytes.len() - 32);
        if &body[..8] != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        if Sha256::digest(body).as_slice() != sum {
            return Err(Error::Checkpoint("checksum mismatch".into()));
        }
        let mut pos = 8;
        let mut take = |n: usize| -> Result<&[u8]> {
            let s = body.get(pos..pos + n).ok_or_else(|| Error::Checkpoint("truncated entry".into()))?;
            pos += n;
            Ok(s)
        };
        let version = u32::from_le_bytes(take(4)?.try_into().expect("4"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let count = u32::from_le_bytes(take(4)?.try_into().expect("4")) as usize;
        let mut entries = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name_len = u16::from_le_bytes(take(2)?.try_into().expect("2")) as usize;
            let name = String::from_utf8(take(name_len)?.to_vec()).map_err(|_| Error::Checkpoint("entry name not UTF-8".into()))?;
            let head = take(2)?;
            let (dtype, ndim) = (Dtype::from_u8(head[0])?, head[1] as usize);
            let dims = (0..ndim).map(|_| Ok(u32::from_le_bytes(take(4)?.try_into().expect("4")) as usize)).collect::<Result<Vec<_>>>()?;
            let len = u64::from_le_bytes(take(8)?.try_into().expect("8")) as usize;
            let data = take(len)?.to_vec();
            let expect = match dtype {
                Dtype::F32 => 4 * dims.iter().product::<usize>(),
                Dtype::F64 => 8 * dims.iter().product::<usize>(),
                Dtype::Utf8 => dims.iter().product::<usize>(),
            };
            if expect != len {
                return Err(Error::Checkpoint(format!("{name}: {len} bytes for dims {dims:?}")));
            }
            entries.push(CheckpointEntry { name, dtype, dims, bytes: data });
        }
        if pos != body.len() {
            return Err(Error::Checkpoint("trailing bytes after last entry".into()));
        }
        Ok(Self { entries })
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read_file(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
