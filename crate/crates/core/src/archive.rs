//! Flat named-tensor archive.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes   "FPADARCH"
//! version      u32       1
//! header_len   u32       length of the JSON header in bytes
//! header       bytes     UTF-8 JSON object (free-form metadata)
//! count        u32       number of tensors
//! count × {
//!   name_len   u32
//!   name       bytes     UTF-8
//!   ndim       u32
//!   dims       ndim × u64
//!   offset     u64       element offset into the data block
//! }
//! data         f32 × Σ numel, in table order
//! ```
//!
//! Tensors are stored row-major. Reading and writing are bit-exact.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"FPADARCH";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let name = name.into();
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Checkpoint(format!("tensor {name}: shape {shape:?} holds {numel} values, got {}", data.len())));
        }
        Ok(Self { name, shape, data })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorArchive {
    pub header: serde_json::Value,
    pub tensors: Vec<NamedTensor>,
}

impl TensorArchive {
    pub fn new(header: serde_json::Value) -> Self {
        Self { header, tensors: Vec::new() }
    }

    pub fn push(&mut self, tensor: NamedTensor) -> Result<()> {
        if self.get(&tensor.name).is_some() {
            return Err(Error::Checkpoint(format!("duplicate tensor {}", tensor.name)));
        }
        self.tensors.push(tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.iter().map(|t| t.name.as_str())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let numel: usize = self.tensors.iter().map(|t| t.data.len()).sum();
        let mut out = Vec::with_capacity(32 + header.len() + numel * 4);
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        put_u32(&mut out, len_u32(header.len())?);
        out.extend_from_slice(&header);
        put_u32(&mut out, len_u32(self.tensors.len())?);
        let mut offset = 0u64;
        for t in &self.tensors {
            put_u32(&mut out, len_u32(t.name.len())?);
            out.extend_from_slice(t.name.as_bytes());
            put_u32(&mut out, len_u32(t.shape.len())?);
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&offset.to_le_bytes());
            offset += t.data.len() as u64;
        }
        for t in &self.tensors {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("not a tensor archive (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported archive version {version}")));
        }
        let header_len = r.u32()? as usize;
        let header = serde_json::from_slice(r.take(header_len)?)?;
        let count = r.u32()? as usize;
        let mut table = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let offset = r.u64()? as usize;
            table.push((name, shape, offset));
        }
        let data = &bytes[r.pos..];
        if !data.len().is_multiple_of(4) {
            return Err(Error::Checkpoint("data block is not a whole number of f32 values".into()));
        }
        let total = data.len() / 4;
        let mut archive = TensorArchive::new(header);
        for (name, shape, offset) in table {
            let numel: usize = shape.iter().product();
            let end = offset.checked_add(numel).filter(|&e| e <= total).ok_or_else(|| {
                Error::Checkpoint(format!("tensor {name} extends past the end of the archive"))
            })?;
            let values = data[offset * 4..end * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            archive.push(NamedTensor::new(name, shape, values)?)?;
        }
        Ok(archive)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn len_u32(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Checkpoint(format!("length {n} does not fit in u32")))
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("archive is truncated".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
