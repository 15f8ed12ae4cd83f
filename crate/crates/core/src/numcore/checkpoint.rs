//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "APTM"            4 bytes magic
//! version           u32
//! entry count       u32
//! per entry:
//!   name length     u16
//!   name            UTF-8 bytes
//!   dtype           u8   (0 = f32, 1 = f64)
//!   rank            u8
//!   extents         u32 × rank
//!   payload         raw little-endian elements
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::scalar::{dtype_width, Scalar};
use super::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"APTM";
pub const FORMAT_VERSION: u32 = 1;

/// One named tensor as stored on disk, kept in its stored precision.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub dtype: u8,
    pub shape: Vec<usize>,
    payload: Vec<u8>,
}

impl Entry {
    pub fn from_tensor<T: Scalar>(name: &str, tensor: &Tensor<T>) -> Self {
        let mut payload = Vec::with_capacity(tensor.len() * dtype_width(T::DTYPE).unwrap());
        for &x in tensor.data() {
            x.write_le(&mut payload);
        }
        Self {
            name: name.to_string(),
            dtype: T::DTYPE,
            shape: tensor.shape().to_vec(),
            payload,
        }
    }

    /// Decodes the payload, converting precision if the stored dtype differs from `T`.
    pub fn to_tensor<T: Scalar>(&self) -> Result<Tensor<T>> {
        let width = dtype_width(self.dtype)
            .ok_or_else(|| Error::Checkpoint(format!("unknown dtype code {}", self.dtype)))?;
        let data: Vec<T> = match self.dtype {
            0 => self
                .payload
                .chunks_exact(width)
                .map(|b| T::from_f64_lossy(f32::read_le(b) as f64))
                .collect(),
            _ => self
                .payload
                .chunks_exact(width)
                .map(|b| T::from_f64_lossy(f64::read_le(b)))
                .collect(),
        };
        Tensor::new(self.shape.clone(), data)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub entries: Vec<Entry>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push<T: Scalar>(&mut self, name: &str, tensor: &Tensor<T>) {
        self.entries.push(Entry::from_tensor(name, tensor));
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn tensor<T: Scalar>(&self, name: &str) -> Result<Tensor<T>> {
        self.get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing entry '{name}'")))?
            .to_tensor()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let count = u32::try_from(self.entries.len())
            .map_err(|_| Error::Checkpoint("too many entries".into()))?;
        out.extend_from_slice(&count.to_le_bytes());
        for e in &self.entries {
            let name = e.name.as_bytes();
            let len = u16::try_from(name.len())
                .map_err(|_| Error::Checkpoint(format!("name too long: {}", e.name)))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name);
            out.push(e.dtype);
            let rank = u8::try_from(e.shape.len())
                .map_err(|_| Error::Checkpoint(format!("rank too large for {}", e.name)))?;
            out.push(rank);
            for &d in &e.shape {
                let d = u32::try_from(d)
                    .map_err(|_| Error::Checkpoint(format!("extent too large in {}", e.name)))?;
                out.extend_from_slice(&d.to_le_bytes());
            }
            out.extend_from_slice(&e.payload);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic bytes".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let count = r.u32()? as usize;
        let mut entries = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Checkpoint("entry name is not UTF-8".into()))?
                .to_string();
            let dtype = r.u8()?;
            let width = dtype_width(dtype)
                .ok_or_else(|| Error::Checkpoint(format!("unknown dtype code {dtype} in {name}")))?;
            let rank = r.u8()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let elems: usize = shape.iter().product();
            let payload = r.take(elems * width)?.to_vec();
            entries.push(Entry {
                name,
                dtype,
                shape,
                payload,
            });
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes after last entry".into()));
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("unexpected end of checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
