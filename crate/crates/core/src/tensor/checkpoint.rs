//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      4 bytes  "VSLR"
//! version    u32      (currently 1)
//! scalar     u32      bytes per scalar: 4 (f32) or 8 (f64)
//! count      u64      number of entries
//! entry*     name_len u32, name bytes (UTF-8), rank u32,
//!            extents u64 × rank, payload scalar × product(extents)
//! ```

use std::io::{Read, Write};

use super::{numel, Result, Scalar, Tensor, TensorError};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"VSLR";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Ordered named tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T: Scalar> {
    pub entries: Vec<(String, Vec<usize>, Vec<T>)>,
}

impl<T: Scalar> Default for Checkpoint<T> {
    fn default() -> Self {
        Self { entries: Vec::new() }
    }
}

impl<T: Scalar> Checkpoint<T> {
    pub fn from_tensors<'a>(named: impl IntoIterator<Item = (&'a str, &'a Tensor<T>)>) -> Self {
        let entries = named
            .into_iter()
            .map(|(n, t)| (n.to_string(), t.shape().to_vec(), t.to_vec()))
            .collect();
        Self { entries }
    }

    pub fn get(&self, name: &str) -> Option<(&[usize], &[T])> {
        self.entries
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, s, d)| (s.as_slice(), d.as_slice()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(T::BYTES as u32).to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for (name, shape, data) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for &e in shape {
                out.extend_from_slice(&(e as u64).to_le_bytes());
            }
            for &v in data {
                v.write_le(&mut out);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let width = r.u32()? as usize;
        if width != T::BYTES {
            return Err(bad(&format!(
                "checkpoint holds {width}-byte scalars, expected {} ({})",
                T::BYTES,
                T::NAME
            )));
        }
        let count = r.u64()? as usize;
        let mut entries = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|_| bad("name is not UTF-8"))?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
            let n = numel(&shape);
            let payload = r.take(n.checked_mul(T::BYTES).ok_or_else(|| bad("payload size overflow"))?)?;
            let data = payload.chunks(T::BYTES).map(T::read_le).collect();
            entries.push((name, shape, data));
        }
        if r.pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self { entries })
    }
}

fn bad(msg: &str) -> TensorError {
    TensorError::Invalid {
        op: "checkpoint",
        msg: msg.to_string(),
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| bad("truncated"))?;
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

pub fn write_checkpoint<T: Scalar>(mut w: impl Write, ckpt: &Checkpoint<T>) -> std::io::Result<()> {
    w.write_all(&ckpt.to_bytes())
}

pub fn save_checkpoint<T: Scalar>(path: impl AsRef<std::path::Path>, ckpt: &Checkpoint<T>) -> std::io::Result<()> {
    std::fs::write(path, ckpt.to_bytes())
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<std::path::Path>) -> std::io::Result<Checkpoint<T>> {
    read_checkpoint(std::fs::File::open(path)?)
}

pub fn read_checkpoint<T: Scalar>(mut r: impl Read) -> std::io::Result<Checkpoint<T>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    Checkpoint::from_bytes(&buf).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}
