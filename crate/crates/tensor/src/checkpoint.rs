//! Parameter checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes  "ESSCKPT1"
//! desc_len     u32
//! descriptor   desc_len bytes, UTF-8 architecture descriptor
//! width        u8       element width in bytes (4 or 8)
//! count        u32      number of parameter records
//! count × record:
//!   name_len   u32
//!   name       name_len bytes, UTF-8
//!   rank       u32
//!   extents    rank × u64
//!   elements   product(extents) × width bytes
//! ```
//!
//! Records appear in name order, so equal parameter sets encode to equal
//! bytes.

use std::io::{Read, Write};

use crate::{Element, ParameterSet, Result, Tensor, TensorError};

pub const MAGIC: &[u8; 8] = b"ESSCKPT1";

pub fn encode<T: Element>(descriptor: &str, params: &ParameterSet<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + params.num_elements() * T::WIDTH as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(descriptor.len() as u32).to_le_bytes());
    out.extend_from_slice(descriptor.as_bytes());
    out.push(T::WIDTH);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            v.write_le(&mut out);
        }
    }
    out
}

pub fn write<T: Element, W: Write>(
    mut w: W,
    descriptor: &str,
    params: &ParameterSet<T>,
) -> Result<()> {
    w.write_all(&encode(descriptor, params))?;
    Ok(())
}

pub fn read<T: Element, R: Read>(mut r: R) -> Result<(String, ParameterSet<T>)> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    decode(&bytes)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| TensorError::Checkpoint(format!("truncated at byte {}", self.pos)))?;
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

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|e| TensorError::Checkpoint(format!("bad utf-8: {e}")))
    }
}

pub fn decode<T: Element>(bytes: &[u8]) -> Result<(String, ParameterSet<T>)> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(8)? != MAGIC {
        return Err(TensorError::Checkpoint("bad magic".into()));
    }
    let descriptor = c.string()?;
    let width = c.take(1)?[0];
    if width != T::WIDTH {
        return Err(TensorError::Checkpoint(format!(
            "element width {width} does not match requested width {}",
            T::WIDTH
        )));
    }
    let count = c.u32()?;
    let mut params = ParameterSet::new();
    for _ in 0..count {
        let name = c.string()?;
        let rank = c.u32()? as usize;
        let shape = (0..rank)
            .map(|_| c.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let len = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| TensorError::Checkpoint(format!("extent overflow in {name}")))?;
        let raw = c.take(len * width as usize)?;
        let data = raw.chunks_exact(width as usize).map(T::read_le).collect();
        params.insert(name, Tensor::from_vec(&shape, data)?);
    }
    if c.pos != bytes.len() {
        return Err(TensorError::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - c.pos
        )));
    }
    Ok((descriptor, params))
}
