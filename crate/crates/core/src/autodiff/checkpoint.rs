//! `TNSR` parameter files: magic, u32 count, then per tensor a u32 name length,
//! UTF-8 name, u32 rank, u32 dims and f64 data, all little-endian.

use std::path::Path;

use super::{ParamSet, Tensor, TensorError};

const MAGIC: &[u8; 4] = b"TNSR";

pub fn encode(params: &ParamSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + params.num_scalars() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TensorError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| TensorError::Format("truncated checkpoint".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize, TensorError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
}

pub fn decode(bytes: &[u8]) -> Result<ParamSet, TensorError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(TensorError::Format("not a TNSR checkpoint".into()));
    }
    let count = r.u32()?;
    let mut ps = ParamSet::new();
    for _ in 0..count {
        let len = r.u32()?;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| TensorError::Format("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| TensorError::Format(format!("{name}: shape overflows")))?;
        let raw = r.take(n.checked_mul(8).ok_or_else(|| TensorError::Format("size overflow".into()))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        ps.add(name, Tensor::new(shape, data)?);
    }
    if r.pos != bytes.len() {
        return Err(TensorError::Format("trailing bytes after checkpoint".into()));
    }
    Ok(ps)
}

pub fn save(params: &ParamSet, path: &Path) -> Result<(), TensorError> {
    std::fs::write(path, encode(params)).map_err(|e| TensorError::io(path, e))
}

pub fn load(path: &Path) -> Result<ParamSet, TensorError> {
    let bytes = std::fs::read(path).map_err(|e| TensorError::io(path, e))?;
    decode(&bytes)
}
