//! Flat binary checkpoint format. All integers and floats are little-endian.
//!
//! ```text
//! offset  size        field
//! 0       4           magic "MLRF"
//! 4       4   u32     format version (1)
//! 8       1   u8      head kind (0 = final softmax, 1 = per-step linear)
//! 9       4   u32     input_dim
//! 13      4   u32     hidden_dim
//! 17      4   u32     out_dim
//! 21      8   u64     parameter count N
//! 29      8·N f64     parameters in W, U, b, V, c order
//! ..      4   u32     metadata length M
//! ..      M           metadata (UTF-8 JSON, may be empty)
//! ```

use std::path::Path;

use super::lstm::{HeadKind, SequenceModelParams};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MLRF";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode(params: &SequenceModelParams, metadata: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(33 + 8 * params.len() + metadata.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(params.head().code());
    for d in [params.input_dim(), params.hidden_dim(), params.out_dim()] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for v in params.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(metadata.len() as u32).to_le_bytes());
    out.extend_from_slice(metadata);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("truncated while reading {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<(SequenceModelParams, Vec<u8>)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let code = r.take(1, "head kind")?[0];
    let head = HeadKind::from_code(code)
        .ok_or_else(|| Error::Checkpoint(format!("unknown head kind {code}")))?;
    let input_dim = r.u32("input_dim")? as usize;
    let hidden_dim = r.u32("hidden_dim")? as usize;
    let out_dim = r.u32("out_dim")? as usize;
    let count = u64::from_le_bytes(r.take(8, "parameter count")?.try_into().unwrap()) as usize;
    let raw = r.take(count.saturating_mul(8), "parameters")?;
    let data = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let params = SequenceModelParams::from_flat(input_dim, hidden_dim, out_dim, head, data)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    let meta_len = r.u32("metadata length")? as usize;
    let meta = r.take(meta_len, "metadata")?.to_vec();
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after metadata".into()));
    }
    Ok((params, meta))
}

pub fn save(path: &Path, params: &SequenceModelParams, metadata: &[u8]) -> Result<()> {
    std::fs::write(path, encode(params, metadata)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(SequenceModelParams, Vec<u8>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
