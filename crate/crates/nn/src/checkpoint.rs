//! `FEPR` parameter files.
//!
//! Layout: magic `FEPR`, format version `u32`, then records until end of
//! file, each `{name_len u32, name utf-8, rank u32, dims u32 * rank,
//! payload f32 * prod(dims)}`. All integers and floats little-endian.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{NnError, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"FEPR";
pub const VERSION: u32 = 1;

pub fn write_checkpoint<'a, W: Write>(
    mut w: W,
    tensors: impl IntoIterator<Item = (String, &'a Tensor)>,
) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for (name, t) in tensors {
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u32).to_le_bytes())?;
        w.write_all(bytes)?;
        w.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut payload = Vec::with_capacity(t.len() * 4);
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&payload)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save<'a>(path: &Path, tensors: impl IntoIterator<Item = (String, &'a Tensor)>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_checkpoint(std::io::BufWriter::new(file), tensors)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(NnError::Checkpoint {
                offset: self.pos as u64,
                reason: format!("truncated {what}"),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Parses a checkpoint; tensor order in the file is preserved in the returned list.
pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Vec<(String, Tensor)>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut c = Cursor { buf: &buf, pos: 0 };
    if c.take(4, "magic")? != MAGIC {
        return Err(NnError::Checkpoint {
            offset: 0,
            reason: "bad magic".into(),
        });
    }
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(NnError::Checkpoint {
            offset: 4,
            reason: format!("unsupported version {version}"),
        });
    }
    let mut out = Vec::new();
    while c.pos < buf.len() {
        let start = c.pos as u64;
        let len = c.u32("name length")? as usize;
        let name = std::str::from_utf8(c.take(len, "name")?)
            .map_err(|_| NnError::Checkpoint {
                offset: start + 4,
                reason: "name is not utf-8".into(),
            })?
            .to_string();
        let rank = c.u32("rank")? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(c.u32("dims")? as usize);
        }
        let n: usize = dims.iter().product();
        let payload = c.take(n * 4, "payload")?;
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let t = Tensor::new(dims, data).map_err(|e| NnError::Checkpoint {
            offset: start,
            reason: e.to_string(),
        })?;
        out.push((name, t));
    }
    Ok(out)
}

pub fn load(path: &Path) -> Result<BTreeMap<String, Tensor>> {
    let file = std::fs::File::open(path)?;
    Ok(read_checkpoint(std::io::BufReader::new(file))?.into_iter().collect())
}
