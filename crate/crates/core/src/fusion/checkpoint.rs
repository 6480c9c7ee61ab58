//! Model checkpoint container.
//!
//! ```text
//! magic    "WVFN"
//! version  u32 LE
//! records  until end of file:
//!   name_len u16 LE, name (UTF-8), rank u8, dims u32 LE × rank,
//!   payload f32 LE × product(dims), row-major
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"WVFN";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode(store: &ParamStore) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(8 + store.num_scalars() * 4);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for (_, p) in store.iter() {
        let name = p.name.as_bytes();
        let name_len =
            u16::try_from(name.len()).map_err(|_| Error::Checkpoint(format!("parameter name too long: {}", p.name)))?;
        let rank = u8::try_from(p.value.rank())
            .map_err(|_| Error::Checkpoint(format!("parameter {} has rank > 255", p.name)))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name);
        out.push(rank);
        for &d in p.value.shape() {
            let d = u32::try_from(d).map_err(|_| Error::Checkpoint(format!("parameter {} dim exceeds u32", p.name)))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for &x in p.value.data() {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.pos,
                format!("truncated {what}: need {n} bytes, {} left", self.bytes.len() - self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Parses a checkpoint into `(name, tensor)` records in file order.
pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::format(0, "bad magic, expected \"WVFN\""));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(4, format!("unsupported checkpoint version {version}")));
    }
    let mut records = Vec::new();
    let mut seen = std::collections::HashSet::new();
    while r.pos < bytes.len() {
        let start = r.pos;
        let name_len = r.u16("name length")? as usize;
        if name_len == 0 {
            return Err(Error::format(start, "empty parameter name"));
        }
        let name_at = r.pos;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| Error::format(name_at, "parameter name is not UTF-8"))?
            .to_string();
        if !seen.insert(name.clone()) {
            return Err(Error::format(name_at, format!("duplicate parameter {name}")));
        }
        let rank_at = r.pos;
        let rank = r.take(1, "rank")?[0] as usize;
        if rank == 0 {
            return Err(Error::format(rank_at, format!("parameter {name} has rank 0")));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut numel: usize = 1;
        for _ in 0..rank {
            let at = r.pos;
            let d = r.u32("dimension")? as usize;
            if d == 0 {
                return Err(Error::format(at, format!("parameter {name} has a zero dimension")));
            }
            numel = numel
                .checked_mul(d)
                .filter(|n| n.checked_mul(4).is_some())
                .ok_or_else(|| Error::format(at, format!("parameter {name} is too large")))?;
            shape.push(d);
        }
        let payload = r.take(numel * 4, "payload")?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        records.push((name, Tensor::new(shape, data)?));
    }
    Ok(records)
}

pub fn save(store: &ParamStore, path: &Path) -> Result<()> {
    std::fs::write(path, encode(store)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| e.in_file(path))
}
