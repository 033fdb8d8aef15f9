//! `MMDW` weight files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "MMDW" | u32 version | u32 count
//! count x ( u16 name_len | name | u8 rank | rank x u32 extent | prod(extent) x f64 )
//! ```
//!
//! Entries are written in name order.

use std::fs;
use std::path::Path;

use mmfuse_core::store::WeightStore;
use mmfuse_core::Tensor;

pub const MAGIC: &[u8; 4] = b"MMDW";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("bad magic: expected \"MMDW\", found {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {found} (this build reads version {VERSION})")]
    Version { found: u32 },
    #[error("truncated file while reading {what} at byte {offset}")]
    Truncated { what: &'static str, offset: usize },
    #[error("duplicate tensor name {0:?}")]
    DuplicateName(String),
    #[error("tensor name is not valid UTF-8 at byte {0}")]
    BadName(usize),
    #[error("{0} trailing bytes after the last entry")]
    TrailingBytes(usize),
    #[error("cannot encode {name:?}: {reason}")]
    Encode { name: String, reason: &'static str },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

pub fn encode(store: &WeightStore) -> Result<Vec<u8>, FormatError> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let count = u32::try_from(store.len()).map_err(|_| FormatError::Encode {
        name: String::new(),
        reason: "too many entries",
    })?;
    out.extend_from_slice(&count.to_le_bytes());
    for (name, t) in store.iter() {
        let err = |reason| FormatError::Encode {
            name: name.to_string(),
            reason,
        };
        let len = u16::try_from(name.len()).map_err(|_| err("name longer than 65535 bytes"))?;
        let rank = u8::try_from(t.rank()).map_err(|_| err("rank above 255"))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(rank);
        for &e in t.shape() {
            let e = u32::try_from(e).map_err(|_| err("extent above u32::MAX"))?;
            out.extend_from_slice(&e.to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(FormatError::Truncated {
                what,
                offset: self.pos,
            }),
        }
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<WeightStore, FormatError> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(4, "magic").map_err(|_| {
        let mut m = [0u8; 4];
        m[..bytes.len().min(4)].copy_from_slice(&bytes[..bytes.len().min(4)]);
        FormatError::BadMagic(m)
    })?;
    if magic != MAGIC {
        return Err(FormatError::BadMagic(magic.try_into().unwrap()));
    }
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(FormatError::Version { found: version });
    }
    let count = cur.u32("entry count")?;
    let mut store = WeightStore::new();
    for _ in 0..count {
        let len = u16::from_le_bytes(cur.take(2, "name length")?.try_into().unwrap()) as usize;
        let at = cur.pos;
        let name = std::str::from_utf8(cur.take(len, "name")?)
            .map_err(|_| FormatError::BadName(at))?
            .to_string();
        let rank = cur.take(1, "rank")?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u32("extent")? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = cur.take(n.saturating_mul(8), "tensor data")?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(shape, data).expect("extent product matches data length");
        if store.get(&name).is_some() {
            return Err(FormatError::DuplicateName(name));
        }
        store.set(name, t);
    }
    if cur.pos != bytes.len() {
        return Err(FormatError::TrailingBytes(bytes.len() - cur.pos));
    }
    Ok(store)
}

pub fn save_weights(store: &WeightStore, path: &Path) -> Result<(), FormatError> {
    let bytes = encode(store)?;
    fs::write(path, bytes).map_err(|source| FormatError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_weights(path: &Path) -> Result<WeightStore, FormatError> {
    let bytes = fs::read(path).map_err(|source| FormatError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode(&bytes)
}
