//! Versioned binary container for named arrays.
//!
//! Layout: the 6-byte magic `CSTTE1`, then for every entry
//! `name_len:u64 | name:utf8 | rank:u64 | extents:[u64; rank] | values:[f64]`,
//! all little-endian, values row-major. Entries run to end of file.

use std::fs;
use std::path::Path;

use super::array::{DiffArray, ParamSet};
use crate::{Error, Result};

pub const MAGIC: &[u8; 6] = b"CSTTE1";

pub fn encode<'a>(entries: impl IntoIterator<Item = (&'a str, &'a DiffArray)>) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    for (name, array) in entries {
        out.extend_from_slice(&(name.len() as u64).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(array.shape().len() as u64).to_le_bytes());
        for &e in array.shape() {
            out.extend_from_slice(&(e as u64).to_le_bytes());
        }
        for &v in array.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> std::result::Result<&[u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> std::result::Result<Vec<(String, DiffArray)>, String> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err("missing CSTTE1 magic".into());
    }
    let mut r = Reader {
        buf: bytes,
        pos: MAGIC.len(),
    };
    let mut entries = Vec::new();
    while r.pos < bytes.len() {
        let name_len = r.u64()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|e| format!("entry name is not UTF-8: {e}"))?
            .to_owned();
        let rank = r.u64()? as usize;
        let shape = (0..rank)
            .map(|_| r.u64().map(|e| e as usize))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .ok_or("extent overflow")?;
        let raw = r.take(n.checked_mul(8).ok_or("extent overflow")?)?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let array = DiffArray::new(shape, values).map_err(|e| format!("entry `{name}`: {e}"))?;
        entries.push((name, array));
    }
    Ok(entries)
}

pub fn write_entries<'a>(path: &Path, entries: impl IntoIterator<Item = (&'a str, &'a DiffArray)>) -> Result<()> {
    fs::write(path, encode(entries)).map_err(|e| Error::io(path, e))
}

pub fn read_entries(path: &Path) -> Result<Vec<(String, DiffArray)>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|reason| Error::Format {
        path: path.to_path_buf(),
        reason,
    })
}

pub fn save_params(path: &Path, params: &ParamSet) -> Result<()> {
    write_entries(path, params.iter())
}

pub fn load_params(path: &Path) -> Result<ParamSet> {
    let mut set = ParamSet::new();
    for (name, array) in read_entries(path)? {
        set.insert(name, array);
    }
    Ok(set)
}
