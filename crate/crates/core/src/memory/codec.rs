//! `.acmb` memory container.
//!
//! Layout, all little-endian: magic `ACMB`, `u8` version, then the sections
//! IC, IA and T. Each section is `u32 rows, u32 cols, rows x cols f32` keys;
//! IC and IA follow with `u32 label_cols, rows x label_cols f32` values.

use std::path::Path;

use super::{ConceptMemory, MemoryBranch};
use crate::error::{Error, Result};

pub const ACMB_MAGIC: &[u8; 4] = b"ACMB";
pub const ACMB_VERSION: u8 = 1;

/// Matrices decoded from an `.acmb` file.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryParts {
    pub ic: MemoryBranch,
    pub ia: MemoryBranch,
    pub w_t: Vec<f32>,
    pub w_t_cols: usize,
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_f32s(out: &mut Vec<u8>, v: &[f32]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

fn put_branch(out: &mut Vec<u8>, b: &MemoryBranch) {
    put_u32(out, b.rows());
    put_u32(out, b.dim());
    put_f32s(out, b.keys());
    put_u32(out, b.labels());
    put_f32s(out, b.values());
}

pub fn encode_memory(m: &ConceptMemory) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(ACMB_MAGIC);
    out.push(ACMB_VERSION);
    put_branch(&mut out, &m.ic);
    put_branch(&mut out, &m.ia);
    put_u32(&mut out, m.labels());
    put_u32(&mut out, m.embed_dim());
    put_f32s(&mut out, m.w_t());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::format("ACMB", format!("truncated while reading {what}")));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()) as usize)
    }

    fn f32s(&mut self, rows: usize, cols: usize, what: &str) -> Result<Vec<f32>> {
        let n = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::format("ACMB", format!("{what} size overflows")))?;
        Ok(self.take(n, what)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn branch(&mut self, name: &str) -> Result<MemoryBranch> {
        let rows = self.u32(name)?;
        let cols = self.u32(name)?;
        if cols == 0 {
            return Err(Error::format("ACMB", format!("{name} key width is zero")));
        }
        let keys = self.f32s(rows, cols, name)?;
        let labels = self.u32(name)?;
        let values = self.f32s(rows, labels, name)?;
        MemoryBranch::from_matrices(cols, labels, keys, values)
    }
}

pub fn decode_memory(bytes: &[u8]) -> Result<MemoryParts> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != ACMB_MAGIC {
        return Err(Error::format("ACMB", "bad magic"));
    }
    let version = r.take(1, "version")?[0];
    if version != ACMB_VERSION {
        return Err(Error::format("ACMB", format!("unsupported version {version}")));
    }
    let ic = r.branch("IC section")?;
    let ia = r.branch("IA section")?;
    let rows = r.u32("T section")?;
    let cols = r.u32("T section")?;
    let w_t = r.f32s(rows, cols, "T section")?;
    if r.pos != bytes.len() {
        return Err(Error::format("ACMB", format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(MemoryParts { ic, ia, w_t, w_t_cols: cols })
}

pub fn write_memory(m: &ConceptMemory, path: &Path) -> Result<()> {
    std::fs::write(path, encode_memory(m)).map_err(|e| Error::io(path, e))
}

pub fn read_memory(path: &Path) -> Result<MemoryParts> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_memory(&bytes)
}
