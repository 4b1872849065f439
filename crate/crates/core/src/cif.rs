//! Reader and writer for the `CIFLD001` binary field format.
//!
//! Layout: 8 magic bytes, then little-endian `u32` values `N`, `kind`, `nt`
//! and one node count per axis, then the payload as little-endian `f64`
//! (slice-major, C-order nodes, components innermost). The final time is not
//! stored; callers supply it when rebuilding a [`SpaceTimeField`].

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::{Field, FieldKind, SpaceTimeField};
use crate::grid::TorusGrid;

pub const MAGIC: &[u8; 8] = b"CIFLD001";

/// Decoded file contents before a time axis is attached.
#[derive(Debug, Clone, PartialEq)]
pub struct CifData {
    pub kind: FieldKind,
    pub nt: usize,
    pub nx: Vec<usize>,
    pub data: Vec<f64>,
}

impl CifData {
    pub fn from_spacetime(f: &SpaceTimeField) -> Self {
        Self {
            kind: f.kind(),
            nt: f.nt(),
            nx: f.grid().nx().to_vec(),
            data: f.data().to_vec(),
        }
    }

    /// A single slice, stored with `nt = 1`.
    pub fn from_field(f: &Field) -> Self {
        Self {
            kind: f.kind(),
            nt: 1,
            nx: f.grid().nx().to_vec(),
            data: f.data().to_vec(),
        }
    }

    pub fn into_spacetime(self, t_final: f64) -> Result<SpaceTimeField> {
        let grid = TorusGrid::new(&self.nx, self.nt, t_final)?;
        SpaceTimeField::from_vec(&grid, self.kind, self.data)
    }

    /// Rebuild a single-slice field. `nt` must be 1.
    pub fn into_field(self) -> Result<Field> {
        if self.nt != 1 {
            return Err(Error::Format(format!(
                "expected a single slice, file holds {}",
                self.nt
            )));
        }
        // the time axis of a lone slice is irrelevant
        let grid = TorusGrid::new(&self.nx, 2, 1.0)?;
        Field::from_vec(&grid, self.kind, self.data)
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        let mut header = vec![self.nx.len() as u32, self.kind.code(), self.nt as u32];
        header.extend(self.nx.iter().map(|&n| n as u32));
        for h in header {
            w.write_all(&h.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.data.len() * 8);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::decode(&bytes)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..8] != MAGIC {
            return Err(Error::Format("missing CIFLD001 magic".into()));
        }
        let mut pos = 8;
        let mut next_u32 = |what: &str| -> Result<u32> {
            let chunk = bytes
                .get(pos..pos + 4)
                .ok_or_else(|| Error::Format(format!("truncated header reading {what}")))?;
            pos += 4;
            Ok(u32::from_le_bytes(chunk.try_into().unwrap()))
        };
        let dim = next_u32("N")? as usize;
        if !(2..=3).contains(&dim) {
            return Err(Error::Format(format!("unsupported dimension {dim}")));
        }
        let code = next_u32("kind")?;
        let kind = FieldKind::from_code(code)
            .ok_or_else(|| Error::Format(format!("unknown kind code {code}")))?;
        let nt = next_u32("nt")? as usize;
        let mut nx = Vec::with_capacity(dim);
        for _ in 0..dim {
            nx.push(next_u32("nx")? as usize);
        }
        if nt == 0 || nx.contains(&0) {
            return Err(Error::Format("zero-sized axis".into()));
        }
        let count = nt * nx.iter().product::<usize>() * kind.components(dim);
        let payload = &bytes[8 + 4 * (3 + dim)..];
        if payload.len() != count * 8 {
            return Err(Error::Format(format!(
                "payload holds {} bytes, header implies {}",
                payload.len(),
                count * 8
            )));
        }
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self { kind, nt, nx, data })
    }
}

pub fn write_spacetime(path: impl AsRef<Path>, f: &SpaceTimeField) -> Result<()> {
    let file = std::fs::File::create(path)?;
    CifData::from_spacetime(f).write_to(std::io::BufWriter::new(file))
}

pub fn read_spacetime(path: impl AsRef<Path>, t_final: f64) -> Result<SpaceTimeField> {
    let bytes = std::fs::read(path)?;
    CifData::decode(&bytes)?.into_spacetime(t_final)
}

pub fn write_field(path: impl AsRef<Path>, f: &Field) -> Result<()> {
    let file = std::fs::File::create(path)?;
    CifData::from_field(f).write_to(std::io::BufWriter::new(file))
}

pub fn read_field(path: impl AsRef<Path>) -> Result<Field> {
    CifData::decode(&std::fs::read(path)?)?.into_field()
}
