//! Binary checkpoint format.
//!
//! ```text
//! "CKGE"                 magic
//! u16                    format version
//! u8                     score function id
//! u8                     norm id
//! u32, u32 × n           schedule length and widths
//! u32, u32               entity and relation counts
//! f32 × 3                w1, w2, w3
//! u32                    table count, then per table:
//!   u8 + bytes           name
//!   u32, u32             rows, width
//!   f32 × rows·width     row-major payload
//!   u32                  CRC32 of the payload bytes
//! ```
//!
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::store::{
    CroppableModel, DimensionSchedule, Norm, Scalars, ScoreFunction, ScoreKind, Table,
};

pub const MAGIC: &[u8; 4] = b"CKGE";
pub const VERSION: u16 = 1;

pub fn encode(model: &CroppableModel<f32>) -> Vec<u8> {
    let payload: usize = model.tables().iter().map(|t| t.data().len() * 4 + 64).sum();
    let mut out = Vec::with_capacity(64 + payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(model.kind().id());
    out.push(model.score_fn().norm.id());
    let dims = model.schedule().dims();
    put_u32(&mut out, dims.len() as u32);
    for &d in dims {
        put_u32(&mut out, d as u32);
    }
    put_u32(&mut out, model.num_entities() as u32);
    put_u32(&mut out, model.num_relations() as u32);
    for v in [model.scalars.w1, model.scalars.w2, model.scalars.w3] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    put_u32(&mut out, model.tables().len() as u32);
    for t in model.tables() {
        out.push(t.name.len() as u8);
        out.extend_from_slice(t.name.as_bytes());
        put_u32(&mut out, t.rows() as u32);
        put_u32(&mut out, t.width() as u32);
        let start = out.len();
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let crc = crc32fast::hash(&out[start..]);
        put_u32(&mut out, crc);
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<CroppableModel<f32>> {
    let mut rd = Reader { buf: bytes, pos: 0 };
    if rd.take(4, "magic")? != MAGIC {
        return Err(Error::BadMagic);
    }
    let version = u16::from_le_bytes(rd.array("version")?);
    if version != VERSION {
        return Err(Error::VersionMismatch {
            expected: VERSION,
            found: version,
        });
    }
    let kind_id = rd.u8("score function")?;
    let kind = ScoreKind::from_id(kind_id)
        .ok_or_else(|| Error::CorruptCheckpoint(format!("unknown score function id {kind_id}")))?;
    let norm_id = rd.u8("norm")?;
    let norm = Norm::from_id(norm_id)
        .ok_or_else(|| Error::CorruptCheckpoint(format!("unknown norm id {norm_id}")))?;

    let n = rd.u32("schedule length")? as usize;
    if n > rd.remaining() / 4 {
        return Err(Error::Truncated("schedule"));
    }
    let mut dims = Vec::with_capacity(n);
    for _ in 0..n {
        dims.push(rd.u32("schedule")? as usize);
    }
    let schedule = DimensionSchedule::new(dims)
        .map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
    let num_entities = rd.u32("entity count")? as usize;
    let num_relations = rd.u32("relation count")? as usize;
    let scalars = Scalars {
        w1: f32::from_le_bytes(rd.array("scalars")?),
        w2: f32::from_le_bytes(rd.array("scalars")?),
        w3: f32::from_le_bytes(rd.array("scalars")?),
    };

    let layout = kind.layout();
    let count = rd.u32("table count")? as usize;
    if count != layout.specs.len() {
        return Err(Error::CorruptCheckpoint(format!(
            "{kind} expects {} tables, found {count}",
            layout.specs.len()
        )));
    }
    let width = schedule.full_dim();
    let mut tables = Vec::with_capacity(count);
    for spec in layout.specs {
        let name_len = rd.u8("table name")? as usize;
        let name = rd.take(name_len, "table name")?;
        if name != spec.name.as_bytes() {
            return Err(Error::CorruptCheckpoint(format!(
                "expected table `{}`, found `{}`",
                spec.name,
                String::from_utf8_lossy(name)
            )));
        }
        let rows = rd.u32("table rows")? as usize;
        let cols = rd.u32("table width")? as usize;
        let expected_rows = layout.rows(spec.role, num_entities, num_relations);
        if rows != expected_rows || cols != width {
            return Err(Error::CorruptCheckpoint(format!(
                "table `{}` is {rows}×{cols}, expected {expected_rows}×{width}",
                spec.name
            )));
        }
        if rows == 0 {
            return Err(Error::EmptyTable(spec.name.to_owned()));
        }
        let len = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(4))
            .ok_or(Error::Truncated("table payload"))?;
        let payload = rd.take(len, "table payload")?;
        let stored = rd.u32("table CRC")?;
        let computed = crc32fast::hash(payload);
        if stored != computed {
            return Err(Error::CrcMismatch {
                table: spec.name.to_owned(),
                stored,
                computed,
            });
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        tables.push(Table::from_data(*spec, rows, cols, data));
    }
    if rd.remaining() != 0 {
        return Err(Error::CorruptCheckpoint(format!(
            "{} trailing bytes",
            rd.remaining()
        )));
    }
    Ok(CroppableModel::from_parts(
        ScoreFunction::new(kind, norm),
        schedule,
        num_entities,
        num_relations,
        tables,
        scalars,
    ))
}

pub fn save_checkpoint(model: &CroppableModel<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<CroppableModel<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::Truncated(what));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, what: &'static str) -> Result<[u8; N]> {
        let s = self.take(N, what)?;
        let mut a = [0u8; N];
        a.copy_from_slice(s);
        Ok(a)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }
}
