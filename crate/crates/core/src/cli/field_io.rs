//! Binary field files.
//!
//! Layout, all little-endian: the magic `PLAPF1`, the spatial dimension
//! (u64), one `(lo f64, hi f64, cells u64)` triple per spatial axis and one
//! for time, then `p` and `ε` (f64), then the nodal values (f64) in the
//! field's own order: time level outermost, then `i`, then `j`.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{Axis, Grid, SpaceTimeField};

pub const MAGIC: &[u8; 6] = b"PLAPF1";

/// Parameters stored next to the values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldHeader {
    pub p: f64,
    pub eps: f64,
}

/// A field read back from disk, with any validation warnings.
#[derive(Clone, Debug)]
pub struct LoadedField {
    pub field: SpaceTimeField,
    pub header: FieldHeader,
    pub warnings: Vec<String>,
}

pub fn encode_field(field: &SpaceTimeField, p: f64, eps: f64) -> Vec<u8> {
    let grid = field.grid();
    let mut buf = Vec::with_capacity(64 + 8 * field.values().len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(grid.dim() as u64).to_le_bytes());
    for axis in grid.space_axes().iter().chain(std::iter::once(grid.time_axis())) {
        buf.extend_from_slice(&axis.lo.to_le_bytes());
        buf.extend_from_slice(&axis.hi.to_le_bytes());
        buf.extend_from_slice(&(axis.cells as u64).to_le_bytes());
    }
    buf.extend_from_slice(&p.to_le_bytes());
    buf.extend_from_slice(&eps.to_le_bytes());
    for v in field.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn export_field(field: &SpaceTimeField, p: f64, eps: f64, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_field(field, p, eps))?;
    f.sync_all()?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, section: &'static str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Truncated { section });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u64(&mut self, section: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, section)?.try_into().unwrap()))
    }

    fn f64(&mut self, section: &'static str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, section)?.try_into().unwrap()))
    }

    fn axis(&mut self, section: &'static str) -> Result<Axis> {
        let lo = self.f64(section)?;
        let hi = self.f64(section)?;
        let cells = self.u64(section)?;
        let cells = usize::try_from(cells)
            .map_err(|_| Error::MalformedFile(format!("{section}: cell count {cells} too large")))?;
        Ok(Axis::new(lo, hi, cells))
    }
}

pub fn decode_field(bytes: &[u8]) -> Result<LoadedField> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(Error::MalformedFile("bad magic, expected PLAPF1".into()));
    }
    let dim = r.u64("dimension")?;
    if !(1..=2).contains(&dim) {
        return Err(Error::MalformedFile(format!("dimension must be 1 or 2, got {dim}")));
    }
    let mut space = vec![r.axis("x axis")?];
    if dim == 2 {
        space.push(r.axis("y axis")?);
    }
    let time = r.axis("time axis")?;
    let p = r.f64("p")?;
    let eps = r.f64("eps")?;
    let grid = Grid::new(space, time).map_err(|e| Error::MalformedFile(e.to_string()))?;
    let raw = r.take(grid.len() * 8, "values")?;
    if r.pos != bytes.len() {
        return Err(Error::MalformedFile(format!(
            "{} trailing bytes after the values",
            bytes.len() - r.pos
        )));
    }
    let values = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut warnings = Vec::new();
    if !(p > 1.0 && p <= 2.0) {
        warnings.push(format!("header p = {p} lies outside (1, 2]"));
    }
    if !(eps >= 0.0) {
        warnings.push(format!("header eps = {eps} is negative"));
    }
    Ok(LoadedField {
        field: SpaceTimeField::from_values(&grid, values)?,
        header: FieldHeader { p, eps },
        warnings,
    })
}

pub fn import_field(path: &Path) -> Result<LoadedField> {
    decode_field(&fs::read(path)?)
}
