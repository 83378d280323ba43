//! Binary scalar-grid files: magic `DMCG`, little-endian u32 resolution,
//! then `r³` little-endian f32 values in x-fastest order. Values are
//! widened to f64 on load; writing rounds to f32, so a write→read→write
//! cycle is byte-identical.

use crate::dpsr::IndicatorGrid;
use crate::{Error, Result};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"DMCG";

pub fn write_grid(path: &Path, grid: &IndicatorGrid) -> Result<()> {
    let r = grid.resolution();
    if r > u32::MAX as usize {
        return Err(Error::invalid("grid resolution exceeds u32 range"));
    }
    for (i, &v) in grid.data.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::invalid(format!(
                "grid value at linear index {i} is not finite"
            )));
        }
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(r as u32)?;
    for &v in &grid.data {
        w.write_f32::<LittleEndian>(v as f32)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_grid(path: &Path) -> Result<IndicatorGrid> {
    let mut rd = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    rd.read_exact(&mut magic).map_err(|_| {
        Error::parse_at_offset(0, "file too short for grid magic")
    })?;
    if &magic != MAGIC {
        return Err(Error::parse_at_offset(
            0,
            format!("bad magic {magic:?}, expected {MAGIC:?}"),
        ));
    }
    let r = rd
        .read_u32::<LittleEndian>()
        .map_err(|_| Error::parse_at_offset(4, "file too short for resolution"))? as usize;
    if r == 0 {
        return Err(Error::parse_at_offset(4, "grid resolution is zero"));
    }
    let n = r
        .checked_mul(r)
        .and_then(|v| v.checked_mul(r))
        .ok_or_else(|| Error::parse_at_offset(4, "grid resolution overflows"))?;
    let mut data = Vec::with_capacity(n);
    for i in 0..n {
        let v = rd.read_f32::<LittleEndian>().map_err(|_| {
            Error::parse_at_offset(8 + 4 * i as u64, format!("truncated grid data at value {i}"))
        })?;
        data.push(v as f64);
    }
    let mut extra = [0u8; 1];
    if rd.read(&mut extra)? != 0 {
        return Err(Error::parse_at_offset(
            8 + 4 * n as u64,
            "trailing bytes after grid data",
        ));
    }
    IndicatorGrid::from_data(r, data)
}
