//! Binary grid files (`.lsg`): a 16-byte header (12-byte magic, u32
//! version), the grid spec (3 x f64 origin, f64 spacing, 3 x u32 dims), then
//! one f32 per node, x-fastest. Everything little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::levelset::LevelSet;

pub const MAGIC: &[u8; 12] = b"MILLFORGELSG";
pub const VERSION: u32 = 1;

pub fn write_grid(mut w: impl Write, grid: &GridSpec, values: &[f64]) -> Result<()> {
    if values.len() != grid.node_count() {
        return Err(Error::InvalidArgument(format!("{} values for {} nodes", values.len(), grid.node_count())));
    }
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for o in grid.origin {
        w.write_all(&o.to_le_bytes())?;
    }
    w.write_all(&grid.spacing.to_le_bytes())?;
    for d in grid.dims {
        let d = u32::try_from(d).map_err(|_| Error::InvalidArgument(format!("dimension {d} does not fit in u32")))?;
        w.write_all(&d.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(values.len() * 4);
    for &v in values {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_grid(mut r: impl Read) -> Result<(GridSpec, Vec<f32>)> {
    let mut header = [0u8; 16];
    r.read_exact(&mut header).map_err(|_| Error::Format("truncated header".into()))?;
    if &header[..12] != MAGIC {
        return Err(Error::Format("not a level-set grid file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(header[12..16].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let mut spec = [0u8; 44];
    r.read_exact(&mut spec).map_err(|_| Error::Format("truncated grid spec".into()))?;
    let f = |i: usize| f64::from_le_bytes(spec[8 * i..8 * i + 8].try_into().unwrap());
    let u = |i: usize| u32::from_le_bytes(spec[32 + 4 * i..36 + 4 * i].try_into().unwrap()) as usize;
    let grid = GridSpec::new([f(0), f(1), f(2)], f(3), [u(0), u(1), u(2)])?;
    let n = grid.node_count();
    let mut raw = vec![0u8; n * 4];
    r.read_exact(&mut raw).map_err(|_| Error::Format(format!("expected {n} values")))?;
    if r.read(&mut [0u8; 1])? != 0 {
        return Err(Error::Format("trailing bytes after values".into()));
    }
    let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((grid, values))
}

pub fn save_grid(path: &Path, grid: &GridSpec, values: &[f64]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_grid(&mut w, grid, values)?;
    w.flush()?;
    Ok(())
}

pub fn save_level_set(path: &Path, ls: &LevelSet) -> Result<()> {
    save_grid(path, ls.grid(), ls.values())
}

/// The band is not stored; it is recovered as the largest `|phi|`, which is
/// where far nodes are clamped.
pub fn load_level_set(path: &Path) -> Result<LevelSet> {
    let (grid, values) = read_grid(BufReader::new(File::open(path)?))?;
    let values: Vec<f64> = values.into_iter().map(f64::from).collect();
    let band = values.iter().fold(grid.h(), |m, v| m.max(v.abs()));
    LevelSet::from_values(grid, band, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Vec3;
    use crate::testkit::sphere;

    #[test]
    fn round_trip_is_bit_identical() {
        let grid = GridSpec::new([-3.5, 0.25, 1e3], 0.37, [7, 5, 9]).unwrap();
        let values: Vec<f64> = (0..grid.node_count()).map(|i| (i as f64 * 0.731).sin() * 1e-3 + i as f64).collect();
        let mut bytes = Vec::new();
        write_grid(&mut bytes, &grid, &values).unwrap();
        assert_eq!(bytes.len(), 16 + 44 + 4 * grid.node_count());
        let (g, back) = read_grid(bytes.as_slice()).unwrap();
        assert_eq!(g, grid);
        for (a, b) in values.iter().zip(&back) {
            assert_eq!((*a as f32).to_bits(), b.to_bits());
        }
        // A second trip through f32 changes nothing.
        let again: Vec<f64> = back.iter().map(|&v| v as f64).collect();
        let mut bytes2 = Vec::new();
        write_grid(&mut bytes2, &g, &again).unwrap();
        assert_eq!(bytes, bytes2);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let grid = GridSpec::new([0.0; 3], 1.0, [4, 4, 4]).unwrap();
        let mut bytes = Vec::new();
        write_grid(&mut bytes, &grid, &vec![1.0; 64]).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(read_grid(bad.as_slice()), Err(Error::Format(_))));
        assert!(matches!(read_grid(&bytes[..bytes.len() - 1]), Err(Error::Format(_))));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(read_grid(long.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn level_set_file_keeps_the_shape() {
        let grid = GridSpec::covering(Vec3::repeat(-6.0), Vec3::repeat(6.0), 0.5, 2).unwrap();
        let ls = LevelSet::from_fn(grid, 2.0, sphere(Vec3::zeros(), 4.0)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.lsg");
        save_level_set(&path, &ls).unwrap();
        let back = load_level_set(&path).unwrap();
        assert_eq!(back.band(), 2.0);
        for (a, b) in ls.values().iter().zip(back.values()) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
