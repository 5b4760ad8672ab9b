//! Binary graph dumps.
//!
//! All integers and floats are little endian. Layout:
//!
//! | field | type |
//! |---|---|
//! | magic `DARNWLK1` | 8 bytes |
//! | `d`, `j` | `u32`, `u32` |
//! | window radius `W` | `f64` |
//! | regular vertex count `n_r` | `u64` |
//! | star id, `u64::MAX` when absent | `u64` |
//! | adjacency entry count `2 · #edges` | `u64` |
//! | regular coordinates, `n_r · d` values in lattice units | `i32` |
//! | CSR offsets, one per vertex plus one | `u64` |
//! | CSR neighbour ids | `u32` |
//! | region JSON length, then UTF-8 bytes (length 0 when absent) | `u64`, bytes |
//! | collapsed point count, then `count · d` coordinates | `u64`, `i32` |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::DarningRegion;
use crate::lattice::DarnedLattice;

const MAGIC: &[u8; 8] = b"DARNWLK1";

pub fn write_graph(g: &DarnedLattice, out: &mut impl Write) -> std::io::Result<()> {
    let (coords, offsets, neighbors, collapsed) = g.raw_parts();
    out.write_all(MAGIC)?;
    out.write_all(&(g.dim() as u32).to_le_bytes())?;
    out.write_all(&g.level().to_le_bytes())?;
    out.write_all(&g.window_radius().to_le_bytes())?;
    out.write_all(&(g.num_regular() as u64).to_le_bytes())?;
    out.write_all(&g.star().map_or(u64::MAX, u64::from).to_le_bytes())?;
    out.write_all(&(neighbors.len() as u64).to_le_bytes())?;
    for c in coords {
        out.write_all(&c.to_le_bytes())?;
    }
    for &o in offsets {
        out.write_all(&(o as u64).to_le_bytes())?;
    }
    for n in neighbors {
        out.write_all(&n.to_le_bytes())?;
    }
    let region = match g.region() {
        Some(k) => serde_json::to_vec(k).map_err(std::io::Error::other)?,
        None => Vec::new(),
    };
    out.write_all(&(region.len() as u64).to_le_bytes())?;
    out.write_all(&region)?;
    out.write_all(&(g.collapsed_count() as u64).to_le_bytes())?;
    for c in collapsed {
        out.write_all(&c.to_le_bytes())?;
    }
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| Error::GraphFormat(format!("truncated file: {e}")))?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.bytes()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }

    fn len(&mut self, limit: u64, what: &str) -> Result<usize> {
        let n = self.u64()?;
        if n > limit {
            return Err(Error::GraphFormat(format!("{what} count {n} is implausible")));
        }
        Ok(n as usize)
    }
}

const LIMIT: u64 = 1 << 34;

pub fn read_graph(input: &mut impl Read) -> Result<DarnedLattice> {
    let mut r = Reader { inner: input };
    if &r.bytes::<8>()? != MAGIC {
        return Err(Error::GraphFormat("bad magic".into()));
    }
    let dim = r.u32()? as usize;
    let j = r.u32()?;
    let window = r.f64()?;
    if !(1..=8).contains(&dim) || !(1..=20).contains(&j) {
        return Err(Error::GraphFormat(format!("unsupported header d={dim}, j={j}")));
    }
    let half_width = (window * (1u64 << j) as f64).round() as i32;
    let num_regular = r.len(LIMIT, "vertex")?;
    let star = r.u64()?;
    let entries = r.len(LIMIT, "adjacency")?;
    let has_star = star != u64::MAX;
    if has_star && star != num_regular as u64 {
        return Err(Error::GraphFormat("star id must follow the regular vertices".into()));
    }
    let coords = (0..num_regular * dim).map(|_| r.i32()).collect::<Result<Vec<_>>>()?;
    let num_vertices = num_regular + usize::from(has_star);
    let offsets = (0..=num_vertices)
        .map(|_| r.u64().map(|o| o as usize))
        .collect::<Result<Vec<_>>>()?;
    let neighbors = (0..entries).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let region_len = r.len(LIMIT, "region byte")?;
    let mut region_bytes = vec![0u8; region_len];
    r.inner
        .read_exact(&mut region_bytes)
        .map_err(|e| Error::GraphFormat(format!("truncated region: {e}")))?;
    let region: Option<DarningRegion> = if region_len == 0 {
        None
    } else {
        Some(serde_json::from_slice(&region_bytes)?)
    };
    if region.is_some() != has_star {
        return Err(Error::GraphFormat("region and star presence disagree".into()));
    }
    let collapsed_count = r.len(LIMIT, "collapsed point")?;
    let collapsed = (0..collapsed_count * dim).map(|_| r.i32()).collect::<Result<Vec<_>>>()?;
    DarnedLattice::from_raw_parts(region, dim, j, half_width, coords, offsets, neighbors, collapsed)
}

pub fn save_graph(g: &DarnedLattice, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_graph(g, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_graph(path: &Path) -> Result<DarnedLattice> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_graph(&mut BufReader::new(file))
}
