//! Dense binary occupancy grids over a bounded integer lattice, plus the
//! BBVOX1 file format.
//!
//! Cell ordering is documented and fixed: x fastest, then y, then z, i.e.
//! `index = x + nx * (y + ny * z)`.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

/// Axis-aligned world bounds in brick/cell coordinates: cells with
/// `min[k] <= c[k] < max[k]` are inside.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: [i32; 3],
    pub max: [i32; 3],
}

impl Bounds {
    pub fn new(min: [i32; 3], max: [i32; 3]) -> Self {
        debug_assert!((0..3).all(|k| min[k] < max[k]));
        Self { min, max }
    }

    /// A cube of side `n` with its cell origin at `min`.
    pub fn cube(min: [i32; 3], n: i32) -> Self {
        Self::new(min, [min[0] + n, min[1] + n, min[2] + n])
    }

    pub fn dims(&self) -> [usize; 3] {
        [
            (self.max[0] - self.min[0]) as usize,
            (self.max[1] - self.min[1]) as usize,
            (self.max[2] - self.min[2]) as usize,
        ]
    }

    pub fn contains(&self, c: [i32; 3]) -> bool {
        (0..3).all(|k| self.min[k] <= c[k] && c[k] < self.max[k])
    }
}

/// Dense binary occupancy over `nx * ny * nz` cells.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoxelGrid {
    pub dims: [usize; 3],
    bits: Vec<bool>,
}

impl VoxelGrid {
    pub fn new(dims: [usize; 3]) -> Self {
        Self { dims, bits: vec![false; dims[0] * dims[1] * dims[2]] }
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        debug_assert!(x < self.dims[0] && y < self.dims[1] && z < self.dims[2]);
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.bits[self.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: bool) {
        let i = self.index(x, y, z);
        self.bits[i] = v;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    /// Number of occupied cells.
    pub fn volume(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    /// Iterator over occupied cell coordinates.
    pub fn occupied(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        let [nx, ny, _] = self.dims;
        self.bits.iter().enumerate().filter(|(_, b)| **b).map(move |(i, _)| {
            let x = i % nx;
            let y = (i / nx) % ny;
            let z = i / (nx * ny);
            [x, y, z]
        })
    }

    /// Inclusive bounding box of occupied cells, or `None` when empty.
    pub fn occupied_bbox(&self) -> Option<([usize; 3], [usize; 3])> {
        let mut lo = [usize::MAX; 3];
        let mut hi = [0usize; 3];
        let mut any = false;
        for c in self.occupied() {
            any = true;
            for k in 0..3 {
                lo[k] = lo[k].min(c[k]);
                hi[k] = hi[k].max(c[k]);
            }
        }
        any.then_some((lo, hi))
    }

    /// Writes the BBVOX1 format: ASCII header `BBVOX1 nx ny nz`, a newline,
    /// then one '0'/'1' character per cell in index order.
    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "BBVOX1 {} {} {}", self.dims[0], self.dims[1], self.dims[2])?;
        let body: String = self.bits.iter().map(|b| if *b { '1' } else { '0' }).collect();
        w.write_all(body.as_bytes())?;
        writeln!(w)?;
        Ok(())
    }

    /// Reads the BBVOX1 format, reporting the byte offset of any malformation.
    pub fn read<R: BufRead>(r: &mut R) -> Result<Self> {
        let mut header = String::new();
        r.read_line(&mut header)?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 4 || parts[0] != "BBVOX1" {
            return Err(Error::Parse { msg: format!("bad header {header:?}"), offset: 0 });
        }
        let mut dims = [0usize; 3];
        for k in 0..3 {
            dims[k] = parts[k + 1].parse().map_err(|_| Error::Parse {
                msg: format!("bad dimension {:?}", parts[k + 1]),
                offset: 7,
            })?;
        }
        let n = dims[0] * dims[1] * dims[2];
        let mut body = Vec::new();
        r.read_to_end(&mut body)?;
        let mut bits = Vec::with_capacity(n);
        for (i, &b) in body.iter().enumerate() {
            match b {
                b'0' => bits.push(false),
                b'1' => bits.push(true),
                b'\n' | b'\r' => continue,
                other => {
                    return Err(Error::Parse {
                        msg: format!("unexpected byte {other:#x}"),
                        offset: header.len() + i,
                    })
                }
            }
        }
        if bits.len() != n {
            return Err(Error::Parse {
                msg: format!("expected {n} cells, got {}", bits.len()),
                offset: header.len() + body.len(),
            });
        }
        Ok(Self { dims, bits })
    }

    pub fn write_path(&self, path: &std::path::Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write(&mut f)
    }

    pub fn read_path(path: &std::path::Path) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read(&mut f)
    }
}
