//! 2x4-brick geometry: poses, footprints, overlap/connection predicates and the
//! four relative-offset sets.
//!
//! Coordinates are integer stud units horizontally and brick heights
//! vertically. A pose stores the minimum-corner anchor of its footprint so all
//! coordinates stay integral; direction 0 spans 4 studs along x and 2 along y,
//! direction 1 swaps the spans. Every brick is one level tall.

use serde::{Deserialize, Serialize};

/// One brick's placement: minimum-corner anchor plus binary direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BrickPose {
    pub anchor: [i32; 3],
    pub dir: u8,
}

impl BrickPose {
    pub fn new(x: i32, y: i32, z: i32, dir: u8) -> Self {
        debug_assert!(dir <= 1);
        Self { anchor: [x, y, z], dir }
    }

    /// Footprint extent along x and y (z extent is always 1).
    pub fn spans(&self) -> (i32, i32) {
        if self.dir == 0 {
            (4, 2)
        } else {
            (2, 4)
        }
    }

    /// The 8 lattice cells covered by this brick.
    pub fn footprint(&self) -> [[i32; 3]; 8] {
        let (sx, sy) = self.spans();
        let mut cells = [[0i32; 3]; 8];
        let mut k = 0;
        for dy in 0..sy {
            for dx in 0..sx {
                cells[k] = [self.anchor[0] + dx, self.anchor[1] + dy, self.anchor[2]];
                k += 1;
            }
        }
        cells
    }

    /// Node feature `(x, y, z, d)` as exported to the models.
    pub fn feature(&self) -> [i32; 4] {
        [self.anchor[0], self.anchor[1], self.anchor[2], self.dir as i32]
    }

    pub fn translated(&self, t: [i32; 3]) -> Self {
        Self {
            anchor: [self.anchor[0] + t[0], self.anchor[1] + t[1], self.anchor[2] + t[2]],
            dir: self.dir,
        }
    }
}

/// Number of studs shared by the xy-projections of the two footprints.
fn xy_overlap_studs(a: &BrickPose, b: &BrickPose) -> i32 {
    let (asx, asy) = a.spans();
    let (bsx, bsy) = b.spans();
    let ox = (a.anchor[0] + asx).min(b.anchor[0] + bsx) - a.anchor[0].max(b.anchor[0]);
    let oy = (a.anchor[1] + asy).min(b.anchor[1] + bsy) - a.anchor[1].max(b.anchor[1]);
    if ox <= 0 || oy <= 0 {
        0
    } else {
        ox * oy
    }
}

/// True iff the two footprints share at least one cell.
pub fn overlaps(a: &BrickPose, b: &BrickPose) -> bool {
    a.anchor[2] == b.anchor[2] && xy_overlap_studs(a, b) > 0
}

/// True iff the bricks sit on adjacent levels and their xy-projections share
/// at least one stud (i.e., they are in direct stud contact).
pub fn connects(a: &BrickPose, b: &BrickPose) -> bool {
    (a.anchor[2] - b.anchor[2]).abs() == 1 && xy_overlap_studs(a, b) > 0
}

/// Relative placement of the next brick with respect to a pivot brick.
///
/// The horizontal delta is expressed in the pivot's local frame: the first
/// component runs along the pivot's long axis, the second along its short
/// axis. This keeps one finite offset set valid for pivots of either
/// direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Offset {
    /// (d_long, d_short, dz) with dz in {+1, -1}.
    pub delta: [i32; 3],
    /// Direction change: the new brick's direction is `pivot.dir XOR ddir`.
    pub ddir: u8,
}

/// Applies an offset to a pivot pose. The result always connects to the pivot
/// when the offset was drawn from one of the enumerated sets.
pub fn apply_offset(pivot: &BrickPose, off: &Offset) -> BrickPose {
    // Rotate the local-frame delta into world axes.
    let (dx, dy) = if pivot.dir == 0 {
        (off.delta[0], off.delta[1])
    } else {
        (off.delta[1], off.delta[0])
    };
    BrickPose {
        anchor: [
            pivot.anchor[0] + dx,
            pivot.anchor[1] + dy,
            pivot.anchor[2] + off.delta[2],
        ],
        dir: pivot.dir ^ off.ddir,
    }
}

/// Identifier of one of the four offset sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffsetSetId {
    /// All connecting placements: 92 offsets (46 up, 46 down).
    Full,
    /// Up only, >= 4 shared studs: 16 offsets.
    RandomAssembly,
    /// Up and down, >= 4 shared studs: 32 offsets.
    ModelNet,
    /// Same orientation, no long-axis shift, short-axis shift in {-1,0,1},
    /// up or down: 6 offsets.
    Mnist,
}

impl std::str::FromStr for OffsetSetId {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "full" => Ok(Self::Full),
            "random_assembly" => Ok(Self::RandomAssembly),
            "modelnet" => Ok(Self::ModelNet),
            "mnist" => Ok(Self::Mnist),
            other => Err(format!("unknown offset set: {other}")),
        }
    }
}

/// An ordered offset set. Action indices depend on the ordering, which is
/// fixed: lexicographic by (dz, dx, dy, ddir).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OffsetSet {
    pub id: OffsetSetId,
    pub offsets: Vec<Offset>,
}

impl OffsetSet {
    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }
}

/// Enumerates one of the four offset sets.
///
/// Membership rules, relative to a pivot with direction 0 (the rules are
/// direction-covariant because `apply_offset` XORs directions):
/// - `Full`: dz in {+1,-1} and the new footprint shares >= 1 stud in xy.
/// - `RandomAssembly`: dz = +1 only and >= 4 shared studs.
/// - `ModelNet`: dz in {+1,-1} and >= 4 shared studs.
/// - `Mnist`: same orientation, zero long-axis shift, short-axis shift in
///   {-1, 0, +1}, dz in {+1,-1}.
pub fn enumerate_offsets(id: OffsetSetId) -> OffsetSet {
    let pivot = BrickPose::new(0, 0, 0, 0);
    let mut offsets = Vec::new();
    for dz in [-1i32, 1] {
        for dx in -4i32..=4 {
            for dy in -4i32..=4 {
                for ddir in 0u8..=1 {
                    let off = Offset { delta: [dx, dy, dz], ddir };
                    let cand = apply_offset(&pivot, &off);
                    let studs = xy_overlap_studs(&pivot, &cand);
                    let keep = match id {
                        OffsetSetId::Full => studs >= 1,
                        OffsetSetId::RandomAssembly => dz == 1 && studs >= 4,
                        OffsetSetId::ModelNet => studs >= 4,
                        OffsetSetId::Mnist => ddir == 0 && dx == 0 && dy.abs() <= 1,
                    };
                    if keep {
                        offsets.push(off);
                    }
                }
            }
        }
    }
    offsets.sort_by_key(|o| (o.delta[2], o.delta[0], o.delta[1], o.ddir));
    OffsetSet { id, offsets }
}
