//! Voxel targets, orthographic view rendering, MNIST conversion,
//! random-assembly generation, brick budgets, and the image/dataset file
//! formats (PBM P1 bitmaps, IDX ingestion, JSON-lines records).

use crate::assembly::{init_state, transition, AssemblyGraph, BrickAction};
use crate::error::{Error, Result};
use crate::geometry::OffsetSet;
use crate::masks::{compute_masks, MaskMode};
use crate::voxel::{Bounds, VoxelGrid};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Read, Write};

/// A binary image, row-major, row 0 at the top.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<bool>,
}

impl BinaryImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, pixels: vec![false; width * height] }
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> bool {
        self.pixels[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, col: usize, row: usize, v: bool) {
        self.pixels[row * self.width + col] = v;
    }

    pub fn count_on(&self) -> usize {
        self.pixels.iter().filter(|p| **p).count()
    }

    /// Writes the plain-bitmap P1 format.
    pub fn write_p1<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "P1")?;
        writeln!(w, "{} {}", self.width, self.height)?;
        for row in 0..self.height {
            let line: Vec<&str> =
                (0..self.width).map(|c| if self.get(c, row) { "1" } else { "0" }).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        Ok(())
    }

    pub fn read_p1<R: BufRead>(r: &mut R) -> Result<Self> {
        let mut text = String::new();
        r.read_to_string(&mut text)?;
        let mut tokens = text.split_whitespace();
        if tokens.next() != Some("P1") {
            return Err(Error::Parse { msg: "expected P1 magic".into(), offset: 0 });
        }
        let parse = |t: Option<&str>| -> Result<usize> {
            t.and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Parse { msg: "bad P1 header".into(), offset: 2 })
        };
        let width = parse(tokens.next())?;
        let height = parse(tokens.next())?;
        let mut img = BinaryImage::new(width, height);
        for i in 0..width * height {
            match tokens.next() {
                Some("0") => {}
                Some("1") => img.pixels[i] = true,
                _ => return Err(Error::Parse { msg: "short or bad P1 body".into(), offset: 2 }),
            }
        }
        Ok(img)
    }

    pub fn write_path(&self, path: &std::path::Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_p1(&mut f)
    }

    pub fn read_path(path: &std::path::Path) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_p1(&mut f)
    }
}

/// Reads an IDX ubyte image file (magic 0x00000803): returns (rows, cols,
/// images).
pub fn read_idx_images<R: Read>(r: &mut R) -> Result<(usize, usize, Vec<Vec<u8>>)> {
    let mut header = [0u8; 16];
    r.read_exact(&mut header)?;
    let magic = u32::from_be_bytes(header[0..4].try_into().unwrap());
    if magic != 0x0000_0803 {
        return Err(Error::Parse { msg: format!("bad IDX image magic {magic:#x}"), offset: 0 });
    }
    let count = u32::from_be_bytes(header[4..8].try_into().unwrap()) as usize;
    let rows = u32::from_be_bytes(header[8..12].try_into().unwrap()) as usize;
    let cols = u32::from_be_bytes(header[12..16].try_into().unwrap()) as usize;
    let mut images = Vec::with_capacity(count);
    for i in 0..count {
        let mut buf = vec![0u8; rows * cols];
        r.read_exact(&mut buf).map_err(|_| Error::Parse {
            msg: format!("truncated IDX file at image {i}"),
            offset: 16 + i * rows * cols,
        })?;
        images.push(buf);
    }
    Ok((rows, cols, images))
}

/// Reads an IDX ubyte label file (magic 0x00000801).
pub fn read_idx_labels<R: Read>(r: &mut R) -> Result<Vec<u8>> {
    let mut header = [0u8; 8];
    r.read_exact(&mut header)?;
    let magic = u32::from_be_bytes(header[0..4].try_into().unwrap());
    if magic != 0x0000_0801 {
        return Err(Error::Parse { msg: format!("bad IDX label magic {magic:#x}"), offset: 0 });
    }
    let count = u32::from_be_bytes(header[4..8].try_into().unwrap()) as usize;
    let mut labels = vec![0u8; count];
    r.read_exact(&mut labels)
        .map_err(|_| Error::Parse { msg: "truncated IDX label file".into(), offset: 8 })?;
    Ok(labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMode {
    Mnist,
    RandomAssembly,
    ModelNet,
}

/// The target information handed to the agent: binary views, optionally the
/// exact volume (for volume-oracle planners), the brick budget, and the
/// world bounds tying construction coordinates to the target grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetInfo {
    pub id: String,
    pub mode: TargetMode,
    /// Exactly 1 view for Mnist, exactly 3 otherwise.
    pub views: Vec<BinaryImage>,
    pub exact_volume: Option<VoxelGrid>,
    pub budget: usize,
    pub bounds: Bounds,
    /// Set when view content exceeded the 14x14 crop window.
    pub clipped: bool,
}

pub const VIEW_SIZE: usize = 14;
pub const WORLD_SIZE: usize = 32;

/// Default world bounds per mode, placing the initial brick (anchored at the
/// construction origin) near the bottom center of the target grid.
pub fn default_bounds(mode: TargetMode) -> Bounds {
    match mode {
        // 4 (x, depth along the brick length) x 14 (y, lateral) x 14 (z).
        TargetMode::Mnist => Bounds::new([0, -6, 0], [4, 8, 14]),
        // 32^3 with the initial brick footprint center at the grid xy center.
        TargetMode::RandomAssembly | TargetMode::ModelNet => {
            Bounds::new([-14, -15, 0], [18, 17, 32])
        }
    }
}

/// Maps every brick footprint onto the lattice. Panics if a brick lies
/// outside bounds (cannot occur after valid transitions).
pub fn voxelize(graph: &AssemblyGraph, bounds: &Bounds) -> VoxelGrid {
    let mut grid = VoxelGrid::new(bounds.dims());
    for node in &graph.nodes {
        for c in node.footprint() {
            assert!(bounds.contains(c), "brick cell {c:?} outside bounds");
            grid.set(
                (c[0] - bounds.min[0]) as usize,
                (c[1] - bounds.min[1]) as usize,
                (c[2] - bounds.min[2]) as usize,
            true,
            );
        }
    }
    grid
}

/// Start of a clamp-to-edge centered crop window. `center2` is twice the
/// occupied bounding-box center.
fn crop_start(center2: usize, dim: usize, window: usize) -> usize {
    if dim <= window {
        return 0;
    }
    let ideal = (center2 as i64 + 1) / 2 - window as i64 / 2;
    ideal.clamp(0, (dim - window) as i64) as usize
}

/// Orthographic OR-projection of the grid along `axis` (0 = x for the right
/// view, 1 = y for the front view). Column = the remaining horizontal axis,
/// row 0 = the top z layer.
fn project_side(grid: &VoxelGrid, axis: usize) -> BinaryImage {
    let [nx, ny, nz] = grid.dims;
    let cols = if axis == 0 { ny } else { nx };
    let mut img = BinaryImage::new(cols, nz);
    for z in 0..nz {
        for c in 0..cols {
            let on = match axis {
                0 => (0..nx).any(|x| grid.get(x, c, z)),
                _ => (0..ny).any(|y| grid.get(c, y, z)),
            };
            img.set(c, nz - 1 - z, on);
        }
    }
    img
}

/// Top view: projection along -z; column = x, row = y.
fn project_top(grid: &VoxelGrid) -> BinaryImage {
    let [nx, ny, nz] = grid.dims;
    let mut img = BinaryImage::new(nx, ny);
    for y in 0..ny {
        for x in 0..nx {
            let on = (0..nz).any(|z| grid.get(x, y, z));
            img.set(x, y, on);
        }
    }
    img
}

/// Crops to `VIEW_SIZE` square centered at the occupied bounding-box center,
/// clamped to image edges. Returns the crop and whether content was clipped.
fn crop_view(img: &BinaryImage) -> (BinaryImage, bool) {
    let mut lo = [usize::MAX; 2];
    let mut hi = [0usize; 2];
    let mut any = false;
    for row in 0..img.height {
        for col in 0..img.width {
            if img.get(col, row) {
                any = true;
                lo[0] = lo[0].min(col);
                hi[0] = hi[0].max(col);
                lo[1] = lo[1].min(row);
                hi[1] = hi[1].max(row);
            }
        }
    }
    let mut out = BinaryImage::new(VIEW_SIZE, VIEW_SIZE);
    if !any {
        return (out, false);
    }
    let c0 = crop_start(lo[0] + hi[0], img.width, VIEW_SIZE);
    let r0 = crop_start(lo[1] + hi[1], img.height, VIEW_SIZE);
    let mut clipped = false;
    for row in 0..img.height {
        for col in 0..img.width {
            if !img.get(col, row) {
                continue;
            }
            let in_window = (c0..c0 + VIEW_SIZE).contains(&col) && (r0..r0 + VIEW_SIZE).contains(&row);
            if in_window {
                out.set(col - c0, row - r0, true);
            } else {
                clipped = true;
            }
        }
    }
    (out, clipped)
}

/// Front (+y), right (+x), and top (-z) orthographic views, each cropped to
/// 14x14 centered on the occupied bounding box. An empty grid yields
/// all-zero views.
pub fn project_views(grid: &VoxelGrid) -> (Vec<BinaryImage>, bool) {
    let (front, c1) = crop_view(&project_side(grid, 1));
    let (right, c2) = crop_view(&project_side(grid, 0));
    let (top, c3) = crop_view(&project_top(grid));
    (vec![front, right, top], c1 || c2 || c3)
}

/// The single MNIST view: projection along the depth (x) axis, uncropped
/// (the grid's y/z extents are already 14x14).
pub fn project_mnist_view(grid: &VoxelGrid) -> BinaryImage {
    let [nx, ny, nz] = grid.dims;
    let mut img = BinaryImage::new(ny, nz);
    for z in 0..nz {
        for y in 0..ny {
            let on = (0..nx).any(|x| grid.get(x, y, z));
            img.set(y, nz - 1 - z, on);
        }
    }
    img
}

/// Translates grid content so min occupied z = 0 and the horizontal
/// bounding-box center lands within one cell of the grid center.
fn normalize_bottom_center(grid: &VoxelGrid) -> VoxelGrid {
    let Some((lo, hi)) = grid.occupied_bbox() else {
        return grid.clone();
    };
    let dims = grid.dims;
    let mut shift = [0i64; 3];
    for k in 0..2 {
        let center2 = (lo[k] + hi[k]) as i64; // twice the bbox center
        let grid_center2 = (dims[k] as i64) - 1;
        shift[k] = (grid_center2 - center2).div_euclid(2);
    }
    shift[2] = -(lo[2] as i64);
    let mut out = VoxelGrid::new(dims);
    for c in grid.occupied() {
        let nc = [
            c[0] as i64 + shift[0],
            c[1] as i64 + shift[1],
            c[2] as i64 + shift[2],
        ];
        if (0..3).all(|k| nc[k] >= 0 && (nc[k] as usize) < dims[k]) {
            out.set(nc[0] as usize, nc[1] as usize, nc[2] as usize, true);
        }
    }
    out
}

/// Binarizes a 28x28 grayscale image (threshold 128), 2x2 max-pools it to
/// 14x14, extrudes to depth 4 along the brick-length axis, and normalizes to
/// the bottom center of the MNIST grid.
pub fn mnist_to_target(image28: &[u8], id: &str) -> Result<TargetInfo> {
    assert_eq!(image28.len(), 28 * 28, "expected a 28x28 image");
    let mut pooled = BinaryImage::new(VIEW_SIZE, VIEW_SIZE);
    for row in 0..VIEW_SIZE {
        for col in 0..VIEW_SIZE {
            let on = (0..2).any(|dr| {
                (0..2).any(|dc| image28[(2 * row + dr) * 28 + 2 * col + dc] >= 128)
            });
            pooled.set(col, row, on);
        }
    }
    let on_pixels = pooled.count_on();
    if on_pixels == 0 {
        return Err(Error::EmptyTarget);
    }
    let budget = (1.1 * on_pixels as f64).ceil() as usize;
    let bounds = default_bounds(TargetMode::Mnist);
    let dims = bounds.dims();
    let mut grid = VoxelGrid::new(dims);
    for row in 0..VIEW_SIZE {
        for col in 0..VIEW_SIZE {
            if pooled.get(col, row) {
                let z = VIEW_SIZE - 1 - row;
                for x in 0..dims[0] {
                    grid.set(x, col, z, true);
                }
            }
        }
    }
    let grid = normalize_bottom_center(&grid);
    let view = project_mnist_view(&grid);
    Ok(TargetInfo {
        id: id.to_string(),
        mode: TargetMode::Mnist,
        views: vec![view],
        exact_volume: Some(grid),
        budget,
        bounds,
        clipped: false,
    })
}

/// Wraps a pre-voxelized 32^3 grid as a ModelNet target.
pub fn modelnet_target(volume: &VoxelGrid, budget: usize, id: &str) -> Result<TargetInfo> {
    if volume.dims != [WORLD_SIZE; 3] {
        return Err(Error::Config(format!(
            "ModelNet volume must be {WORLD_SIZE}^3, got {:?}",
            volume.dims
        )));
    }
    if volume.is_empty() {
        return Err(Error::EmptyTarget);
    }
    if budget > 60 {
        return Err(Error::Config(format!("ModelNet brick budget {budget} exceeds 60")));
    }
    let grid = normalize_bottom_center(volume);
    let (views, clipped) = project_views(&grid);
    Ok(TargetInfo {
        id: id.to_string(),
        mode: TargetMode::ModelNet,
        views,
        exact_volume: Some(grid),
        budget,
        bounds: default_bounds(TargetMode::ModelNet),
        clipped,
    })
}

/// A randomly generated assembly together with its ground-truth action
/// sequence and derived target record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratedAssembly {
    pub graph: AssemblyGraph,
    /// The generating (pivot, offset) sequence; replaying it from the initial
    /// state reproduces `graph`.
    pub actions: Vec<BrickAction>,
    pub target: TargetInfo,
    /// Dead-end episodes discarded before this sample succeeded.
    pub resampled: usize,
}

/// Generates one random assembly by uniformly sampling oracle-valid actions
/// until the drawn brick count is reached. Dead ends are resampled and
/// counted.
pub fn gen_random_assembly<R: Rng>(
    rng: &mut R,
    brick_count_range: (usize, usize),
    offset_set: &OffsetSet,
    id: &str,
) -> GeneratedAssembly {
    let bounds = default_bounds(TargetMode::RandomAssembly);
    let mut resampled = 0usize;
    loop {
        let count = rng.gen_range(brick_count_range.0..=brick_count_range.1);
        let mut state = init_state(count).unwrap();
        let mut actions = Vec::new();
        let mut dead_end = false;
        while state.graph.len() < count {
            let masks = compute_masks(&state.graph, offset_set, &bounds, MaskMode::Accelerated);
            let candidates = masks.valid_actions();
            if candidates.is_empty() {
                dead_end = true;
                break;
            }
            let a = candidates[rng.gen_range(0..candidates.len())];
            state = transition(&state, &a, offset_set, &bounds).unwrap();
            actions.push(a);
        }
        if dead_end {
            resampled += 1;
            continue;
        }
        let grid = voxelize(&state.graph, &bounds);
        // Bottom-center normalization is realized by translating the world
        // bounds, keeping construction coordinates origin-rooted so replaying
        // `actions` reproduces the target exactly.
        let (lo, hi) = grid.occupied_bbox().unwrap();
        let dims = grid.dims;
        let mut min = bounds.min;
        for k in 0..2 {
            let center2 = (lo[k] + hi[k]) as i64;
            let grid_center2 = dims[k] as i64 - 1;
            min[k] += ((center2 - grid_center2).div_euclid(2)) as i32;
        }
        min[2] += lo[2] as i32;
        let norm_bounds = Bounds::new(
            min,
            [min[0] + dims[0] as i32, min[1] + dims[1] as i32, min[2] + dims[2] as i32],
        );
        let grid = voxelize(&state.graph, &norm_bounds);
        let (views, clipped) = project_views(&grid);
        let target = TargetInfo {
            id: id.to_string(),
            mode: TargetMode::RandomAssembly,
            views,
            exact_volume: Some(grid),
            budget: count,
            bounds: norm_bounds,
            clipped,
        };
        return GeneratedAssembly { graph: state.graph, actions, target, resampled };
    }
}

/// The per-target brick budget.
pub fn brick_budget(target: &TargetInfo) -> usize {
    target.budget
}

/// A JSON-lines dataset record pointing at view/volume files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub mode: TargetMode,
    pub views: Vec<String>,
    pub volume: String,
    pub budget: usize,
    pub bounds: Bounds,
    pub clipped: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub actions: Vec<BrickAction>,
}
