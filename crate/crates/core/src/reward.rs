//! IoU between voxel grids, the one-step IoU change, and the 50%-gated step
//! reward, plus an incremental counter that maintains intersection/union in
//! O(8) per placed brick.

use crate::voxel::VoxelGrid;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RewardConfig {
    /// Fraction of a new brick's 8 cells that must lie on the target for the
    /// step reward to pass the gate.
    pub gate_fraction: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self { gate_fraction: 0.5 }
    }
}

/// Intersection over union of two equal-sized grids. Defined as 0 when both
/// are empty (this cannot arise after environment reset).
pub fn iou(a: &VoxelGrid, b: &VoxelGrid) -> f64 {
    assert_eq!(a.dims, b.dims, "iou: dimension mismatch {:?} vs {:?}", a.dims, b.dims);
    let mut inter = 0u64;
    let mut union = 0u64;
    for (x, y) in a.bits().iter().zip(b.bits().iter()) {
        inter += (*x && *y) as u64;
        union += (*x || *y) as u64;
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// IoU(cur, target) - IoU(prev, target); may be negative.
pub fn delta_iou(prev: &VoxelGrid, cur: &VoxelGrid, target: &VoxelGrid) -> f64 {
    iou(cur, target) - iou(prev, target)
}

/// Tracks (|C ∩ T|, |C ∪ T|) incrementally as bricks are added, avoiding a
/// full grid rescan per step. Cells must never be added twice (bricks do not
/// overlap after valid transitions).
#[derive(Debug, Clone)]
pub struct IouTracker {
    target_volume: u64,
    intersection: u64,
    assembled: u64,
}

impl IouTracker {
    pub fn new(target: &VoxelGrid) -> Self {
        Self { target_volume: target.volume() as u64, intersection: 0, assembled: 0 }
    }

    /// Registers `on_target` newly occupied cells that lie on the target out
    /// of `added` total newly occupied cells.
    pub fn add_cells(&mut self, added: u64, on_target: u64) {
        debug_assert!(on_target <= added);
        self.assembled += added;
        self.intersection += on_target;
    }

    pub fn iou(&self) -> f64 {
        let union = self.target_volume + self.assembled - self.intersection;
        if union == 0 {
            0.0
        } else {
            self.intersection as f64 / union as f64
        }
    }
}

/// The gated step reward: the IoU change when at least
/// `gate_fraction * 8` of the new brick's cells lie on the target, else 0.
pub fn step_reward(
    prev_iou: f64,
    cur_iou: f64,
    brick_cells_on_target: u32,
    cfg: &RewardConfig,
) -> f64 {
    if f64::from(brick_cells_on_target) >= cfg.gate_fraction * 8.0 {
        cur_iou - prev_iou
    } else {
        0.0
    }
}
