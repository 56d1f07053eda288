//! Counting distinct brick buildings: assemblies are identified up to
//! translation and the four rotations about the vertical axis. Counting is a
//! breadth-first expansion over brick counts with per-level deduplication by
//! a packed canonical key.

use crate::assembly::AssemblyGraph;
use crate::error::{Error, Result};
use crate::geometry::{apply_offset, enumerate_offsets, BrickPose, OffsetSetId};
use crate::masks::{compute_masks, MaskMode};
use crate::voxel::Bounds;
use std::collections::HashSet;

/// Rotates a pose 90 degrees counter-clockwise about the vertical axis:
/// cell (x, y) maps to (-y - 1, x), so a brick's anchor moves to
/// (-anchor_y - span_y, anchor_x) and its direction flips.
pub fn rotate_pose_z90(p: &BrickPose) -> BrickPose {
    let (_, sy) = p.spans();
    BrickPose::new(-p.anchor[1] - sy, p.anchor[0], p.anchor[2], 1 - p.dir)
}

/// Translates so the minimum anchor coordinates are zero, then sorts.
fn normalize(poses: &[BrickPose]) -> Vec<[i32; 4]> {
    let mut mn = [i32::MAX; 3];
    for p in poses {
        for k in 0..3 {
            mn[k] = mn[k].min(p.anchor[k]);
        }
    }
    let mut v: Vec<[i32; 4]> = poses
        .iter()
        .map(|p| {
            [p.anchor[0] - mn[0], p.anchor[1] - mn[1], p.anchor[2] - mn[2], i32::from(p.dir)]
        })
        .collect();
    v.sort_unstable();
    v
}

/// Canonical form of an assembly: the lexicographically smallest normalized
/// pose list over the four vertical rotations. Equal keys exactly when two
/// assemblies differ only by translation and vertical rotation; independent
/// of node order.
pub fn canonical_key(poses: &[BrickPose]) -> Vec<[i32; 4]> {
    let mut cur: Vec<BrickPose> = poses.to_vec();
    let mut best: Option<Vec<[i32; 4]>> = None;
    for _ in 0..4 {
        let cand = normalize(&cur);
        if best.as_ref().map_or(true, |b| cand < *b) {
            best = Some(cand);
        }
        cur = cur.iter().map(rotate_pose_z90).collect();
    }
    best.unwrap()
}

/// Packs a canonical key into a u128 (16 bits per brick), keeping the
/// deduplication set compact. Canonical coordinates of an `n`-brick assembly
/// fit in 6/6/3 bits for n <= 7.
fn pack_key(key: &[[i32; 4]]) -> u128 {
    debug_assert!(key.len() <= 7);
    let mut out = 0u128;
    for f in key {
        debug_assert!(
            (0..64).contains(&f[0]) && (0..64).contains(&f[1]) && (0..8).contains(&f[2]),
            "canonical coordinates out of packing range: {f:?}"
        );
        let packed =
            ((f[0] as u128) << 10) | ((f[1] as u128) << 4) | ((f[2] as u128) << 1) | f[3] as u128;
        out = (out << 16) | packed;
    }
    out
}

fn key_to_poses(key: &[[i32; 4]]) -> Vec<BrickPose> {
    key.iter().map(|f| BrickPose::new(f[0], f[1], f[2], f[3] as u8)).collect()
}

/// Counts the distinct buildings with 1..=n bricks under the given
/// connection offset set, up to translation and vertical rotation. Returns
/// one count per brick count. `state_limit`, if set, aborts with a
/// configuration error once any level's deduplication set exceeds it.
pub fn count_buildings(
    n: usize,
    set_id: OffsetSetId,
    state_limit: Option<usize>,
) -> Result<Vec<u64>> {
    assert!((1..=7).contains(&n), "counting supports 1..=7 bricks, got {n}");
    let set = enumerate_offsets(set_id);
    // Generous bounds: canonical assemblies occupy [0, 4n) per horizontal
    // axis, and one expansion step moves at most 5 cells, so nothing clips.
    let m = 4 * n as i32 + 8;
    let bounds = Bounds::new([-8, -8, -2], [m, m, n as i32 + 2]);
    let mut counts = vec![1u64];
    let mut frontier = vec![vec![BrickPose::new(0, 0, 0, 0)]];
    for level in 2..=n {
        let mut seen: HashSet<u128> = HashSet::new();
        let mut next = Vec::new();
        for poses in &frontier {
            let graph = AssemblyGraph::from_poses(poses.clone());
            let masks = compute_masks(&graph, &set, &bounds, MaskMode::Accelerated);
            for (p, row) in masks.offset_valid.iter().enumerate() {
                for (o, valid) in row.iter().enumerate() {
                    if !valid {
                        continue;
                    }
                    let mut np = poses.clone();
                    np.push(apply_offset(&graph.nodes[p], &set.offsets[o]));
                    let key = canonical_key(&np);
                    if seen.insert(pack_key(&key)) && level < n {
                        next.push(key_to_poses(&key));
                    }
                }
            }
            if let Some(limit) = state_limit {
                if seen.len() > limit {
                    return Err(Error::Config(format!(
                        "building count at {level} bricks exceeds the state limit of {limit}"
                    )));
                }
            }
        }
        counts.push(seen.len() as u64);
        frontier = next;
    }
    Ok(counts)
}
