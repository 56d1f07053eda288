//! Ground-truth action-validity oracle, validity masks, and masked sampling.
//!
//! The naive mode re-derives the occupied-cell set from the full assembly for
//! every candidate pose (O(|offsets| * t^2) cell work); the accelerated mode rasterizes the occupied cells
//! into a dense bitset over the bounded lattice and answers each candidate
//! with at most 8 cell probes. Both modes return identical masks.

use crate::assembly::{pose_in_bounds, AssemblyGraph, BrickAction};
use crate::error::{Error, Result};
use crate::geometry::{apply_offset, overlaps, BrickPose, OffsetSet};
use crate::voxel::Bounds;
use rand::Rng;

/// Per-pivot and per-(pivot, offset) validity bit sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionMasks {
    /// pivot_valid[i] is the OR over offset_valid[i][..].
    pub pivot_valid: Vec<bool>,
    /// offset_valid[i][k]: placing offset k from pivot i is collision-free
    /// and in bounds.
    pub offset_valid: Vec<Vec<bool>>,
}

impl ActionMasks {
    pub fn any_valid(&self) -> bool {
        self.pivot_valid.iter().any(|v| *v)
    }

    /// Indices of all valid (pivot, offset) pairs in row-major order.
    pub fn valid_actions(&self) -> Vec<BrickAction> {
        let mut out = Vec::new();
        for (i, row) in self.offset_valid.iter().enumerate() {
            for (k, v) in row.iter().enumerate() {
                if *v {
                    out.push(BrickAction { pivot_index: i, offset_index: k });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskMode {
    Naive,
    Accelerated,
}

/// Dense occupancy bitset over a bounded lattice.
struct OccupancyIndex {
    bounds: Bounds,
    dims: [usize; 3],
    bits: Vec<u64>,
}

impl OccupancyIndex {
    fn new(bounds: Bounds, graph: &AssemblyGraph) -> Self {
        let dims = bounds.dims();
        let n = dims[0] * dims[1] * dims[2];
        let mut idx = Self { bounds, dims, bits: vec![0u64; (n + 63) / 64] };
        for node in &graph.nodes {
            for c in node.footprint() {
                if let Some(i) = idx.cell_index(c) {
                    idx.bits[i / 64] |= 1 << (i % 64);
                }
            }
        }
        idx
    }

    #[inline]
    fn cell_index(&self, c: [i32; 3]) -> Option<usize> {
        if !self.bounds.contains(c) {
            return None;
        }
        let x = (c[0] - self.bounds.min[0]) as usize;
        let y = (c[1] - self.bounds.min[1]) as usize;
        let z = (c[2] - self.bounds.min[2]) as usize;
        Some(x + self.dims[0] * (y + self.dims[1] * z))
    }

    #[inline]
    fn occupied(&self, i: usize) -> bool {
        self.bits[i / 64] & (1 << (i % 64)) != 0
    }

    /// True iff the pose is inside bounds and collides with no occupied cell.
    fn pose_free(&self, pose: &BrickPose) -> bool {
        let (sx, sy) = pose.spans();
        let lo = pose.anchor;
        let hi = [lo[0] + sx - 1, lo[1] + sy - 1, lo[2]];
        if !self.bounds.contains(lo) || !self.bounds.contains(hi) {
            return false;
        }
        for dy in 0..sy {
            for dx in 0..sx {
                let i = self
                    .cell_index([lo[0] + dx, lo[1] + dy, lo[2]])
                    .expect("in-bounds cell");
                if self.occupied(i) {
                    return false;
                }
            }
        }
        true
    }
}

/// Computes the full validity masks for a graph.
pub fn compute_masks(
    graph: &AssemblyGraph,
    offset_set: &OffsetSet,
    bounds: &Bounds,
    mode: MaskMode,
) -> ActionMasks {
    let t = graph.len();
    let n_off = offset_set.len();
    let mut offset_valid = vec![vec![false; n_off]; t];
    match mode {
        MaskMode::Naive => {
            for (i, pivot) in graph.nodes.iter().enumerate() {
                for (k, off) in offset_set.offsets.iter().enumerate() {
                    let pose = apply_offset(pivot, off);
                    // Reference check: rebuild the occupied-cell set from
                    // scratch for every candidate, so per-query cost grows
                    // linearly in t and full-mask cost quadratically.
                    offset_valid[i][k] = pose_in_bounds(&pose, bounds) && {
                        let occupied: std::collections::HashSet<[i32; 3]> =
                            graph.nodes.iter().flat_map(|n| n.footprint()).collect();
                        pose.footprint().iter().all(|c| !occupied.contains(c))
                    };
                }
            }
        }
        MaskMode::Accelerated => {
            let index = OccupancyIndex::new(*bounds, graph);
            for (i, pivot) in graph.nodes.iter().enumerate() {
                for (k, off) in offset_set.offsets.iter().enumerate() {
                    offset_valid[i][k] = index.pose_free(&apply_offset(pivot, off));
                }
            }
        }
    }
    let pivot_valid = offset_valid.iter().map(|row| row.iter().any(|v| *v)).collect();
    ActionMasks { pivot_valid, offset_valid }
}

/// Single-action validity; equals the corresponding `compute_masks` entry.
pub fn is_valid_action(
    graph: &AssemblyGraph,
    action: &BrickAction,
    offset_set: &OffsetSet,
    bounds: &Bounds,
) -> bool {
    assert!(action.pivot_index < graph.len(), "pivot index out of range");
    assert!(action.offset_index < offset_set.len(), "offset index out of range");
    let pose = apply_offset(
        &graph.nodes[action.pivot_index],
        &offset_set.offsets[action.offset_index],
    );
    pose_in_bounds(&pose, bounds) && !graph.nodes.iter().any(|n| overlaps(n, &pose))
}

/// Masked softmax over raw scores: invalid entries receive probability
/// exactly 0, the rest are renormalized.
pub fn masked_softmax(scores: &[f64], mask: &[bool]) -> Vec<f64> {
    debug_assert_eq!(scores.len(), mask.len());
    let max = scores
        .iter()
        .zip(mask)
        .filter(|(_, m)| **m)
        .map(|(s, _)| *s)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return vec![0.0; scores.len()];
    }
    let mut probs: Vec<f64> = scores
        .iter()
        .zip(mask)
        .map(|(s, m)| if *m { (s - max).exp() } else { 0.0 })
        .collect();
    let sum: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= sum;
    }
    probs
}

fn sample_index<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Samples the pivot first and the offset second from masked, renormalized
/// score distributions. Returns the action and its total log-probability.
pub fn masked_sample<R, F>(
    pivot_scores: &[f64],
    mut offset_scores: F,
    masks: &ActionMasks,
    rng: &mut R,
) -> Result<(BrickAction, f64)>
where
    R: Rng,
    F: FnMut(usize) -> Vec<f64>,
{
    if !masks.any_valid() {
        return Err(Error::NoValidAction);
    }
    let pivot_probs = masked_softmax(pivot_scores, &masks.pivot_valid);
    let pivot = sample_index(&pivot_probs, rng);
    let off_probs = masked_softmax(&offset_scores(pivot), &masks.offset_valid[pivot]);
    let offset = sample_index(&off_probs, rng);
    let log_prob = pivot_probs[pivot].ln() + off_probs[offset].ln();
    Ok((BrickAction { pivot_index: pivot, offset_index: offset }, log_prob))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{init_state, transition};
    use crate::geometry::{enumerate_offsets, OffsetSetId};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn wide_bounds() -> Bounds {
        Bounds::new([-60, -60, -60], [60, 60, 60])
    }

    /// Builds a random valid assembly with `n` bricks by uniform sampling
    /// over oracle-valid actions.
    pub(crate) fn random_assembly(n: usize, seed: u64, id: OffsetSetId, bounds: &Bounds) -> AssemblyGraph {
        let set = enumerate_offsets(id);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut state = init_state(n.max(1)).unwrap();
        while state.graph.len() < n {
            let masks = compute_masks(&state.graph, &set, bounds, MaskMode::Accelerated);
            let actions = masks.valid_actions();
            if actions.is_empty() {
                break;
            }
            let a = actions[rng.gen_range(0..actions.len())];
            state = transition(&state, &a, &set, bounds).unwrap();
        }
        state.graph
    }

    #[test]
    fn fresh_state_all_valid_under_full_set() {
        let full = enumerate_offsets(OffsetSetId::Full);
        let g = AssemblyGraph::initial();
        let masks = compute_masks(&g, &full, &wide_bounds(), MaskMode::Naive);
        assert_eq!(masks.pivot_valid, vec![true]);
        assert!(masks.offset_valid[0].iter().all(|v| *v));
        assert!(is_valid_action(
            &g,
            &BrickAction { pivot_index: 0, offset_index: 17 },
            &full,
            &wide_bounds()
        ));
    }

    #[test]
    fn stacked_bricks_block_recreating_partner() {
        let full = enumerate_offsets(OffsetSetId::Full);
        let state = init_state(5).unwrap();
        let up = full.offsets.iter().position(|o| o.delta == [0, 0, 1] && o.ddir == 0).unwrap();
        let down = full.offsets.iter().position(|o| o.delta == [0, 0, -1] && o.ddir == 0).unwrap();
        let state = transition(
            &state,
            &BrickAction { pivot_index: 0, offset_index: up },
            &full,
            &wide_bounds(),
        )
        .unwrap();
        let masks = compute_masks(&state.graph, &full, &wide_bounds(), MaskMode::Naive);
        assert!(!masks.offset_valid[0][up], "offset recreating top brick from base");
        assert!(!masks.offset_valid[1][down], "offset recreating base brick from top");
    }

    #[test]
    fn accelerated_equals_naive_on_random_assemblies() {
        let full = enumerate_offsets(OffsetSetId::Full);
        let bounds = wide_bounds();
        for seed in 0..50u64 {
            let n = 1 + (seed as usize % 30);
            let g = random_assembly(n, seed, OffsetSetId::Full, &bounds);
            let naive = compute_masks(&g, &full, &bounds, MaskMode::Naive);
            let fast = compute_masks(&g, &full, &bounds, MaskMode::Accelerated);
            assert_eq!(naive, fast, "seed {seed}");
        }
    }

    #[test]
    fn is_valid_action_agrees_with_masks() {
        let full = enumerate_offsets(OffsetSetId::Full);
        let bounds = wide_bounds();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for seed in 0..20u64 {
            let g = random_assembly(1 + seed as usize % 10, seed, OffsetSetId::Full, &bounds);
            let masks = compute_masks(&g, &full, &bounds, MaskMode::Naive);
            for _ in 0..500 {
                let a = BrickAction {
                    pivot_index: rng.gen_range(0..g.len()),
                    offset_index: rng.gen_range(0..full.len()),
                };
                assert_eq!(
                    is_valid_action(&g, &a, &full, &bounds),
                    masks.offset_valid[a.pivot_index][a.offset_index]
                );
            }
        }
    }

    #[test]
    fn pivot_row_or_invariant() {
        let set = enumerate_offsets(OffsetSetId::RandomAssembly);
        let bounds = wide_bounds();
        for seed in 0..20u64 {
            let g = random_assembly(1 + seed as usize % 15, seed, OffsetSetId::RandomAssembly, &bounds);
            let masks = compute_masks(&g, &set, &bounds, MaskMode::Accelerated);
            for (i, row) in masks.offset_valid.iter().enumerate() {
                assert_eq!(masks.pivot_valid[i], row.iter().any(|v| *v));
            }
        }
    }

    #[test]
    fn masked_softmax_uniform_survivors() {
        let probs = masked_softmax(&[0.0, 0.0, 0.0, 0.0], &[true, false, true, false]);
        assert_eq!(probs, vec![0.5, 0.0, 0.5, 0.0]);
    }

    #[test]
    fn single_valid_action_log_prob_zero() {
        let masks = ActionMasks {
            pivot_valid: vec![true],
            offset_valid: vec![vec![false, true, false]],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (a, logp) = masked_sample(&[0.3], |_| vec![1.0, -2.0, 0.5], &masks, &mut rng).unwrap();
        assert_eq!(a, BrickAction { pivot_index: 0, offset_index: 1 });
        assert_eq!(logp, 0.0);
    }

    #[test]
    fn masked_sample_never_returns_masked_action() {
        let masks = ActionMasks {
            pivot_valid: vec![true, false, true],
            offset_valid: vec![
                vec![true, false, true, false],
                vec![false; 4],
                vec![false, false, false, true],
            ],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100_000 {
            let (a, _) =
                masked_sample(&[0.1, 5.0, -0.2], |_| vec![0.4, 2.0, -1.0, 0.0], &masks, &mut rng)
                    .unwrap();
            assert!(masks.offset_valid[a.pivot_index][a.offset_index]);
        }
    }

    #[test]
    fn empirical_frequencies_match_renormalized_distribution() {
        // Pivot 0 only; offsets: logits [0, ln 2, ln 4] with index 1 masked
        // out. Renormalized probabilities: [0.2, 0, 0.8].
        let masks = ActionMasks {
            pivot_valid: vec![true],
            offset_valid: vec![vec![true, false, true]],
        };
        let logits = vec![0.0, 2f64.ln(), 4f64.ln()];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000usize;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            let (a, logp) = masked_sample(&[0.0], |_| logits.clone(), &masks, &mut rng).unwrap();
            counts[a.offset_index] += 1;
            let expect = if a.offset_index == 0 { 0.2f64 } else { 0.8f64 };
            assert!((logp - expect.ln()).abs() < 1e-12);
        }
        for (i, p) in [0.2, 0.0, 0.8].into_iter().enumerate() {
            let sigma = (p * (1.0 - p) * n as f64).sqrt().max(1.0);
            let diff = (counts[i] as f64 - p * n as f64).abs();
            assert!(diff <= 3.0 * sigma, "offset {i}: {} vs {}", counts[i], p * n as f64);
        }
    }

    #[test]
    fn all_invalid_masks_signal_no_valid_action() {
        let masks = ActionMasks { pivot_valid: vec![false], offset_valid: vec![vec![false]] };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            masked_sample(&[0.0], |_| vec![0.0], &masks, &mut rng),
            Err(Error::NoValidAction)
        ));
    }
}
