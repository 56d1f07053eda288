//! Graph-structured assembly state and the deterministic transition function.
//!
//! Nodes are bricks in assembly order; edges connect bricks in direct stud
//! contact and are stored in both directions. Edge features are relative
//! offsets, so they are invariant under global translation.

use crate::error::{Error, Result};
use crate::geometry::{apply_offset, connects, overlaps, BrickPose, Offset, OffsetSet};
use crate::voxel::Bounds;
use serde::{Deserialize, Serialize};

/// The assembled-bricks graph: poses in assembly order plus the contact
/// relation as bidirectional edges.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssemblyGraph {
    pub nodes: Vec<BrickPose>,
    /// Directed edge list; (i, j) present iff (j, i) present.
    pub edges: Vec<(usize, usize)>,
    /// Per-node neighbor lists (indices into `nodes`).
    pub adjacency: Vec<Vec<usize>>,
}

impl AssemblyGraph {
    /// A single brick at the origin with direction 0.
    pub fn initial() -> Self {
        Self { nodes: vec![BrickPose::new(0, 0, 0, 0)], edges: Vec::new(), adjacency: vec![Vec::new()] }
    }

    /// Builds a graph from poses, deriving edges from the contact relation.
    /// Used by dataset generators and replay; panics if poses overlap.
    pub fn from_poses(poses: Vec<BrickPose>) -> Self {
        let n = poses.len();
        let mut g = Self { nodes: poses, edges: Vec::new(), adjacency: vec![Vec::new(); n] };
        for i in 0..n {
            for j in (i + 1)..n {
                assert!(!overlaps(&g.nodes[i], &g.nodes[j]), "overlapping poses {i},{j}");
                if connects(&g.nodes[i], &g.nodes[j]) {
                    g.edges.push((i, j));
                    g.edges.push((j, i));
                    g.adjacency[i].push(j);
                    g.adjacency[j].push(i);
                }
            }
        }
        g
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Relative-offset edge feature `(x_i - x_j, d_i XOR d_j)`.
    /// Panics if (i, j) is not an edge.
    pub fn edge_feature(&self, i: usize, j: usize) -> [i32; 4] {
        assert!(self.adjacency[i].contains(&j), "({i},{j}) is not an edge");
        let a = &self.nodes[i];
        let b = &self.nodes[j];
        [
            a.anchor[0] - b.anchor[0],
            a.anchor[1] - b.anchor[1],
            a.anchor[2] - b.anchor[2],
            (a.dir ^ b.dir) as i32,
        ]
    }

    /// Appends a brick, connecting it to every existing brick in contact.
    /// The caller is responsible for validity checking.
    pub fn push(&mut self, pose: BrickPose) {
        let new_idx = self.nodes.len();
        self.adjacency.push(Vec::new());
        for i in 0..new_idx {
            if connects(&self.nodes[i], &pose) {
                self.edges.push((i, new_idx));
                self.edges.push((new_idx, i));
                self.adjacency[i].push(new_idx);
                self.adjacency[new_idx].push(i);
            }
        }
        self.nodes.push(pose);
    }

    /// True iff every brick is reachable from node 0 through contact edges.
    pub fn is_connected(&self) -> bool {
        if self.nodes.is_empty() {
            return true;
        }
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for &j in &self.adjacency[i] {
                if !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.iter().all(|s| *s)
    }
}

/// The successive action: pivot brick index, then offset index into the
/// active offset set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BrickAction {
    pub pivot_index: usize,
    pub offset_index: usize,
}

/// Full construction state: graph, brick budget and placement count.
#[derive(Debug, Clone)]
pub struct ConstructionState {
    pub graph: AssemblyGraph,
    pub budget: usize,
}

impl ConstructionState {
    pub fn bricks_placed(&self) -> usize {
        self.graph.len()
    }
}

/// Initial state: one brick at the origin with direction 0, no edges.
pub fn init_state(budget: usize) -> Result<ConstructionState> {
    if budget < 1 {
        return Err(Error::Config("brick budget must be >= 1".into()));
    }
    Ok(ConstructionState { graph: AssemblyGraph::initial(), budget })
}

/// Applies an action, returning the new state. The new pose must overlap no
/// existing brick and lie inside `bounds`; otherwise `InvalidAction` carrying
/// the offending pose is returned.
pub fn transition(
    state: &ConstructionState,
    action: &BrickAction,
    offset_set: &OffsetSet,
    bounds: &Bounds,
) -> Result<ConstructionState> {
    let pivot = &state.graph.nodes[action.pivot_index];
    let off: &Offset = &offset_set.offsets[action.offset_index];
    let pose = apply_offset(pivot, off);
    if !pose_in_bounds(&pose, bounds) || state.graph.nodes.iter().any(|n| overlaps(n, &pose)) {
        return Err(Error::InvalidAction(pose));
    }
    let mut next = state.clone();
    next.graph.push(pose);
    Ok(next)
}

/// True iff all 8 footprint cells lie inside the bounds.
pub fn pose_in_bounds(pose: &BrickPose, bounds: &Bounds) -> bool {
    let (sx, sy) = pose.spans();
    bounds.contains(pose.anchor)
        && bounds.contains([
            pose.anchor[0] + sx - 1,
            pose.anchor[1] + sy - 1,
            pose.anchor[2],
        ])
}
