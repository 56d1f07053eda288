//! The episodic construction environment: ties state, validity masks, the
//! gated IoU reward and termination together, and owns episode records,
//! their JSON-lines serialization, replay, and LDraw export.

use crate::assembly::{init_state, transition, BrickAction, ConstructionState};
use crate::error::{Error, Result};
use crate::geometry::{apply_offset, enumerate_offsets, BrickPose, OffsetSet, OffsetSetId};
use crate::masks::{compute_masks, is_valid_action, ActionMasks, MaskMode};
use crate::reward::{IouTracker, RewardConfig};
use crate::targets::{BinaryImage, TargetInfo};
use crate::voxel::{Bounds, VoxelGrid};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

/// Where the environment's action masks come from. The oracle modes are
/// exact; external masks (e.g. from a validity prediction network) may be
/// wrong, in which case a selected truly-invalid action terminates the
/// episode.
pub trait MaskProvider {
    fn masks(&self, state: &ConstructionState, set: &OffsetSet, bounds: &Bounds) -> ActionMasks;
}

/// Exact masks from the validity oracle.
pub struct OracleMasks(pub MaskMode);

impl MaskProvider for OracleMasks {
    fn masks(&self, state: &ConstructionState, set: &OffsetSet, bounds: &Bounds) -> ActionMasks {
        compute_masks(&state.graph, set, bounds, self.0)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EnvConfig {
    pub offset_set: OffsetSetId,
    /// World bounds; `None` uses the target's own bounds.
    pub bounds: Option<Bounds>,
    pub reward: RewardConfig,
    /// Discount factor, in [0, 1).
    pub gamma: f64,
}

impl EnvConfig {
    pub fn new(offset_set: OffsetSetId, gamma: f64) -> Self {
        debug_assert!((0.0..1.0).contains(&gamma));
        Self { offset_set, bounds: None, reward: RewardConfig::default(), gamma }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    BudgetExhausted,
    /// A mask let a truly invalid action through.
    InvalidAction,
    /// No valid action remained.
    NoValidAction,
}

/// What a policy sees each step.
pub struct Observation<'a> {
    pub node_features: Vec<[i32; 4]>,
    pub edges: &'a [(usize, usize)],
    pub edge_features: Vec<[i32; 4]>,
    pub views: &'a [BinaryImage],
    pub masks: ActionMasks,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StepOutcome {
    pub reward: f64,
    pub done: bool,
    pub termination: Option<Termination>,
    /// Present when the episode ended this step.
    pub final_iou: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StepRecord {
    pub t: usize,
    pub pivot: usize,
    pub offset: usize,
    pub pose: [i32; 4],
    pub reward: f64,
    /// Number of masked-out (pivot, offset) pairs at decision time.
    pub masked_count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EpisodeHeader {
    pub offset_set: OffsetSetId,
    pub bounds: Bounds,
    pub target_id: String,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EpisodeRecord {
    pub header: EpisodeHeader,
    pub steps: Vec<StepRecord>,
    pub final_iou: f64,
    pub termination: Termination,
}

impl EpisodeRecord {
    /// One JSON object per line: header first, then steps, then a footer
    /// carrying the outcome.
    pub fn write_jsonl<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "{}", serde_json::to_string(&self.header)?)?;
        for s in &self.steps {
            writeln!(w, "{}", serde_json::to_string(s)?)?;
        }
        #[derive(Serialize)]
        struct Footer<'a> {
            final_iou: f64,
            termination: &'a Termination,
        }
        writeln!(
            w,
            "{}",
            serde_json::to_string(&Footer { final_iou: self.final_iou, termination: &self.termination })?
        )?;
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: &mut R) -> Result<Self> {
        let mut lines = r.lines();
        let header: EpisodeHeader = serde_json::from_str(
            &lines.next().ok_or_else(|| Error::Parse { msg: "empty record".into(), offset: 0 })??,
        )?;
        #[derive(Deserialize)]
        struct Footer {
            final_iou: f64,
            termination: Termination,
        }
        let mut steps = Vec::new();
        let mut footer: Option<Footer> = None;
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            if let Ok(s) = serde_json::from_str::<StepRecord>(&line) {
                steps.push(s);
            } else {
                footer = Some(serde_json::from_str(&line)?);
            }
        }
        let footer =
            footer.ok_or_else(|| Error::Parse { msg: "missing footer".into(), offset: 0 })?;
        Ok(Self { header, steps, final_iou: footer.final_iou, termination: footer.termination })
    }
}

/// One construction episode. Each instance is confined to one worker;
/// independent instances run concurrently.
pub struct Env<'a, M: MaskProvider> {
    pub cfg: EnvConfig,
    pub target: &'a TargetInfo,
    pub mask_provider: M,
    offset_set: OffsetSet,
    bounds: Bounds,
    state: ConstructionState,
    tracker: IouTracker,
    done: bool,
    steps_taken: usize,
}

impl<'a, M: MaskProvider> Env<'a, M> {
    pub fn new(cfg: EnvConfig, target: &'a TargetInfo, mask_provider: M) -> Result<Self> {
        let target_volume = target
            .exact_volume
            .as_ref()
            .ok_or_else(|| Error::Config("environment requires the target volume".into()))?;
        if target_volume.is_empty() {
            return Err(Error::EmptyTarget);
        }
        let bounds = cfg.bounds.unwrap_or(target.bounds);
        let mut env = Self {
            cfg,
            target,
            mask_provider,
            offset_set: enumerate_offsets(cfg.offset_set),
            bounds,
            state: init_state(target.budget)?,
            tracker: IouTracker::new(target_volume),
            done: false,
            steps_taken: 0,
        };
        env.reset();
        Ok(env)
    }

    /// Resets to the single origin brick.
    pub fn reset(&mut self) {
        self.state = init_state(self.target.budget).expect("budget >= 1");
        self.tracker = IouTracker::new(self.target.exact_volume.as_ref().unwrap());
        let on = self.cells_on_target(&self.state.graph.nodes[0]);
        self.tracker.add_cells(8, on as u64);
        self.done = self.state.bricks_placed() >= self.state.budget;
        self.steps_taken = 0;
    }

    fn cells_on_target(&self, pose: &BrickPose) -> u32 {
        let target = self.target.exact_volume.as_ref().unwrap();
        let mut on = 0;
        for c in pose.footprint() {
            if self.target.bounds.contains(c) {
                let x = (c[0] - self.target.bounds.min[0]) as usize;
                let y = (c[1] - self.target.bounds.min[1]) as usize;
                let z = (c[2] - self.target.bounds.min[2]) as usize;
                on += target.get(x, y, z) as u32;
            }
        }
        on
    }

    pub fn state(&self) -> &ConstructionState {
        &self.state
    }

    pub fn offset_set(&self) -> &OffsetSet {
        &self.offset_set
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    pub fn done(&self) -> bool {
        self.done
    }

    pub fn current_iou(&self) -> f64 {
        self.tracker.iou()
    }

    pub fn observe(&self) -> Observation<'_> {
        let graph = &self.state.graph;
        Observation {
            node_features: graph.nodes.iter().map(|n| n.feature()).collect(),
            edges: &graph.edges,
            edge_features: graph
                .edges
                .iter()
                .map(|&(i, j)| graph.edge_feature(i, j))
                .collect(),
            views: &self.target.views,
            masks: self.mask_provider.masks(&self.state, &self.offset_set, &self.bounds),
        }
    }

    /// Applies one action. The chosen action is always re-checked against the
    /// exact oracle; a truly invalid action terminates the episode with zero
    /// reward regardless of what the mask source claimed.
    pub fn step(&mut self, action: &BrickAction) -> StepOutcome {
        assert!(!self.done, "step() called on a finished episode");
        if !is_valid_action(&self.state.graph, action, &self.offset_set, &self.bounds) {
            self.done = true;
            return StepOutcome {
                reward: 0.0,
                done: true,
                termination: Some(Termination::InvalidAction),
                final_iou: Some(self.tracker.iou()),
            };
        }
        let prev_iou = self.tracker.iou();
        let next = transition(&self.state, action, &self.offset_set, &self.bounds)
            .expect("oracle-checked action");
        let new_pose = *next.graph.nodes.last().unwrap();
        let on_target = self.cells_on_target(&new_pose);
        self.tracker.add_cells(8, on_target as u64);
        self.state = next;
        self.steps_taken += 1;
        let cur_iou = self.tracker.iou();
        let reward = crate::reward::step_reward(prev_iou, cur_iou, on_target, &self.cfg.reward);
        if self.state.bricks_placed() >= self.state.budget {
            self.done = true;
            StepOutcome {
                reward,
                done: true,
                termination: Some(Termination::BudgetExhausted),
                final_iou: Some(cur_iou),
            }
        } else {
            StepOutcome { reward, done: false, termination: None, final_iou: None }
        }
    }

    /// The new pose an action would produce.
    pub fn action_pose(&self, action: &BrickAction) -> BrickPose {
        apply_offset(
            &self.state.graph.nodes[action.pivot_index],
            &self.offset_set.offsets[action.offset_index],
        )
    }
}

/// Runs one full episode under `policy`, which maps an observation to an
/// action. Returns a replayable record.
pub fn run_episode<M, P, R>(
    env: &mut Env<'_, M>,
    mut policy: P,
    rng: &mut R,
    seed: u64,
) -> Result<EpisodeRecord>
where
    M: MaskProvider,
    P: FnMut(&Observation<'_>, &mut R) -> Result<(BrickAction, f64)>,
    R: Rng,
{
    env.reset();
    let mut steps = Vec::new();
    let mut termination = Termination::BudgetExhausted;
    while !env.done() {
        let obs = env.observe();
        if !obs.masks.any_valid() {
            termination = Termination::NoValidAction;
            break;
        }
        let masked_count = obs
            .masks
            .offset_valid
            .iter()
            .map(|row| row.iter().filter(|v| !**v).count())
            .sum();
        let t = env.state().bricks_placed();
        let (action, _logp) = policy(&obs, rng)?;
        let pose = env.action_pose(&action);
        let outcome = env.step(&action);
        steps.push(StepRecord {
            t,
            pivot: action.pivot_index,
            offset: action.offset_index,
            pose: pose.feature(),
            reward: outcome.reward,
            masked_count,
        });
        if let Some(term) = outcome.termination {
            termination = term;
        }
    }
    Ok(EpisodeRecord {
        header: EpisodeHeader {
            offset_set: env.cfg.offset_set,
            bounds: *env.bounds(),
            target_id: env.target.id.clone(),
            seed,
        },
        steps,
        final_iou: env.current_iou(),
        termination,
    })
}

/// Replays a record's action sequence through a fresh oracle-masked
/// environment, returning the reconstructed final state and IoU.
pub fn replay(record: &EpisodeRecord, target: &TargetInfo, cfg: EnvConfig) -> Result<(ConstructionState, f64)> {
    let mut env = Env::new(cfg, target, OracleMasks(MaskMode::Accelerated))?;
    env.reset();
    for s in &record.steps {
        let outcome = env.step(&BrickAction { pivot_index: s.pivot, offset_index: s.offset });
        if outcome.done {
            break;
        }
    }
    let iou = env.current_iou();
    Ok((env.state, iou))
}

/// Exports an assembly as an LDraw model (part 3001; 1 stud = 20 LDU,
/// 1 brick height = 24 LDU).
pub fn write_ldraw<W: Write>(graph: &crate::assembly::AssemblyGraph, w: &mut W) -> Result<()> {
    writeln!(w, "0 Brick assembly export")?;
    writeln!(w, "0 Name: assembly.ldr")?;
    for (i, pose) in graph.nodes.iter().enumerate() {
        let (sx, sy) = pose.spans();
        // Footprint center in LDU; LDraw y points down, bricks sit on y = 0.
        let cx = (2 * pose.anchor[0] + sx) * 10;
        let cz = (2 * pose.anchor[1] + sy) * 10;
        let cy = -24 * pose.anchor[2];
        let color = 4 + (i % 8) as i32;
        let rot = if pose.dir == 0 {
            "1 0 0 0 1 0 0 0 1"
        } else {
            "0 0 -1 0 1 0 1 0 0"
        };
        writeln!(w, "1 {color} {cx} {cy} {cz} {rot} 3001.dat")?;
    }
    Ok(())
}

/// Renders the three orthographic views of an assembly's voxelization.
pub fn render_views(graph: &crate::assembly::AssemblyGraph, bounds: &Bounds) -> Vec<BinaryImage> {
    let grid: VoxelGrid = crate::targets::voxelize(graph, bounds);
    crate::targets::project_views(&grid).0
}
