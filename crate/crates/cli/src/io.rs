//! CLI-side file plumbing: TOML run configuration, dataset directories
//! (index.jsonl + PGM views + BBVOX1 volumes), and model checkpoints with
//! JSON metadata sidecars.

use bricklab::assembly::{init_state, transition, BrickAction};
use bricklab::geometry::{enumerate_offsets, OffsetSetId};
use bricklab::models::{AvnModel, ModelConfig, PolicyModel};
use bricklab::nn::{load_checkpoint, save_checkpoint, ParamStore};
use bricklab::targets::{DatasetRecord, GeneratedAssembly, TargetInfo};
use bricklab::training::{AvnTrainConfig, PpoConfig, SlTrainConfig};
use bricklab::voxel::VoxelGrid;
use bricklab::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

// ---------------------------------------------------------------------------
// Run configuration (TOML; unknown keys rejected, flags override).

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub ppo: PpoSection,
    #[serde(default)]
    pub avn: AvnSection,
    #[serde(default)]
    pub sl: SlSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub hidden_dim: Option<usize>,
    pub gnn_layers: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PpoSection {
    pub gamma: Option<f64>,
    pub gae_lambda: Option<f64>,
    pub clip_range: Option<f64>,
    pub epochs: Option<usize>,
    pub minibatches: Option<usize>,
    pub rollout_len: Option<usize>,
    pub n_envs: Option<usize>,
    pub entropy_coef: Option<f64>,
    pub value_coef: Option<f64>,
    pub learning_rate: Option<f64>,
    pub grad_clip: Option<f64>,
    pub total_timesteps: Option<usize>,
}

impl PpoSection {
    pub fn apply(&self, mut c: PpoConfig) -> PpoConfig {
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { c.$f = v; } )* };
        }
        set!(
            gamma, gae_lambda, clip_range, epochs, minibatches, rollout_len, n_envs,
            entropy_coef, value_coef, learning_rate, grad_clip, total_timesteps
        );
        c
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AvnSection {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub grad_clip: Option<f64>,
}

impl AvnSection {
    pub fn apply(&self, mut c: AvnTrainConfig) -> AvnTrainConfig {
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { c.$f = v; } )* };
        }
        set!(epochs, batch_size, learning_rate, grad_clip);
        c
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlSection {
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub grad_clip: Option<f64>,
}

impl SlSection {
    pub fn apply(&self, mut c: SlTrainConfig) -> SlTrainConfig {
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { c.$f = v; } )* };
        }
        set!(epochs, learning_rate, grad_clip);
        c
    }
}

pub fn load_file_config(path: Option<&Path>) -> Result<FileConfig> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            toml::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))
        }
    }
}

// ---------------------------------------------------------------------------
// Dataset directories.

fn offset_set_name(id: OffsetSetId) -> &'static str {
    match id {
        OffsetSetId::Full => "full",
        OffsetSetId::RandomAssembly => "random_assembly",
        OffsetSetId::ModelNet => "modelnet",
        OffsetSetId::Mnist => "mnist",
    }
}

/// Writes one target's view PGMs and BBVOX1 volume next to the index and
/// appends its record line.
pub fn write_generated<W: Write>(
    dir: &Path,
    target: &TargetInfo,
    actions: &[BrickAction],
    index: &mut W,
) -> Result<()> {
    let volume = target
        .exact_volume
        .as_ref()
        .ok_or_else(|| Error::Config("generated target is missing its volume".into()))?;
    let mut views = Vec::new();
    for (k, v) in target.views.iter().enumerate() {
        let name = format!("{}.view{k}.pgm", target.id);
        v.write_path(&dir.join(&name))?;
        views.push(name);
    }
    let vol_name = format!("{}.vox", target.id);
    volume.write_path(&dir.join(&vol_name))?;
    let rec = DatasetRecord {
        id: target.id.clone(),
        mode: target.mode,
        views,
        volume: vol_name,
        budget: target.budget,
        bounds: target.bounds,
        clipped: target.clipped,
        actions: actions.to_vec(),
    };
    writeln!(index, "{}", serde_json::to_string(&rec)?)?;
    Ok(())
}

fn index_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join("index.jsonl")
    } else {
        path.to_path_buf()
    }
}

/// Loads a dataset from a directory (its index.jsonl) or an index file
/// directly; view and volume paths resolve relative to the index.
pub fn load_dataset(path: &Path) -> Result<Vec<(TargetInfo, Vec<BrickAction>)>> {
    let index = index_path(path);
    let base = index.parent().unwrap_or(Path::new(".")).to_path_buf();
    let file = std::fs::File::open(&index)?;
    let mut out = Vec::new();
    for line in std::io::BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DatasetRecord = serde_json::from_str(&line)?;
        let views = rec
            .views
            .iter()
            .map(|v| bricklab::targets::BinaryImage::read_path(&base.join(v)))
            .collect::<Result<Vec<_>>>()?;
        let volume: VoxelGrid = VoxelGrid::read_path(&base.join(&rec.volume))?;
        out.push((
            TargetInfo {
                id: rec.id,
                mode: rec.mode,
                views,
                exact_volume: Some(volume),
                budget: rec.budget,
                bounds: rec.bounds,
                clipped: rec.clipped,
            },
            rec.actions,
        ));
    }
    Ok(out)
}

/// Loads a dataset whose records carry construction sequences, rebuilding
/// each assembly by replaying its actions (teacher-forcing input).
pub fn load_generated(path: &Path, offset_set: OffsetSetId) -> Result<Vec<GeneratedAssembly>> {
    let set = enumerate_offsets(offset_set);
    let mut out = Vec::new();
    for (target, actions) in load_dataset(path)? {
        if actions.is_empty() {
            continue;
        }
        let mut state = init_state(target.budget)?;
        for a in &actions {
            state = transition(&state, a, &set, &target.bounds)?;
        }
        out.push(GeneratedAssembly { graph: state.graph, actions, target, resampled: 0 });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Checkpoints with metadata sidecars.

#[derive(Debug, Serialize, Deserialize)]
pub struct ModelMeta {
    /// "policy" or "avn".
    pub kind: String,
    pub hidden_dim: usize,
    pub gnn_layers: usize,
    pub n_max: usize,
    pub n_offsets: usize,
    pub views_count: usize,
    pub message_passing: bool,
    pub offset_set: String,
}

fn meta_path(ckpt: &Path) -> PathBuf {
    let mut s = ckpt.as_os_str().to_os_string();
    s.push(".meta.json");
    PathBuf::from(s)
}

fn write_meta(ckpt: &Path, meta: &ModelMeta) -> Result<()> {
    let f = std::fs::File::create(meta_path(ckpt))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(f), meta)?;
    Ok(())
}

fn read_meta(ckpt: &Path) -> Result<ModelMeta> {
    let f = std::fs::File::open(meta_path(ckpt))?;
    Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
}

/// Replaces every parameter in `dst` with the same-named tensor from the
/// checkpoint; missing or extra names are errors.
fn restore_params(dst: &mut ParamStore<f32>, loaded: &ParamStore<f32>) -> Result<()> {
    if dst.len() != loaded.len() {
        return Err(Error::Config(format!(
            "checkpoint has {} parameters, model expects {}",
            loaded.len(),
            dst.len()
        )));
    }
    for (name, t) in loaded.iter() {
        let idx = dst
            .index_of(name)
            .ok_or_else(|| Error::Config(format!("checkpoint parameter {name:?} is unknown")))?;
        if dst.get(idx).shape != t.shape {
            return Err(Error::Config(format!(
                "parameter {name:?} shape mismatch: checkpoint {:?}, model {:?}",
                t.shape,
                dst.get(idx).shape
            )));
        }
        *dst.get_mut(idx) = t.clone();
    }
    Ok(())
}

pub fn save_policy(model: &PolicyModel<f32>, offset_set: OffsetSetId, path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    save_checkpoint(&model.params, &mut w)?;
    write_meta(
        path,
        &ModelMeta {
            kind: "policy".into(),
            hidden_dim: model.cfg.hidden_dim,
            gnn_layers: model.cfg.gnn_layers,
            n_max: model.cfg.n_max,
            n_offsets: model.cfg.n_offsets,
            views_count: model.cfg.views_count,
            message_passing: true,
            offset_set: offset_set_name(offset_set).into(),
        },
    )
}

pub fn load_policy(path: &Path) -> Result<(PolicyModel<f32>, ModelMeta)> {
    let meta = read_meta(path)?;
    if meta.kind != "policy" {
        return Err(Error::Config(format!("{} is a {:?} checkpoint, expected policy", path.display(), meta.kind)));
    }
    let cfg = ModelConfig {
        hidden_dim: meta.hidden_dim,
        gnn_layers: meta.gnn_layers,
        n_max: meta.n_max,
        n_offsets: meta.n_offsets,
        views_count: meta.views_count,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut model = PolicyModel::<f32>::new(cfg, &mut rng)?;
    let loaded =
        load_checkpoint::<f32, _>(&mut std::io::BufReader::new(std::fs::File::open(path)?))?;
    restore_params(&mut model.params, &loaded)?;
    Ok((model, meta))
}

pub fn save_avn(model: &AvnModel<f32>, offset_set: OffsetSetId, path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    save_checkpoint(&model.params, &mut w)?;
    write_meta(
        path,
        &ModelMeta {
            kind: "avn".into(),
            hidden_dim: model.hidden_dim,
            gnn_layers: if model.message_passing { model.gnn_layer_count() } else { 0 },
            n_max: 0,
            n_offsets: model.n_offsets,
            views_count: 0,
            message_passing: model.message_passing,
            offset_set: offset_set_name(offset_set).into(),
        },
    )
}

pub fn load_avn(path: &Path) -> Result<(AvnModel<f32>, ModelMeta)> {
    let meta = read_meta(path)?;
    if meta.kind != "avn" {
        return Err(Error::Config(format!("{} is a {:?} checkpoint, expected avn", path.display(), meta.kind)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut model = AvnModel::<f32>::new(
        meta.hidden_dim,
        meta.n_offsets,
        meta.gnn_layers.max(1),
        meta.message_passing,
        &mut rng,
    );
    let loaded =
        load_checkpoint::<f32, _>(&mut std::io::BufReader::new(std::fs::File::open(path)?))?;
    restore_params(&mut model.params, &loaded)?;
    Ok((model, meta))
}
