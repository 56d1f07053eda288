//! `bricklab`: single entry point for every workflow — counting buildings,
//! generating datasets, training and evaluating the validity network and
//! policy, planning, rendering, and benchmarking the validity oracle.
//!
//! Exit codes: 0 success, 1 domain error (bad data, failed run), 2 usage
//! error. Every randomized subcommand takes `--seed` and is bit-reproducible
//! single-threaded.

mod io;

use bricklab::enumeration::count_buildings;
use bricklab::env::{replay, write_ldraw, EnvConfig, EpisodeRecord, OracleMasks};
use bricklab::geometry::{enumerate_offsets, OffsetSetId};
use bricklab::masks::{compute_masks, MaskMode};
use bricklab::models::{AvnMasks, AvnModel, ModelConfig, PolicyModel};
use bricklab::planners::{beam_plan, bo_plan, greedy_plan, random_plan, BoConfig};
use bricklab::targets::{gen_random_assembly, mnist_to_target, read_idx_images, read_idx_labels};
use bricklab::training::{
    eval_avn, eval_policy, eval_random_policy, make_validity_dataset, train_avn, train_ppo,
    train_supervised, AvnTrainConfig, PpoConfig, SlTrainConfig, ValidityDataset,
};
use bricklab::{Error, Result};
use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use io::{
    load_dataset, load_file_config, load_policy, save_avn, save_policy, write_generated,
};

#[derive(Parser)]
#[command(
    name = "bricklab",
    about = "Brick-construction engine: enumeration, datasets, training, planning",
    version
)]
struct Cli {
    /// Worker fan-out where a subcommand permits it. Only 1 (single-threaded,
    /// bit-reproducible) is currently implemented.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Count distinct buildings of 1..=N bricks (up to translation and the
    /// four vertical rotations). Prints a per-level CSV table, then the
    /// final count.
    Enumerate {
        /// Maximum brick count (1..=7).
        #[arg(long)]
        bricks: usize,
        #[arg(long, default_value = "full")]
        offset_set: OffsetSetId,
        /// Abort if the deduplication set would exceed this memory estimate.
        #[arg(long)]
        max_mem_gb: Option<f64>,
    },
    /// Generate random-assembly targets into a dataset directory
    /// (index.jsonl + per-target PGM views and BBVOX1 volume).
    GenAssemblies {
        #[arg(long, default_value_t = 200)]
        count: usize,
        #[arg(long, default_value_t = 10)]
        min_bricks: usize,
        #[arg(long, default_value_t = 15)]
        max_bricks: usize,
        #[arg(long, default_value = "random_assembly")]
        offset_set: OffsetSetId,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Generate an oracle-labeled action-validity dataset (JSON).
    GenValidity {
        #[arg(long, default_value_t = 1000)]
        count: usize,
        #[arg(long, default_value_t = 1)]
        min_bricks: usize,
        #[arg(long, default_value_t = 10)]
        max_bricks: usize,
        #[arg(long, default_value = "full")]
        offset_set: OffsetSetId,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train the action-validity network on a gen-validity dataset.
    TrainAvn {
        /// Dataset file from gen-validity.
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint output path (a .meta.json sidecar is written too).
        #[arg(long)]
        out: PathBuf,
        /// Optional per-batch loss CSV.
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Ablation: drop message passing (per-node MLP baseline).
        #[arg(long)]
        no_message_passing: bool,
        #[arg(long)]
        hidden_dim: Option<usize>,
        #[arg(long)]
        gnn_layers: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        /// TOML config file; flags override its values.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Evaluate a trained validity network; prints per-head CSV metrics.
    EvalAvn {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
    /// Train the construction policy with clipped-surrogate policy
    /// optimization on a target dataset directory.
    TrainPpo {
        /// Dataset directory from gen-assemblies or mnist-targets.
        #[arg(long)]
        targets: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Optional per-iteration stats CSV.
        #[arg(long)]
        metrics: Option<PathBuf>,
        #[arg(long, default_value = "random_assembly")]
        offset_set: OffsetSetId,
        /// Use a trained validity-network checkpoint for action masks
        /// instead of the exact oracle.
        #[arg(long)]
        avn: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        avn_threshold: f64,
        #[arg(long)]
        hidden_dim: Option<usize>,
        #[arg(long)]
        gnn_layers: Option<usize>,
        #[arg(long)]
        total_timesteps: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train the policy by teacher forcing on recorded construction
    /// sequences (gen-assemblies datasets carry them).
    TrainSl {
        #[arg(long)]
        targets: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "random_assembly")]
        offset_set: OffsetSetId,
        #[arg(long)]
        hidden_dim: Option<usize>,
        #[arg(long)]
        gnn_layers: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Roll out a trained policy on a target dataset; prints mean final IoU.
    EvalPolicy {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        targets: PathBuf,
        #[arg(long, default_value_t = 1)]
        episodes: usize,
        /// Also print a uniform-random baseline row.
        #[arg(long)]
        baseline: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Plan one episode with a non-learned planner and write a replayable
    /// JSON-lines record.
    Plan {
        /// random | greedy | beam | bo
        #[arg(long)]
        method: String,
        /// Beam width (beam method only).
        #[arg(long, default_value_t = 8)]
        width: usize,
        /// Dataset index.jsonl (or a single-record file); paths inside are
        /// resolved relative to it.
        #[arg(long)]
        target: PathBuf,
        /// Which record in the file to plan for.
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long, default_value = "random_assembly")]
        offset_set: OffsetSetId,
        /// Record output path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Replay an episode record and export the final assembly as LDraw plus
    /// PGM views.
    Render {
        #[arg(long)]
        record: PathBuf,
        /// Dataset index.jsonl holding the record's target.
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        out_prefix: PathBuf,
    },
    /// Time naive vs accelerated mask computation; CSV (t, naive_ms,
    /// accelerated_ms) to stdout.
    OracleBench {
        /// Comma-separated brick counts.
        #[arg(long, default_value = "10,20,40,60,80")]
        sizes: String,
        #[arg(long, default_value = "full")]
        offset_set: OffsetSetId,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Convert IDX-format digit images into a target dataset directory.
    MnistTargets {
        /// IDX ubyte image file (magic 0x00000803).
        #[arg(long)]
        images: PathBuf,
        /// Optional IDX label file (magic 0x00000801) for --digit filtering.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Keep only this digit class.
        #[arg(long)]
        digit: Option<u8>,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if cli.jobs != 1 {
        return Err(Error::Config(format!(
            "--jobs {} requested, but only single-threaded execution is implemented",
            cli.jobs
        )));
    }
    match cli.cmd {
        Cmd::Enumerate { bricks, offset_set, max_mem_gb } => enumerate(bricks, offset_set, max_mem_gb),
        Cmd::GenAssemblies { count, min_bricks, max_bricks, offset_set, out_dir, seed } => {
            gen_assemblies(count, (min_bricks, max_bricks), offset_set, &out_dir, seed)
        }
        Cmd::GenValidity { count, min_bricks, max_bricks, offset_set, out, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ds =
                make_validity_dataset(&mut rng, count, (min_bricks, max_bricks), offset_set)?;
            let f = std::fs::File::create(&out)?;
            serde_json::to_writer(std::io::BufWriter::new(f), &ds)?;
            println!("wrote {} records to {}", ds.records.len(), out.display());
            Ok(())
        }
        Cmd::TrainAvn {
            data,
            out,
            metrics,
            no_message_passing,
            hidden_dim,
            gnn_layers,
            epochs,
            batch_size,
            learning_rate,
            config,
            seed,
        } => {
            let file_cfg = load_file_config(config.as_deref())?;
            let ds: ValidityDataset =
                serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(&data)?))?;
            let hidden = hidden_dim.or(file_cfg.model.hidden_dim).unwrap_or(32);
            let layers = gnn_layers.or(file_cfg.model.gnn_layers).unwrap_or(2);
            let n_offsets = enumerate_offsets(ds.offset_set).len();
            let mut cfg = AvnTrainConfig {
                seed,
                ..file_cfg.avn.apply(AvnTrainConfig::default())
            };
            if let Some(v) = epochs {
                cfg.epochs = v;
            }
            if let Some(v) = batch_size {
                cfg.batch_size = v;
            }
            if let Some(v) = learning_rate {
                cfg.learning_rate = v;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut model =
                AvnModel::<f32>::new(hidden, n_offsets, layers, !no_message_passing, &mut rng);
            let losses = train_avn(&mut model, &ds, &cfg)?;
            if let Some(path) = metrics {
                let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
                writeln!(w, "batch,loss")?;
                for (i, l) in losses.iter().enumerate() {
                    writeln!(w, "{i},{l}")?;
                }
            }
            save_avn(&model, ds.offset_set, &out)?;
            println!("trained {} batches, final loss {:.6}", losses.len(), losses.last().unwrap_or(&f64::NAN));
            Ok(())
        }
        Cmd::EvalAvn { data, model, threshold } => {
            let ds: ValidityDataset =
                serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(&data)?))?;
            let (avn, _meta) = io::load_avn(&model)?;
            let m = eval_avn(&avn, &ds, threshold);
            println!("head,roc_auc,precision,recall,threshold");
            println!(
                "pivot,{:.6},{:.6},{:.6},{}",
                m.pivot.roc_auc, m.pivot.precision, m.pivot.recall, m.threshold
            );
            println!(
                "offset,{:.6},{:.6},{:.6},{}",
                m.offset.roc_auc, m.offset.precision, m.offset.recall, m.threshold
            );
            Ok(())
        }
        Cmd::TrainPpo {
            targets,
            out,
            metrics,
            offset_set,
            avn,
            avn_threshold,
            hidden_dim,
            gnn_layers,
            total_timesteps,
            learning_rate,
            config,
            seed,
        } => {
            let file_cfg = load_file_config(config.as_deref())?;
            let data = load_dataset(&targets)?;
            let target_infos: Vec<_> = data.into_iter().map(|(t, _)| t).collect();
            if target_infos.is_empty() {
                return Err(Error::Config("target dataset is empty".into()));
            }
            let mut ppo = file_cfg.ppo.apply(PpoConfig::default());
            if let Some(v) = total_timesteps {
                ppo.total_timesteps = v;
            }
            if let Some(v) = learning_rate {
                ppo.learning_rate = v;
            }
            let model_cfg = policy_config(
                &target_infos,
                offset_set,
                hidden_dim.or(file_cfg.model.hidden_dim),
                gnn_layers.or(file_cfg.model.gnn_layers),
            );
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut model = PolicyModel::<f32>::new(model_cfg, &mut rng)?;
            let env_cfg = EnvConfig::new(offset_set, ppo.gamma);
            let stats = match avn {
                None => train_ppo(
                    &mut model,
                    &target_infos,
                    env_cfg,
                    &ppo,
                    || OracleMasks(MaskMode::Accelerated),
                    seed,
                )?,
                Some(path) => {
                    let (avn_model, _) = io::load_avn(&path)?;
                    train_ppo(
                        &mut model,
                        &target_infos,
                        env_cfg,
                        &ppo,
                        || AvnMasks { model: avn_model.clone(), threshold: avn_threshold },
                        seed,
                    )?
                }
            };
            if let Some(path) = metrics {
                let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
                writeln!(
                    w,
                    "iteration,timesteps,episodes,mean_return,mean_final_iou,policy_loss,value_loss,entropy"
                )?;
                for s in &stats {
                    writeln!(
                        w,
                        "{},{},{},{},{},{},{},{}",
                        s.iteration,
                        s.timesteps,
                        s.episodes,
                        s.mean_return,
                        s.mean_final_iou,
                        s.policy_loss,
                        s.value_loss,
                        s.entropy
                    )?;
                }
            }
            save_policy(&model, offset_set, &out)?;
            if let Some(last) = stats.last() {
                println!(
                    "{} iterations, {} timesteps, mean final IoU {:.4}",
                    stats.len(),
                    last.timesteps,
                    last.mean_final_iou
                );
            }
            Ok(())
        }
        Cmd::TrainSl {
            targets,
            out,
            offset_set,
            hidden_dim,
            gnn_layers,
            epochs,
            learning_rate,
            config,
            seed,
        } => {
            let file_cfg = load_file_config(config.as_deref())?;
            let dataset = io::load_generated(&targets, offset_set)?;
            if dataset.is_empty() {
                return Err(Error::Config(
                    "dataset has no records with recorded action sequences".into(),
                ));
            }
            let target_infos: Vec<_> = dataset.iter().map(|g| g.target.clone()).collect();
            let model_cfg = policy_config(
                &target_infos,
                offset_set,
                hidden_dim.or(file_cfg.model.hidden_dim),
                gnn_layers.or(file_cfg.model.gnn_layers),
            );
            let mut cfg = SlTrainConfig { seed, ..file_cfg.sl.apply(SlTrainConfig::default()) };
            if let Some(v) = epochs {
                cfg.epochs = v;
            }
            if let Some(v) = learning_rate {
                cfg.learning_rate = v;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut model = PolicyModel::<f32>::new(model_cfg, &mut rng)?;
            let losses = train_supervised(&mut model, &dataset, &cfg)?;
            save_policy(&model, offset_set, &out)?;
            println!(
                "trained {} epochs, final loss {:.6}",
                losses.len(),
                losses.last().unwrap_or(&f64::NAN)
            );
            Ok(())
        }
        Cmd::EvalPolicy { model, targets, episodes, baseline, seed } => {
            let data = load_dataset(&targets)?;
            let target_infos: Vec<_> = data.into_iter().map(|(t, _)| t).collect();
            let (policy, meta) = load_policy(&model)?;
            let offset_set: OffsetSetId = meta
                .offset_set
                .parse()
                .map_err(Error::Config)?;
            let env_cfg = EnvConfig::new(offset_set, 0.75);
            let mean = eval_policy(&policy, &target_infos, env_cfg, episodes, seed)?;
            println!("policy,mean_final_iou");
            println!("learned,{mean:.6}");
            if baseline {
                let rand_mean = eval_random_policy(&target_infos, env_cfg, episodes, seed)?;
                println!("random,{rand_mean:.6}");
            }
            Ok(())
        }
        Cmd::Plan { method, width, target, index, offset_set, out, seed } => {
            let data = load_dataset(&target)?;
            let (target_info, _) = data
                .get(index)
                .ok_or_else(|| {
                    Error::Config(format!("record index {index} out of range ({} records)", data.len()))
                })?
                .clone();
            let cfg = EnvConfig::new(offset_set, 0.75);
            let record = match method.as_str() {
                "random" => random_plan(&target_info, cfg, seed)?,
                "greedy" => greedy_plan(&target_info, cfg, seed)?,
                "beam" => beam_plan(&target_info, cfg, width, seed)?,
                "bo" => bo_plan(&target_info, cfg, &BoConfig::default(), seed)?,
                other => {
                    return Err(Error::Config(format!(
                        "unknown method {other:?} (expected random|greedy|beam|bo)"
                    )))
                }
            };
            match out {
                Some(path) => {
                    let mut w = std::io::BufWriter::new(std::fs::File::create(&path)?);
                    record.write_jsonl(&mut w)?;
                    println!("final IoU {:.6}, {} steps -> {}", record.final_iou, record.steps.len(), path.display());
                }
                None => record.write_jsonl(&mut std::io::stdout().lock())?,
            }
            Ok(())
        }
        Cmd::Render { record, target, out_prefix } => {
            let rec = EpisodeRecord::read_jsonl(&mut std::io::BufReader::new(
                std::fs::File::open(&record)?,
            ))?;
            let data = load_dataset(&target)?;
            let (target_info, _) = data
                .iter()
                .find(|(t, _)| t.id == rec.header.target_id)
                .cloned()
                .ok_or_else(|| {
                    Error::Config(format!("target {:?} not found in dataset", rec.header.target_id))
                })?;
            let cfg = EnvConfig::new(rec.header.offset_set, 0.75);
            let (state, iou) = replay(&rec, &target_info, cfg)?;
            let ldr = out_prefix.with_extension("ldr");
            write_ldraw(&state.graph, &mut std::io::BufWriter::new(std::fs::File::create(&ldr)?))?;
            let views = bricklab::env::render_views(&state.graph, &rec.header.bounds);
            for (k, v) in views.iter().enumerate() {
                v.write_path(&out_prefix.with_extension(format!("view{k}.pgm")))?;
            }
            println!("replayed IoU {iou:.6}; wrote {} and {} views", ldr.display(), views.len());
            Ok(())
        }
        Cmd::OracleBench { sizes, offset_set, repeats, seed } => {
            oracle_bench(&sizes, offset_set, repeats, seed)
        }
        Cmd::MnistTargets { images, labels, digit, count, out_dir, seed } => {
            mnist_targets(&images, labels.as_deref(), digit, count, &out_dir, seed)
        }
    }
}

/// Model dimensions inferred from the dataset: node budget from the largest
/// target, offset count from the active set, view count from the targets.
fn policy_config(
    targets: &[bricklab::targets::TargetInfo],
    offset_set: OffsetSetId,
    hidden_dim: Option<usize>,
    gnn_layers: Option<usize>,
) -> ModelConfig {
    let views_count = targets.first().map_or(3, |t| t.views.len());
    let hidden = hidden_dim.unwrap_or(if views_count == 1 { 32 } else { 48 });
    ModelConfig {
        hidden_dim: hidden,
        gnn_layers: gnn_layers.unwrap_or(2),
        n_max: targets.iter().map(|t| t.budget).max().unwrap_or(1),
        n_offsets: enumerate_offsets(offset_set).len(),
        views_count,
    }
}

fn enumerate(bricks: usize, offset_set: OffsetSetId, max_mem_gb: Option<f64>) -> Result<()> {
    // ~32 bytes per deduplicated state (packed key + hash-set overhead).
    let limit = max_mem_gb.map(|g| (g * 1e9 / 32.0) as usize);
    let counts = count_buildings(bricks, offset_set, limit)?;
    println!("bricks,count");
    for (i, c) in counts.iter().enumerate() {
        println!("{},{}", i + 1, c);
    }
    println!("{}", counts.last().unwrap());
    Ok(())
}

fn gen_assemblies(
    count: usize,
    size_range: (usize, usize),
    offset_set: OffsetSetId,
    out_dir: &std::path::Path,
    seed: u64,
) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let set = enumerate_offsets(offset_set);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let index_path = out_dir.join("index.jsonl");
    let mut index = std::io::BufWriter::new(std::fs::File::create(&index_path)?);
    for i in 0..count {
        let g = gen_random_assembly(&mut rng, size_range, &set, &format!("asm{i:05}"));
        write_generated(out_dir, &g.target, &g.actions, &mut index)?;
    }
    index.flush()?;
    println!("wrote {count} targets to {}", index_path.display());
    Ok(())
}

fn oracle_bench(sizes: &str, offset_set: OffsetSetId, repeats: usize, seed: u64) -> Result<()> {
    let set = enumerate_offsets(offset_set);
    let gen_set = enumerate_offsets(OffsetSetId::Full);
    println!("t,naive_ms,accelerated_ms");
    for tok in sizes.split(',') {
        let t: usize = tok
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad size {tok:?} in --sizes")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ t as u64);
        let g = gen_random_assembly(&mut rng, (t, t), &gen_set, "bench");
        let bounds = g.target.bounds;
        let mut times = [0.0f64; 2];
        for (slot, mode) in [(0, MaskMode::Naive), (1, MaskMode::Accelerated)] {
            let start = Instant::now();
            for _ in 0..repeats {
                std::hint::black_box(compute_masks(&g.graph, &set, &bounds, mode));
            }
            times[slot] = start.elapsed().as_secs_f64() * 1e3 / repeats as f64;
        }
        println!("{t},{:.4},{:.4}", times[0], times[1]);
    }
    Ok(())
}

fn mnist_targets(
    images: &std::path::Path,
    labels: Option<&std::path::Path>,
    digit: Option<u8>,
    count: usize,
    out_dir: &std::path::Path,
    _seed: u64,
) -> Result<()> {
    let (rows, cols, imgs) =
        read_idx_images(&mut std::io::BufReader::new(std::fs::File::open(images)?))?;
    if (rows, cols) != (28, 28) {
        return Err(Error::Config(format!("expected 28x28 images, got {rows}x{cols}")));
    }
    let labels = match labels {
        Some(p) => Some(read_idx_labels(&mut std::io::BufReader::new(std::fs::File::open(p)?))?),
        None => None,
    };
    if digit.is_some() && labels.is_none() {
        return Err(Error::Config("--digit requires --labels".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let index_path = out_dir.join("index.jsonl");
    let mut index = std::io::BufWriter::new(std::fs::File::create(&index_path)?);
    let mut written = 0usize;
    for (i, img) in imgs.iter().enumerate() {
        if written >= count {
            break;
        }
        if let (Some(d), Some(l)) = (digit, labels.as_ref()) {
            if l.get(i) != Some(&d) {
                continue;
            }
        }
        let label_tag = labels.as_ref().and_then(|l| l.get(i)).copied();
        let id = match label_tag {
            Some(l) => format!("mnist{i:05}_d{l}"),
            None => format!("mnist{i:05}"),
        };
        match mnist_to_target(img, &id) {
            Ok(target) => {
                write_generated(out_dir, &target, &[], &mut index)?;
                written += 1;
            }
            Err(Error::EmptyTarget) => continue,
            Err(e) => return Err(e),
        }
    }
    index.flush()?;
    println!("wrote {written} targets to {}", index_path.display());
    Ok(())
}
