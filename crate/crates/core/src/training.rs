//! Training loops: validity-network pretraining and evaluation,
//! generalized advantage estimation, PPO with a clipped surrogate
//! objective, and a teacher-forced supervised baseline.

use crate::assembly::{AssemblyGraph, BrickAction};
use crate::env::{Env, EnvConfig, MaskProvider, OracleMasks};
use crate::error::{Error, Result};
use crate::geometry::{enumerate_offsets, OffsetSetId};
use crate::masks::{compute_masks, masked_sample, ActionMasks, MaskMode};
use crate::models::{AvnModel, GraphInput, PolicyModel};
use crate::nn::{Adam, Tape, Tensor};
use crate::targets::{gen_random_assembly, GeneratedAssembly, TargetInfo};
use crate::voxel::Bounds;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

const NEG_INF_SCORE: f64 = -1e30;

// ---------------------------------------------------------------------------
// Validity dataset
// ---------------------------------------------------------------------------

/// One labeled assembly: oracle masks frozen at generation time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidityRecord {
    pub graph: AssemblyGraph,
    pub bounds: Bounds,
    pub pivot_labels: Vec<bool>,
    pub offset_labels: Vec<Vec<bool>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidityDataset {
    pub offset_set: OffsetSetId,
    pub size_range: (usize, usize),
    pub records: Vec<ValidityRecord>,
}

/// Random valid constructions of uniformly drawn sizes, labeled by the
/// exact oracle. Reproducible from the rng state.
pub fn make_validity_dataset<R: Rng>(
    rng: &mut R,
    count: usize,
    size_range: (usize, usize),
    offset_set: OffsetSetId,
) -> Result<ValidityDataset> {
    let set = enumerate_offsets(offset_set);
    let mut records = Vec::with_capacity(count);
    for i in 0..count {
        let g = gen_random_assembly(rng, size_range, &set, &format!("v{i}"));
        let masks = compute_masks(&g.graph, &set, &g.target.bounds, MaskMode::Accelerated);
        records.push(ValidityRecord {
            graph: g.graph,
            bounds: g.target.bounds,
            pivot_labels: masks.pivot_valid,
            offset_labels: masks.offset_valid,
        });
    }
    Ok(ValidityDataset { offset_set, size_range, records })
}

/// Several records merged into one block-diagonal graph so a batch is a
/// single forward pass. Returns the merged input plus flattened pivot and
/// offset labels.
fn merge_records(records: &[&ValidityRecord]) -> (GraphInput, Vec<f64>, Vec<f64>) {
    let mut merged = GraphInput { node_feats: Vec::new(), edges: Vec::new(), edge_feats: Vec::new() };
    let mut piv = Vec::new();
    let mut off = Vec::new();
    let mut base = 0usize;
    for r in records {
        let g = GraphInput::from_graph(&r.graph);
        merged.node_feats.extend_from_slice(&g.node_feats);
        merged.edges.extend(g.edges.iter().map(|&(i, j)| (i + base, j + base)));
        merged.edge_feats.extend_from_slice(&g.edge_feats);
        piv.extend(r.pivot_labels.iter().map(|&b| if b { 1.0 } else { 0.0 }));
        for row in &r.offset_labels {
            off.extend(row.iter().map(|&b| if b { 1.0 } else { 0.0 }));
        }
        base += g.len();
    }
    (merged, piv, off)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AvnTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for AvnTrainConfig {
    fn default() -> Self {
        Self { epochs: 2, batch_size: 16, learning_rate: 1e-4, grad_clip: 0.5, seed: 0 }
    }
}

/// Joint mean-BCE minimization over pivot and offset heads (equal
/// weighting). Returns the per-batch loss curve.
pub fn train_avn(
    model: &mut AvnModel<f32>,
    dataset: &ValidityDataset,
    cfg: &AvnTrainConfig,
) -> Result<Vec<f64>> {
    if dataset.records.is_empty() {
        return Err(Error::Config("empty validity dataset".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(cfg.learning_rate, Some(cfg.grad_clip));
    let mut curve = Vec::new();
    let mut order: Vec<usize> = (0..dataset.records.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let batch: Vec<&ValidityRecord> = chunk.iter().map(|&i| &dataset.records[i]).collect();
            let (merged, piv, off) = merge_records(&batch);
            let pivf: Vec<f32> = piv.iter().map(|&v| v as f32).collect();
            let offf: Vec<f32> = off.iter().map(|&v| v as f32).collect();
            let mut tape = Tape::new();
            let eval = model.forward(&mut tape, &merged);
            let lp = tape.bce_loss(eval.pivot_conf, &pivf, &vec![1.0; pivf.len()]);
            let lo = tape.bce_loss(eval.offset_conf, &offf, &vec![1.0; offf.len()]);
            let loss = tape.add(lp, lo);
            let loss_val = tape.value(loss).data[0] as f64;
            if !loss_val.is_finite() {
                return Err(Error::Numerical(format!("validity training diverged: loss {loss_val}")));
            }
            let grads = tape.backward(loss, &model.params);
            opt.step(&mut model.params, &grads);
            curve.push(loss_val);
        }
    }
    Ok(curve)
}

// ---------------------------------------------------------------------------
// Binary-classification metrics
// ---------------------------------------------------------------------------

/// Precision and recall of "predicted valid" at a threshold.
pub fn precision_recall(scores: &[f64], labels: &[bool], threshold: f64) -> (f64, f64) {
    assert_eq!(scores.len(), labels.len());
    let (mut tp, mut fp, mut fnn) = (0usize, 0usize, 0usize);
    for (&s, &l) in scores.iter().zip(labels) {
        let p = s >= threshold;
        match (p, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fnn += 1,
            (false, false) => {}
        }
    }
    let precision = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fnn == 0 { 1.0 } else { tp as f64 / (tp + fnn) as f64 };
    (precision, recall)
}

/// Exact ROC-AUC via the rank statistic with midrank tie handling
/// (equivalent to the trapezoid rule over the tie-degenerate curve).
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> f64 {
    assert_eq!(scores.len(), labels.len());
    let pos = labels.iter().filter(|l| **l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return 0.5;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            if labels[k] {
                rank_sum += midrank;
            }
        }
        i = j + 1;
    }
    (rank_sum - pos as f64 * (pos as f64 + 1.0) / 2.0) / (pos as f64 * neg as f64)
}

/// Threshold-sweep curve points, at most `max_points` of them:
/// (threshold, fpr, tpr, precision, recall).
pub fn sweep_curves(scores: &[f64], labels: &[bool], max_points: usize) -> Vec<(f64, f64, f64, f64, f64)> {
    let mut uniq: Vec<f64> = scores.to_vec();
    uniq.sort_by(|a, b| a.partial_cmp(b).unwrap());
    uniq.dedup();
    let stride = uniq.len().div_ceil(max_points.max(1)).max(1);
    let pos = labels.iter().filter(|l| **l).count().max(1) as f64;
    let neg = (labels.len() - labels.iter().filter(|l| **l).count()).max(1) as f64;
    let mut out = Vec::new();
    for th in uniq.iter().step_by(stride) {
        let (mut tp, mut fp) = (0.0, 0.0);
        for (&s, &l) in scores.iter().zip(labels) {
            if s >= *th {
                if l {
                    tp += 1.0;
                } else {
                    fp += 1.0;
                }
            }
        }
        let (prec, rec) = precision_recall(scores, labels, *th);
        out.push((*th, fp / neg, tp / pos, prec, rec));
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeadMetrics {
    pub precision: f64,
    pub recall: f64,
    pub roc_auc: f64,
    /// (threshold, fpr, tpr, precision, recall) points.
    pub curve: Vec<(f64, f64, f64, f64, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AvnMetrics {
    pub threshold: f64,
    pub pivot: HeadMetrics,
    pub offset: HeadMetrics,
}

/// Scores every record and reports per-head precision/recall at the
/// threshold plus full sweep curves.
pub fn eval_avn(model: &AvnModel<f32>, dataset: &ValidityDataset, threshold: f64) -> AvnMetrics {
    let (piv_scores, piv_labels, off_scores, off_labels) = score_dataset(model, dataset);
    let head = |scores: &[f64], labels: &[bool]| {
        let (precision, recall) = precision_recall(scores, labels, threshold);
        HeadMetrics {
            precision,
            recall,
            roc_auc: roc_auc(scores, labels),
            curve: sweep_curves(scores, labels, 200),
        }
    };
    AvnMetrics {
        threshold,
        pivot: head(&piv_scores, &piv_labels),
        offset: head(&off_scores, &off_labels),
    }
}

fn score_dataset(
    model: &AvnModel<f32>,
    dataset: &ValidityDataset,
) -> (Vec<f64>, Vec<bool>, Vec<f64>, Vec<bool>) {
    let mut piv_scores = Vec::new();
    let mut piv_labels = Vec::new();
    let mut off_scores = Vec::new();
    let mut off_labels = Vec::new();
    for chunk in dataset.records.chunks(32) {
        let refs: Vec<&ValidityRecord> = chunk.iter().collect();
        let (merged, piv, off) = merge_records(&refs);
        let mut tape = Tape::new();
        let eval = model.forward(&mut tape, &merged);
        piv_scores.extend(tape.value(eval.pivot_conf).data.iter().map(|&v| v as f64));
        piv_labels.extend(piv.iter().map(|&v| v > 0.5));
        off_scores.extend(tape.value(eval.offset_conf).data.iter().map(|&v| v as f64));
        off_labels.extend(off.iter().map(|&v| v > 0.5));
    }
    (piv_scores, piv_labels, off_scores, off_labels)
}

// ---------------------------------------------------------------------------
// Generalized advantage estimation
// ---------------------------------------------------------------------------

/// Returns (advantages, returns). `bootstrap` is V of the state after the
/// last step (0 at a terminal).
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(rewards.len(), values.len());
    assert_eq!(rewards.len(), dones.len());
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let not_done = if dones[t] { 0.0 } else { 1.0 };
        let next_v = if t + 1 < n { values[t + 1] } else { bootstrap };
        let delta = rewards[t] + gamma * next_v * not_done - values[t];
        acc = delta + gamma * lambda * not_done * acc;
        adv[t] = acc;
    }
    let ret: Vec<f64> = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

// ---------------------------------------------------------------------------
// PPO
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PpoConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_range: f64,
    pub epochs: usize,
    pub minibatches: usize,
    /// Steps collected per environment per iteration.
    pub rollout_len: usize,
    pub n_envs: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub learning_rate: f64,
    pub grad_clip: f64,
    pub total_timesteps: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.75,
            gae_lambda: 0.9,
            clip_range: 0.2,
            epochs: 6,
            minibatches: 32,
            rollout_len: 512,
            n_envs: 8,
            entropy_coef: 0.01,
            value_coef: 1.0,
            learning_rate: 1e-4,
            grad_clip: 0.5,
            total_timesteps: 50_000,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clip_range <= 0.0 {
            return Err(Error::Config("clip_range must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(Error::Config("gamma must be in [0,1), lambda in [0,1]".into()));
        }
        Ok(())
    }
}

/// One stored decision.
#[derive(Debug, Clone)]
pub struct RolloutSample {
    pub graph: GraphInput,
    pub target_idx: usize,
    pub pivot: usize,
    pub offset: usize,
    pub logp_old: f64,
    pub pivot_mask: Vec<bool>,
    /// Validity row for the chosen pivot.
    pub offset_mask: Vec<bool>,
    pub advantage: f64,
    pub ret: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterStats {
    pub iteration: usize,
    pub timesteps: usize,
    pub episodes: usize,
    pub mean_return: f64,
    pub mean_final_iou: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
}

/// Clipped-surrogate value for one sample (maximization objective).
pub fn clipped_objective(ratio: f64, advantage: f64, eps: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - eps, 1.0 + eps) * advantage)
}

struct PreparedTargets {
    views: Vec<Vec<crate::targets::BinaryImage>>,
}

/// One gradient phase over a collected batch: `epochs` x `minibatches`
/// passes of the clipped surrogate plus value and entropy terms.
/// Advantages are normalized over the whole batch first.
pub fn ppo_update(
    model: &mut PolicyModel<f32>,
    opt: &mut Adam,
    batch: &mut [RolloutSample],
    targets: &[TargetInfo],
    cfg: &PpoConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, f64, f64)> {
    let mean = batch.iter().map(|s| s.advantage).sum::<f64>() / batch.len() as f64;
    let var =
        batch.iter().map(|s| (s.advantage - mean).powi(2)).sum::<f64>() / batch.len() as f64;
    let std = var.sqrt().max(1e-8);
    for s in batch.iter_mut() {
        s.advantage = (s.advantage - mean) / std;
    }
    let prepared = PreparedTargets { views: targets.iter().map(|t| t.views.clone()).collect() };

    let mut order: Vec<usize> = (0..batch.len()).collect();
    let mut stats = (0.0, 0.0, 0.0);
    let mut stat_count = 0usize;
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        let mb_size = batch.len().div_ceil(cfg.minibatches).max(1);
        for mb in order.chunks(mb_size) {
            let (pl, vl, ent) = ppo_minibatch(model, opt, batch, mb, &prepared, cfg)?;
            stats.0 += pl;
            stats.1 += vl;
            stats.2 += ent;
            stat_count += 1;
        }
    }
    let k = stat_count.max(1) as f64;
    Ok((stats.0 / k, stats.1 / k, stats.2 / k))
}

fn ppo_minibatch(
    model: &mut PolicyModel<f32>,
    opt: &mut Adam,
    batch: &[RolloutSample],
    mb: &[usize],
    prepared: &PreparedTargets,
    cfg: &PpoConfig,
) -> Result<(f64, f64, f64)> {
    let mut tape: Tape<f32> = Tape::new();
    // One CNN pass per distinct target in the minibatch.
    let mut z_cache: Vec<Option<crate::nn::Id>> = vec![None; prepared.views.len()];
    let mut per_sample_obj = Vec::with_capacity(mb.len());
    let mut per_sample_ent = Vec::with_capacity(mb.len());
    let mut values = Vec::with_capacity(mb.len());
    let mut returns = Vec::with_capacity(mb.len());
    for &si in mb {
        let s = &batch[si];
        let z = match z_cache[s.target_idx] {
            Some(z) => z,
            None => {
                let z = model.encode_target(&mut tape, &prepared.views[s.target_idx]);
                z_cache[s.target_idx] = Some(z);
                z
            }
        };
        let eval = model.forward_with_target(&mut tape, &s.graph, z);
        let t = s.graph.len();
        let piv_masked = {
            let mask_t = tape.constant(Tensor::from_vec(
                &[1, t],
                s.pivot_mask.iter().map(|&m| if m { 0.0 } else { NEG_INF_SCORE as f32 }).collect(),
            ));
            tape.add(eval.pivot_scores, mask_t)
        };
        let piv_logp = tape.log_softmax_rows(piv_masked);
        let off_scores = model.offset_scores(&mut tape, &eval, s.pivot);
        let off_mask = tape.constant(Tensor::from_vec(
            &[1, s.offset_mask.len()],
            s.offset_mask.iter().map(|&m| if m { 0.0 } else { NEG_INF_SCORE as f32 }).collect(),
        ));
        let off_masked = tape.add(off_scores, off_mask);
        let off_logp = tape.log_softmax_rows(off_masked);
        let lp_piv = tape.gather_elems(piv_logp, &[s.pivot]);
        let lp_off = tape.gather_elems(off_logp, &[s.offset]);
        let logp_new = tape.add(lp_piv, lp_off);
        let old = tape.constant(Tensor::scalar(s.logp_old as f32));
        let diff = tape.sub(logp_new, old);
        let ratio = tape.exp(diff);
        let adv = tape.constant(Tensor::scalar(s.advantage as f32));
        let surr1 = tape.mul(ratio, adv);
        let clipped = tape.clamp(ratio, 1.0 - cfg.clip_range as f32, 1.0 + cfg.clip_range as f32);
        let surr2 = tape.mul(clipped, adv);
        per_sample_obj.push(tape.min_elem(surr1, surr2));
        // Entropy of both masked heads.
        let ent = {
            let p1 = tape.exp(piv_logp);
            let p1l = tape.mul(p1, piv_logp);
            let h1 = tape.sum_all(p1l);
            let p2 = tape.exp(off_logp);
            let p2l = tape.mul(p2, off_logp);
            let h2 = tape.sum_all(p2l);
            let h = tape.add(h1, h2);
            tape.scalar_mul(h, -1.0)
        };
        per_sample_ent.push(ent);
        values.push(eval.value);
        returns.push(s.ret as f32);
    }
    let obj = tape.concat_cols(&per_sample_obj);
    let mean_obj = tape.mean_all(obj);
    let ents = tape.concat_cols(&per_sample_ent);
    let mean_ent = tape.mean_all(ents);
    let vals = tape.concat_cols(&values);
    let v_loss = tape.mse_loss(vals, &returns);
    let neg_obj = tape.scalar_mul(mean_obj, -1.0);
    let v_term = tape.scalar_mul(v_loss, cfg.value_coef as f32);
    let e_term = tape.scalar_mul(mean_ent, -(cfg.entropy_coef as f32));
    let a = tape.add(neg_obj, v_term);
    let loss = tape.add(a, e_term);
    let loss_val = tape.value(loss).data[0] as f64;
    if !loss_val.is_finite() {
        return Err(Error::Numerical(format!("policy update diverged: loss {loss_val}")));
    }
    let grads = tape.backward(loss, &model.params);
    opt.step(&mut model.params, &grads);
    Ok((
        -tape.value(mean_obj).data[0] as f64,
        tape.value(v_loss).data[0] as f64,
        tape.value(mean_ent).data[0] as f64,
    ))
}

/// Samples one action from the masked two-stage distribution defined by
/// the current policy. Returns (action, log-prob, state value).
pub fn sample_policy_action(
    model: &PolicyModel<f32>,
    graph: &GraphInput,
    z_value: &Tensor<f32>,
    masks: &ActionMasks,
    rng: &mut ChaCha8Rng,
) -> Result<(BrickAction, f64, f64)> {
    let mut tape: Tape<f32> = Tape::new();
    let z = tape.constant(z_value.clone());
    let eval = model.forward_with_target(&mut tape, graph, z);
    let piv_scores: Vec<f64> =
        tape.value(eval.pivot_scores).data.iter().map(|&v| v as f64).collect();
    let value = tape.value(eval.value).data[0] as f64;
    let mut off_cache: Vec<Option<Vec<f64>>> = vec![None; graph.len()];
    let (action, logp) = masked_sample(
        &piv_scores,
        |pivot| {
            let scores = off_cache[pivot].get_or_insert_with(|| {
                let id = model.offset_scores(&mut tape, &eval, pivot);
                tape.value(id).data.iter().map(|&v| v as f64).collect()
            });
            scores.clone()
        },
        masks,
        rng,
    )?;
    Ok((action, logp, value))
}

/// Per-step log-prob under the masked distribution without sampling (used
/// for importance ratios in tests).
pub fn action_logp(
    model: &PolicyModel<f32>,
    graph: &GraphInput,
    z_value: &Tensor<f32>,
    masks: &ActionMasks,
    action: &BrickAction,
) -> f64 {
    let mut tape: Tape<f32> = Tape::new();
    let z = tape.constant(z_value.clone());
    let eval = model.forward_with_target(&mut tape, graph, z);
    let piv: Vec<f64> = tape.value(eval.pivot_scores).data.iter().map(|&v| v as f64).collect();
    let piv_p = crate::masks::masked_softmax(&piv, &masks.pivot_valid);
    let off_id = model.offset_scores(&mut tape, &eval, action.pivot_index);
    let off: Vec<f64> = tape.value(off_id).data.iter().map(|&v| v as f64).collect();
    let off_p = crate::masks::masked_softmax(&off, &masks.offset_valid[action.pivot_index]);
    piv_p[action.pivot_index].ln() + off_p[action.offset_index].ln()
}

/// Synchronous PPO: `n_envs` oracle- or AVN-masked environments stepped
/// `rollout_len` times per iteration, GAE, then `ppo_update`. Environments
/// cycle over `targets`. Deterministic per seed.
pub fn train_ppo<M: MaskProvider>(
    model: &mut PolicyModel<f32>,
    targets: &[TargetInfo],
    env_cfg: EnvConfig,
    cfg: &PpoConfig,
    mask_provider: impl Fn() -> M,
    seed: u64,
) -> Result<Vec<IterStats>> {
    cfg.validate()?;
    if targets.is_empty() {
        return Err(Error::Config("no training targets".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut opt = Adam::new(cfg.learning_rate, Some(cfg.grad_clip));
    let mut stats_out = Vec::new();

    let mut envs: Vec<Env<'_, M>> = (0..cfg.n_envs)
        .map(|e| Env::new(env_cfg, &targets[e % targets.len()], mask_provider()))
        .collect::<Result<Vec<_>>>()?;
    let env_target_idx: Vec<usize> = (0..cfg.n_envs).map(|e| e % targets.len()).collect();
    for env in &mut envs {
        env.reset();
    }

    let mut timesteps = 0usize;
    let mut iteration = 0usize;
    while timesteps < cfg.total_timesteps {
        iteration += 1;
        // Target encodings are fixed for the whole rollout (parameters
        // only change in the update phase).
        let z_values: Vec<Tensor<f32>> = targets
            .iter()
            .map(|t| {
                let mut tape = Tape::new();
                let z = model.encode_target(&mut tape, &t.views);
                tape.value(z).clone()
            })
            .collect();

        let mut batch: Vec<RolloutSample> = Vec::new();
        let mut episode_returns = Vec::new();
        let mut episode_ious = Vec::new();
        // Per-env rollout traces for GAE.
        for (e, env) in envs.iter_mut().enumerate() {
            let tgt = env_target_idx[e];
            let mut rewards = Vec::new();
            let mut values = Vec::new();
            let mut dones = Vec::new();
            let mut ep_return = 0.0;
            let start = batch.len();
            let mut steps = 0;
            while steps < cfg.rollout_len {
                if env.done() {
                    env.reset();
                }
                let masks = env.observe().masks;
                if !masks.any_valid() {
                    // Dead end under the mask source: terminal with no
                    // reward; no sample stored.
                    episode_returns.push(ep_return);
                    episode_ious.push(env.current_iou());
                    ep_return = 0.0;
                    if let Some(last) = dones.last_mut() {
                        *last = true;
                    }
                    env.reset();
                    steps += 1;
                    continue;
                }
                let graph = GraphInput::from_graph(&env.state().graph);
                let (action, logp, value) =
                    sample_policy_action(model, &graph, &z_values[tgt], &masks, &mut rng)?;
                let outcome = env.step(&action);
                rewards.push(outcome.reward);
                values.push(value);
                dones.push(outcome.done);
                ep_return += outcome.reward;
                batch.push(RolloutSample {
                    offset_mask: masks.offset_valid[action.pivot_index].clone(),
                    pivot_mask: masks.pivot_valid.clone(),
                    graph,
                    target_idx: tgt,
                    pivot: action.pivot_index,
                    offset: action.offset_index,
                    logp_old: logp,
                    advantage: 0.0,
                    ret: 0.0,
                });
                if outcome.done {
                    episode_returns.push(ep_return);
                    episode_ious.push(outcome.final_iou.unwrap_or(0.0));
                    ep_return = 0.0;
                }
                steps += 1;
            }
            // Bootstrap with V of the next state when mid-episode.
            let bootstrap = if dones.last().copied().unwrap_or(true) || env.done() {
                0.0
            } else {
                let graph = GraphInput::from_graph(&env.state().graph);
                let mut tape = Tape::new();
                let z = tape.constant(z_values[tgt].clone());
                let eval = model.forward_with_target(&mut tape, &graph, z);
                tape.value(eval.value).data[0] as f64
            };
            let (adv, ret) =
                compute_gae(&rewards, &values, &dones, bootstrap, cfg.gamma, cfg.gae_lambda);
            for (k, (a, r)) in adv.iter().zip(&ret).enumerate() {
                batch[start + k].advantage = *a;
                batch[start + k].ret = *r;
            }
            timesteps += rewards.len();
        }

        if batch.is_empty() {
            return Err(Error::NoValidAction);
        }
        let (policy_loss, value_loss, entropy) =
            ppo_update(model, &mut opt, &mut batch, targets, cfg, &mut rng)?;
        let n_eps = episode_returns.len();
        stats_out.push(IterStats {
            iteration,
            timesteps,
            episodes: n_eps,
            mean_return: episode_returns.iter().sum::<f64>() / n_eps.max(1) as f64,
            mean_final_iou: episode_ious.iter().sum::<f64>() / n_eps.max(1) as f64,
            policy_loss,
            value_loss,
            entropy,
        });
    }
    Ok(stats_out)
}

/// Mean final IoU of the policy over the given targets, sampling actions.
pub fn eval_policy(
    model: &PolicyModel<f32>,
    targets: &[TargetInfo],
    env_cfg: EnvConfig,
    episodes_per_target: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    let mut count = 0usize;
    for target in targets {
        let mut tape = Tape::new();
        let z = model.encode_target(&mut tape, &target.views);
        let z_value = tape.value(z).clone();
        for _ in 0..episodes_per_target {
            let mut env = Env::new(env_cfg, target, OracleMasks(MaskMode::Accelerated))?;
            env.reset();
            while !env.done() {
                let masks = env.observe().masks;
                if !masks.any_valid() {
                    break;
                }
                let graph = GraphInput::from_graph(&env.state().graph);
                let (action, _, _) =
                    sample_policy_action(model, &graph, &z_value, &masks, &mut rng)?;
                env.step(&action);
            }
            total += env.current_iou();
            count += 1;
        }
    }
    Ok(total / count.max(1) as f64)
}

/// Mean final IoU of the uniform random valid policy (reference baseline).
pub fn eval_random_policy(
    targets: &[TargetInfo],
    env_cfg: EnvConfig,
    episodes_per_target: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    let mut count = 0usize;
    for target in targets {
        for _ in 0..episodes_per_target {
            let mut env = Env::new(env_cfg, target, OracleMasks(MaskMode::Accelerated))?;
            env.reset();
            while !env.done() {
                let masks = env.observe().masks;
                if !masks.any_valid() {
                    break;
                }
                let t = env.state().graph.len();
                let n_off = env.offset_set().len();
                let (action, _) =
                    masked_sample(&vec![0.0; t], |_| vec![0.0; n_off], &masks, &mut rng)?;
                env.step(&action);
            }
            total += env.current_iou();
            count += 1;
        }
    }
    Ok(total / count.max(1) as f64)
}

// ---------------------------------------------------------------------------
// Supervised baseline
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SlTrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for SlTrainConfig {
    fn default() -> Self {
        Self { epochs: 10, learning_rate: 1e-4, grad_clip: 0.5, seed: 0 }
    }
}

/// Teacher-forced cross-entropy on the recorded construction sequences;
/// the value head is not trained. Returns the per-epoch mean loss.
pub fn train_supervised(
    model: &mut PolicyModel<f32>,
    dataset: &[GeneratedAssembly],
    cfg: &SlTrainConfig,
) -> Result<Vec<f64>> {
    if dataset.is_empty() {
        return Err(Error::Config("empty supervised dataset".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(cfg.learning_rate, Some(cfg.grad_clip));
    let mut curve = Vec::new();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for &gi in &order {
            let ga = &dataset[gi];
            let mut tape: Tape<f32> = Tape::new();
            let z = model.encode_target(&mut tape, &ga.target.views);
            let mut per_step = Vec::new();
            // Rebuild prefixes of the recorded construction.
            let mut prefix = AssemblyGraph::initial();
            for action in &ga.actions {
                let graph = GraphInput::from_graph(&prefix);
                let eval = model.forward_with_target(&mut tape, &graph, z);
                let piv_logp = tape.log_softmax_rows(eval.pivot_scores);
                let off = model.offset_scores(&mut tape, &eval, action.pivot_index);
                let off_logp = tape.log_softmax_rows(off);
                let lp = tape.gather_elems(piv_logp, &[action.pivot_index]);
                let lo = tape.gather_elems(off_logp, &[action.offset_index]);
                let s = tape.add(lp, lo);
                per_step.push(s);
                prefix.push(ga.graph.nodes[prefix.len()]);
            }
            if per_step.is_empty() {
                continue;
            }
            let all = tape.concat_cols(&per_step);
            let mean_lp = tape.mean_all(all);
            let loss = tape.scalar_mul(mean_lp, -1.0);
            let loss_val = tape.value(loss).data[0] as f64;
            if !loss_val.is_finite() {
                return Err(Error::Numerical(format!("supervised training diverged: {loss_val}")));
            }
            let grads = tape.backward(loss, &model.params);
            opt.step(&mut model.params, &grads);
            epoch_loss += loss_val;
            batches += 1;
        }
        curve.push(epoch_loss / batches.max(1) as f64);
    }
    Ok(curve)
}

/// Greedy-argmax accuracy of the policy on recorded sequences.
pub fn supervised_accuracy(model: &PolicyModel<f32>, dataset: &[GeneratedAssembly]) -> f64 {
    let mut hits = 0usize;
    let mut total = 0usize;
    for ga in dataset {
        let mut tape: Tape<f32> = Tape::new();
        let z = model.encode_target(&mut tape, &ga.target.views);
        let mut prefix = AssemblyGraph::initial();
        for action in &ga.actions {
            let graph = GraphInput::from_graph(&prefix);
            let eval = model.forward_with_target(&mut tape, &graph, z);
            let piv = tape.value(eval.pivot_scores).data.clone();
            let best_p = (0..piv.len()).max_by(|&a, &b| piv[a].partial_cmp(&piv[b]).unwrap()).unwrap();
            let off = model.offset_scores(&mut tape, &eval, best_p);
            let offv = tape.value(off).data.clone();
            let best_o =
                (0..offv.len()).max_by(|&a, &b| offv[a].partial_cmp(&offv[b]).unwrap()).unwrap();
            if best_p == action.pivot_index && best_o == action.offset_index {
                hits += 1;
            }
            total += 1;
            prefix.push(ga.graph.nodes[prefix.len()]);
        }
    }
    hits as f64 / total.max(1) as f64
}
