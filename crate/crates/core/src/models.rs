//! Policy, value, and action-validity networks.
//!
//! The target encoder is a shared-weight CNN applied per view; assemblies
//! are processed by message-passing graph networks whose edge features are
//! relative brick offsets. Heads: a per-node pivot scorer, an offset scorer
//! on the chosen pivot's embedding, a value head on mean-pooled node
//! embeddings, and sigmoid validity heads without the target feature.

use crate::assembly::AssemblyGraph;
use crate::error::{Error, Result};
use crate::nn::{mlp2_forward, mlp2_params, Id, ParamStore, Real, Tape, Tensor};
use crate::targets::BinaryImage;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Target-feature length; each view contributes hidden_dim/views_count.
    pub hidden_dim: usize,
    /// Message-passing rounds per stack.
    pub gnn_layers: usize,
    /// Maximum node count any episode may reach.
    pub n_max: usize,
    /// Size of the active offset set.
    pub n_offsets: usize,
    pub views_count: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.views_count == 0 || self.n_offsets == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if self.hidden_dim % self.views_count != 0 {
            return Err(Error::Config(format!(
                "hidden_dim {} not divisible by views_count {}",
                self.hidden_dim, self.views_count
            )));
        }
        Ok(())
    }

    pub fn per_view_dim(&self) -> usize {
        self.hidden_dim / self.views_count
    }
}

/// Assembly in tensor form; built once per observation.
#[derive(Debug, Clone)]
pub struct GraphInput {
    pub node_feats: Vec<[i32; 4]>,
    /// Directed edges (src, dst); both directions present.
    pub edges: Vec<(usize, usize)>,
    pub edge_feats: Vec<[i32; 4]>,
}

impl GraphInput {
    pub fn from_graph(graph: &AssemblyGraph) -> Self {
        Self {
            node_feats: graph.nodes.iter().map(|n| n.feature()).collect(),
            edges: graph.edges.clone(),
            edge_feats: graph.edges.iter().map(|&(i, j)| graph.edge_feature(i, j)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.node_feats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_feats.is_empty()
    }

    fn node_tensor<F: Real>(&self) -> Tensor<F> {
        let data = self
            .node_feats
            .iter()
            .flat_map(|f| f.iter().map(|&v| F::from_f64(v as f64)))
            .collect();
        Tensor::from_vec(&[self.len(), 4], data)
    }

    fn edge_tensor<F: Real>(&self) -> Tensor<F> {
        let data = self
            .edge_feats
            .iter()
            .flat_map(|f| f.iter().map(|&v| F::from_f64(v as f64)))
            .collect();
        Tensor::from_vec(&[self.edges.len(), 4], data)
    }
}

type MlpIdx = [usize; 4];

#[derive(Debug, Clone)]
struct GnLayerIdx {
    edge: MlpIdx,
    node: MlpIdx,
}

#[derive(Debug, Clone)]
struct GnnIdx {
    embed_node: MlpIdx,
    embed_edge: MlpIdx,
    layers: Vec<GnLayerIdx>,
}

#[derive(Debug, Clone)]
struct CnnIdx {
    c1w: usize,
    c1b: usize,
    c2w: usize,
    c2b: usize,
    fcw: usize,
    fcb: usize,
}

const CONV1_CHANNELS: usize = 32;
const CONV2_CHANNELS: usize = 64;
const VIEW_SIZE: usize = crate::targets::VIEW_SIZE; // 14 -> pool 7 -> pool 4
const CNN_FLAT: usize = CONV2_CHANNELS * 4 * 4;

fn add_cnn<F: Real, R: Rng>(params: &mut ParamStore<F>, prefix: &str, out_dim: usize, rng: &mut R) -> CnnIdx {
    let c1w = params.add_kaiming(&format!("{prefix}.c1w"), CONV1_CHANNELS, 9, rng);
    params.get_mut(c1w).shape = vec![CONV1_CHANNELS, 1, 3, 3];
    let c1b = params.add_uniform(&format!("{prefix}.c1b"), &[CONV1_CHANNELS], 0.05, rng);
    let c2w = params.add_kaiming(&format!("{prefix}.c2w"), CONV2_CHANNELS, CONV1_CHANNELS * 9, rng);
    params.get_mut(c2w).shape = vec![CONV2_CHANNELS, CONV1_CHANNELS, 3, 3];
    let c2b = params.add_uniform(&format!("{prefix}.c2b"), &[CONV2_CHANNELS], 0.05, rng);
    let fcw = params.add_kaiming(&format!("{prefix}.fcw"), CNN_FLAT, out_dim, rng);
    let fcb = params.add_uniform(&format!("{prefix}.fcb"), &[out_dim], 0.05, rng);
    CnnIdx { c1w, c1b, c2w, c2b, fcw, fcb }
}

fn add_gnn<F: Real, R: Rng>(
    params: &mut ParamStore<F>,
    prefix: &str,
    d: usize,
    node_in: usize,
    edge_in: usize,
    layers: usize,
    rng: &mut R,
) -> GnnIdx {
    GnnIdx {
        embed_node: mlp2_params(params, &format!("{prefix}.embed_node"), (node_in, d, d), rng),
        embed_edge: mlp2_params(params, &format!("{prefix}.embed_edge"), (edge_in, d, d), rng),
        layers: (0..layers)
            .map(|l| GnLayerIdx {
                edge: mlp2_params(params, &format!("{prefix}.l{l}.edge"), (3 * d, d, d), rng),
                node: mlp2_params(params, &format!("{prefix}.l{l}.node"), (2 * d, d, d), rng),
            })
            .collect(),
    }
}

fn view_tensor<F: Real>(view: &BinaryImage) -> Tensor<F> {
    assert_eq!(
        (view.width, view.height),
        (VIEW_SIZE, VIEW_SIZE),
        "view must be {VIEW_SIZE}x{VIEW_SIZE}, got {}x{}",
        view.width,
        view.height
    );
    let data = view
        .pixels
        .iter()
        .map(|&p| if p { F::ONE } else { F::ZERO })
        .collect();
    Tensor::from_vec(&[1, VIEW_SIZE, VIEW_SIZE], data)
}

fn cnn_forward<F: Real>(tape: &mut Tape<F>, params: &ParamStore<F>, cnn: &CnnIdx, view: Id) -> Id {
    let c1w = tape.param(params, cnn.c1w);
    let c1b = tape.param(params, cnn.c1b);
    let c2w = tape.param(params, cnn.c2w);
    let c2b = tape.param(params, cnn.c2b);
    let fcw = tape.param(params, cnn.fcw);
    let fcb = tape.param(params, cnn.fcb);
    let h = tape.conv2d_3x3(view, c1w, c1b);
    let h = tape.relu(h);
    let h = tape.maxpool2d_3s2(h);
    let h = tape.conv2d_3x3(h, c2w, c2b);
    let h = tape.relu(h);
    let h = tape.maxpool2d_3s2(h);
    let flat = tape.reshape(h, &[1, CNN_FLAT]);
    let out = tape.matmul(flat, fcw);
    tape.add_row(out, fcb)
}

/// Broadcasts a 1D feature to `rows` rows via gather.
fn broadcast_rows<F: Real>(tape: &mut Tape<F>, v: Id, rows: usize) -> Id {
    let n = tape.value(v).numel();
    let as_row = tape.reshape(v, &[1, n]);
    tape.gather_rows(as_row, &vec![0; rows])
}

fn gnn_forward<F: Real>(
    tape: &mut Tape<F>,
    params: &ParamStore<F>,
    gnn: &GnnIdx,
    graph: &GraphInput,
    z: Option<Id>,
) -> Id {
    let t = graph.len();
    let raw_nodes = tape.constant(graph.node_tensor());
    let raw_edges = tape.constant(graph.edge_tensor());
    let node_in = match z {
        Some(z) => {
            let zr = broadcast_rows(tape, z, t);
            tape.concat_cols(&[raw_nodes, zr])
        }
        None => raw_nodes,
    };
    let mut v = mlp2_forward(tape, params, &gnn.embed_node, node_in);
    let d = tape.value(v).shape[1];
    let mut e = if graph.edges.is_empty() {
        tape.constant(Tensor::zeros(&[0, d]))
    } else {
        let edge_in = match z {
            Some(z) => {
                let zr = broadcast_rows(tape, z, graph.edges.len());
                tape.concat_cols(&[raw_edges, zr])
            }
            None => raw_edges,
        };
        mlp2_forward(tape, params, &gnn.embed_edge, edge_in)
    };
    let src: Vec<usize> = graph.edges.iter().map(|&(i, _)| i).collect();
    let dst: Vec<usize> = graph.edges.iter().map(|&(_, j)| j).collect();
    for layer in &gnn.layers {
        let (v_new, e_new) = gn_layer(tape, params, layer, v, e, &src, &dst, t);
        v = v_new;
        e = e_new;
    }
    v
}

/// One message-passing round: per-edge update from both endpoint embeddings
/// and the edge state, sum-aggregation into the source node, then a
/// per-node update. Isolated nodes aggregate a zero message.
#[allow(clippy::too_many_arguments)]
fn gn_layer<F: Real>(
    tape: &mut Tape<F>,
    params: &ParamStore<F>,
    layer: &GnLayerIdx,
    v: Id,
    e: Id,
    src: &[usize],
    dst: &[usize],
    t: usize,
) -> (Id, Id) {
    let d = tape.value(v).shape[1];
    let (e_new, m) = if src.is_empty() {
        (e, tape.constant(Tensor::zeros(&[t, d])))
    } else {
        let vi = tape.gather_rows(v, src);
        let vj = tape.gather_rows(v, dst);
        let cat = tape.concat_cols(&[vi, vj, e]);
        let e_new = mlp2_forward(tape, params, &layer.edge, cat);
        (e_new, tape.scatter_add_rows(e_new, src, t))
    };
    let cat = tape.concat_cols(&[v, m]);
    let v_new = mlp2_forward(tape, params, &layer.node, cat);
    (v_new, e_new)
}

/// Policy + value network: target CNN, two GNN stacks, pivot/offset/value
/// heads.
#[derive(Clone)]
pub struct PolicyModel<F: Real> {
    pub cfg: ModelConfig,
    pub params: ParamStore<F>,
    cnn: CnnIdx,
    piv_gnn: GnnIdx,
    off_gnn: GnnIdx,
    piv_head: MlpIdx,
    off_head: MlpIdx,
    val_head: MlpIdx,
}

/// Forward-pass handles for scoring one observation.
pub struct PolicyEval {
    /// Target feature, length hidden_dim.
    pub z: Id,
    /// Per-node pivot scores, shape [1, t].
    pub pivot_scores: Id,
    /// Offset-stack node embeddings, shape [t, d].
    pub off_nodes: Id,
    /// State value, scalar.
    pub value: Id,
}

impl<F: Real> PolicyModel<F> {
    pub fn new<R: Rng>(cfg: ModelConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.hidden_dim;
        let mut params = ParamStore::new();
        let cnn = add_cnn(&mut params, "cnn", cfg.per_view_dim(), rng);
        let piv_gnn = add_gnn(&mut params, "piv", d, 4 + d, 4 + d, cfg.gnn_layers, rng);
        let off_gnn = add_gnn(&mut params, "off", d, 4 + d, 4 + d, cfg.gnn_layers, rng);
        let piv_head = mlp2_params(&mut params, "head.piv", (2 * d, d, 1), rng);
        let off_head = mlp2_params(&mut params, "head.off", (2 * d, d, cfg.n_offsets), rng);
        let val_head = mlp2_params(&mut params, "head.val", (3 * d, d, 1), rng);
        Ok(Self { cfg, params, cnn, piv_gnn, off_gnn, piv_head, off_head, val_head })
    }

    /// Same architecture over a replacement parameter store (e.g. a
    /// gradient-check perturbation).
    pub fn with_params(&self, params: ParamStore<F>) -> Self {
        Self { params, ..self.clone() }
    }

    pub fn map_to<G: Real>(&self) -> PolicyModel<G> {
        PolicyModel {
            cfg: self.cfg,
            params: self.params.map_to(),
            cnn: self.cnn.clone(),
            piv_gnn: self.piv_gnn.clone(),
            off_gnn: self.off_gnn.clone(),
            piv_head: self.piv_head,
            off_head: self.off_head,
            val_head: self.val_head,
        }
    }

    /// Shared-weight CNN per view, concatenated.
    pub fn encode_target(&self, tape: &mut Tape<F>, views: &[BinaryImage]) -> Id {
        assert_eq!(
            views.len(),
            self.cfg.views_count,
            "expected {} views, got {}",
            self.cfg.views_count,
            views.len()
        );
        let parts: Vec<Id> = views
            .iter()
            .map(|view| {
                let v = tape.constant(view_tensor(view));
                cnn_forward(tape, &self.params, &self.cnn, v)
            })
            .collect();
        let cat = tape.concat_cols(&parts);
        tape.reshape(cat, &[self.cfg.hidden_dim])
    }

    /// Full forward given a precomputed target feature (lets callers cache
    /// the CNN pass across steps that share a target and parameters).
    pub fn forward_with_target(&self, tape: &mut Tape<F>, graph: &GraphInput, z: Id) -> PolicyEval {
        let t = graph.len();
        assert!(t <= self.cfg.n_max, "graph has {t} nodes, n_max {}", self.cfg.n_max);
        let v_piv = gnn_forward(tape, &self.params, &self.piv_gnn, graph, Some(z));
        let v_off = gnn_forward(tape, &self.params, &self.off_gnn, graph, Some(z));
        let zr = broadcast_rows(tape, z, t);
        let piv_in = tape.concat_cols(&[v_piv, zr]);
        let scores = mlp2_forward(tape, &self.params, &self.piv_head, piv_in);
        let pivot_scores = tape.reshape(scores, &[1, t]);
        let mu_piv = tape.mean_rows(v_piv);
        let mu_off = tape.mean_rows(v_off);
        let val_in = tape.concat_cols(&[mu_piv, mu_off, z]);
        let value = mlp2_forward(tape, &self.params, &self.val_head, val_in);
        let value = tape.reshape(value, &[1]);
        PolicyEval { z, pivot_scores, off_nodes: v_off, value }
    }

    pub fn forward(&self, tape: &mut Tape<F>, graph: &GraphInput, views: &[BinaryImage]) -> PolicyEval {
        let z = self.encode_target(tape, views);
        self.forward_with_target(tape, graph, z)
    }

    /// Offset scores for one pivot, shape [1, n_offsets].
    pub fn offset_scores(&self, tape: &mut Tape<F>, eval: &PolicyEval, pivot: usize) -> Id {
        let vi = tape.gather_rows(eval.off_nodes, &[pivot]);
        let zr = broadcast_rows(tape, eval.z, 1);
        let cat = tape.concat_cols(&[vi, zr]);
        mlp2_forward(tape, &self.params, &self.off_head, cat)
    }
}

/// Action-validity network: the policy's graph stack and heads minus the
/// target feature, with sigmoid outputs. `message_passing = false` drops
/// the message-passing rounds, leaving a per-node MLP baseline.
#[derive(Clone)]
pub struct AvnModel<F: Real> {
    pub hidden_dim: usize,
    pub n_offsets: usize,
    pub message_passing: bool,
    pub params: ParamStore<F>,
    gnn: GnnIdx,
    piv_head: MlpIdx,
    off_head: MlpIdx,
}

/// AVN outputs: per-node pivot validity confidence and per-node offset
/// validity confidences, all in (0, 1).
pub struct AvnEval {
    /// Shape [t, 1].
    pub pivot_conf: Id,
    /// Shape [t, n_offsets].
    pub offset_conf: Id,
}

impl<F: Real> AvnModel<F> {
    pub fn new<R: Rng>(
        hidden_dim: usize,
        n_offsets: usize,
        gnn_layers: usize,
        message_passing: bool,
        rng: &mut R,
    ) -> Self {
        let mut params = ParamStore::new();
        let layers = if message_passing { gnn_layers } else { 0 };
        let gnn = add_gnn(&mut params, "avn", hidden_dim, 4, 4, layers, rng);
        let piv_head = mlp2_params(&mut params, "avn.head.piv", (hidden_dim, hidden_dim, 1), rng);
        let off_head =
            mlp2_params(&mut params, "avn.head.off", (hidden_dim, hidden_dim, n_offsets), rng);
        Self { hidden_dim, n_offsets, message_passing, params, gnn, piv_head, off_head }
    }

    /// Message-passing rounds (0 for the MLP baseline).
    pub fn gnn_layer_count(&self) -> usize {
        self.gnn.layers.len()
    }

    /// Same architecture over a replacement parameter store (e.g. a
    /// gradient-check perturbation).
    pub fn with_params(&self, params: ParamStore<F>) -> Self {
        Self { params, ..self.clone() }
    }

    pub fn map_to<G: Real>(&self) -> AvnModel<G> {
        AvnModel {
            hidden_dim: self.hidden_dim,
            n_offsets: self.n_offsets,
            message_passing: self.message_passing,
            params: self.params.map_to(),
            gnn: self.gnn.clone(),
            piv_head: self.piv_head,
            off_head: self.off_head,
        }
    }

    pub fn forward(&self, tape: &mut Tape<F>, graph: &GraphInput) -> AvnEval {
        let v = gnn_forward(tape, &self.params, &self.gnn, graph, None);
        let piv = mlp2_forward(tape, &self.params, &self.piv_head, v);
        let off = mlp2_forward(tape, &self.params, &self.off_head, v);
        AvnEval { pivot_conf: tape.sigmoid(piv), offset_conf: tape.sigmoid(off) }
    }
}

/// Thresholded AVN masks for use as an environment mask source.
pub struct AvnMasks<F: Real> {
    pub model: AvnModel<F>,
    pub threshold: f64,
}

impl<F: Real> crate::env::MaskProvider for AvnMasks<F> {
    fn masks(
        &self,
        state: &crate::assembly::ConstructionState,
        set: &crate::geometry::OffsetSet,
        _bounds: &crate::voxel::Bounds,
    ) -> crate::masks::ActionMasks {
        let graph = GraphInput::from_graph(&state.graph);
        let mut tape = Tape::new();
        let eval = self.forward_masks(&mut tape, &graph);
        let t = graph.len();
        let off_conf = tape.value(eval.offset_conf);
        let offset_valid: Vec<Vec<bool>> = (0..t)
            .map(|i| {
                (0..set.len())
                    .map(|k| off_conf.data[i * set.len() + k].to_f64() >= self.threshold)
                    .collect()
            })
            .collect();
        let piv_conf = tape.value(eval.pivot_conf);
        let pivot_valid: Vec<bool> = (0..t)
            .map(|i| {
                piv_conf.data[i].to_f64() >= self.threshold
                    && offset_valid[i].iter().any(|v| *v)
            })
            .collect();
        crate::masks::ActionMasks { pivot_valid, offset_valid }
    }
}

impl<F: Real> AvnMasks<F> {
    fn forward_masks(&self, tape: &mut Tape<F>, graph: &GraphInput) -> AvnEval {
        self.model.forward(tape, graph)
    }
}
