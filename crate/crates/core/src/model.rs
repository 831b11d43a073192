//! Dual-view graph attention + LSTM window classifier.
//!
//! A window (`m` timestamps by `w` channels) is run through two GAT views:
//! the feature view treats each channel as a node carrying its `m` window
//! values, the temporal view treats each timestamp as a node carrying its
//! `w` channel values. Both graphs are fully connected with self-loops.
//! The two view outputs and the raw window are fused channel-wise with
//! fixed weights, passed through an LSTM, and the last hidden state feeds
//! an affine head producing one logit per class.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{dropout_mask, Graph, NodeId, Tensor};

/// Output nonlinearity applied to the GAT aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
    Elu,
}

/// How the attention-logit nonlinearity treats negative values. `Slope` is
/// standard LeakyReLU; `ClampConst` replaces negatives with the constant,
/// kept as an ablation switch for the literal wording.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LeakyMode {
    Slope(f64),
    ClampConst(f64),
}

impl Default for LeakyMode {
    fn default() -> Self {
        LeakyMode::Slope(0.2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Window length m.
    pub window_len: usize,
    /// Channel count of the input window (5k with STL, k without).
    pub channels: usize,
    /// LSTM hidden size.
    pub hidden: usize,
    /// Number of output classes.
    pub classes: usize,
    /// Fusion weights for [h_feat, x, h_time].
    pub fusion_weights: [f64; 3],
    pub activation: Activation,
    pub leaky: LeakyMode,
    pub dropout: f64,
    pub use_feature_gat: bool,
    pub use_temporal_gat: bool,
}

impl ModelConfig {
    pub fn new(window_len: usize, channels: usize, classes: usize) -> Self {
        ModelConfig {
            window_len,
            channels,
            hidden: 64,
            classes,
            fusion_weights: [0.5, 1.0, 0.5],
            activation: Activation::default(),
            leaky: LeakyMode::default(),
            dropout: 0.2,
            use_feature_gat: true,
            use_temporal_gat: true,
        }
    }

    /// LSTM input width: three fused blocks of `channels` each.
    pub fn fused_width(&self) -> usize {
        3 * self.channels
    }

    /// Stable hash of the configuration, recorded in reports and manifests.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        format!("{:016x}", fnv1a64(json.as_bytes()))
    }
}

pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// One GAT layer: shared linear map `w` (F x F) and attention vector `a`
/// (2F x 1).
#[derive(Debug, Clone, PartialEq)]
pub struct GatLayerParams {
    pub w: Tensor,
    pub a: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub w_f: Tensor,
    pub w_i: Tensor,
    pub w_o: Tensor,
    pub w_c: Tensor,
    pub u_f: Tensor,
    pub u_i: Tensor,
    pub u_o: Tensor,
    pub u_c: Tensor,
    pub b_f: Tensor,
    pub b_i: Tensor,
    pub b_o: Tensor,
    pub b_c: Tensor,
}

/// All trainable arrays of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct MGatParams {
    pub config: ModelConfig,
    pub feature_gat: GatLayerParams,
    pub temporal_gat: GatLayerParams,
    pub lstm: LstmParams,
    pub head_w: Tensor,
    pub head_b: Tensor,
}

/// Row-stochastic attention coefficients; row i holds the weights node i
/// assigns to its neighbors.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMatrix(pub Tensor);

impl AttentionMatrix {
    pub fn size(&self) -> usize {
        self.0.rows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0.get(i, j)
    }
}

fn xavier(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::from_vec(rows, cols, data).expect("sized buffer")
}

impl MGatParams {
    pub fn init(config: ModelConfig, rng: &mut impl Rng) -> Self {
        let m = config.window_len;
        let w = config.channels;
        let h = config.hidden;
        let d = config.fused_width();
        let c = config.classes;
        MGatParams {
            feature_gat: GatLayerParams {
                w: xavier(m, m, rng),
                a: xavier(2 * m, 1, rng),
            },
            temporal_gat: GatLayerParams {
                w: xavier(w, w, rng),
                a: xavier(2 * w, 1, rng),
            },
            lstm: LstmParams {
                w_f: xavier(h, d, rng),
                w_i: xavier(h, d, rng),
                w_o: xavier(h, d, rng),
                w_c: xavier(h, d, rng),
                u_f: xavier(h, h, rng),
                u_i: xavier(h, h, rng),
                u_o: xavier(h, h, rng),
                u_c: xavier(h, h, rng),
                b_f: Tensor::zeros(h, 1),
                b_i: Tensor::zeros(h, 1),
                b_o: Tensor::zeros(h, 1),
                b_c: Tensor::zeros(h, 1),
            },
            head_w: xavier(c, h, rng),
            head_b: Tensor::zeros(c, 1),
            config,
        }
    }

    /// Named views over every trainable array, in a fixed order.
    pub fn named_tensors(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("feature_gat.w", &self.feature_gat.w),
            ("feature_gat.a", &self.feature_gat.a),
            ("temporal_gat.w", &self.temporal_gat.w),
            ("temporal_gat.a", &self.temporal_gat.a),
            ("lstm.w_f", &self.lstm.w_f),
            ("lstm.w_i", &self.lstm.w_i),
            ("lstm.w_o", &self.lstm.w_o),
            ("lstm.w_c", &self.lstm.w_c),
            ("lstm.u_f", &self.lstm.u_f),
            ("lstm.u_i", &self.lstm.u_i),
            ("lstm.u_o", &self.lstm.u_o),
            ("lstm.u_c", &self.lstm.u_c),
            ("lstm.b_f", &self.lstm.b_f),
            ("lstm.b_i", &self.lstm.b_i),
            ("lstm.b_o", &self.lstm.b_o),
            ("lstm.b_c", &self.lstm.b_c),
            ("head.w", &self.head_w),
            ("head.b", &self.head_b),
        ]
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![
            ("feature_gat.w", &mut self.feature_gat.w),
            ("feature_gat.a", &mut self.feature_gat.a),
            ("temporal_gat.w", &mut self.temporal_gat.w),
            ("temporal_gat.a", &mut self.temporal_gat.a),
            ("lstm.w_f", &mut self.lstm.w_f),
            ("lstm.w_i", &mut self.lstm.w_i),
            ("lstm.w_o", &mut self.lstm.w_o),
            ("lstm.w_c", &mut self.lstm.w_c),
            ("lstm.u_f", &mut self.lstm.u_f),
            ("lstm.u_i", &mut self.lstm.u_i),
            ("lstm.u_o", &mut self.lstm.u_o),
            ("lstm.u_c", &mut self.lstm.u_c),
            ("lstm.b_f", &mut self.lstm.b_f),
            ("lstm.b_i", &mut self.lstm.b_i),
            ("lstm.b_o", &mut self.lstm.b_o),
            ("lstm.b_c", &mut self.lstm.b_c),
            ("head.w", &mut self.head_w),
            ("head.b", &mut self.head_b),
        ]
    }
}

/// Node ids of every parameter leaf inside one forward graph, in the same
/// order as [`MGatParams::named_tensors`].
pub struct ParamNodes(pub Vec<NodeId>);

/// Result of one forward pass, still attached to its graph.
pub struct ForwardPass {
    pub logits: NodeId,
    pub params: ParamNodes,
    pub feature_attention: AttentionMatrix,
    pub temporal_attention: AttentionMatrix,
}

fn apply_activation(graph: &mut Graph, x: NodeId, act: Activation) -> NodeId {
    match act {
        Activation::Tanh => graph.tanh(x),
        Activation::Relu => graph.relu(x),
        Activation::Elu => graph.elu(x),
    }
}

fn apply_leaky(graph: &mut Graph, x: NodeId, mode: LeakyMode) -> NodeId {
    match mode {
        LeakyMode::Slope(s) => graph.leaky_relu(x, s),
        LeakyMode::ClampConst(c) => graph.clamp_negatives(x, c),
    }
}

/// One GAT layer over a fully connected graph with self-loops.
///
/// `nodes` is N x F. Attention logits are
/// `e_ij = LeakyReLU(a^T [W h_i || W h_j])`, normalized per destination row
/// with softmax; the output is `act(alpha . (nodes W^T))`.
pub fn gat_forward(
    graph: &mut Graph,
    nodes: NodeId,
    w: NodeId,
    a: NodeId,
    activation: Activation,
    leaky: LeakyMode,
) -> Result<(NodeId, AttentionMatrix)> {
    let f = graph.value(w).rows();
    if graph.value(nodes).cols() != f {
        return Err(Error::Shape(format!(
            "gat: node width {} vs weight {}x{}",
            graph.value(nodes).cols(),
            f,
            graph.value(w).cols()
        )));
    }
    if graph.value(a).shape() != (2 * f, 1) {
        return Err(Error::Shape(format!(
            "gat: attention vector {:?}, expected {}x1",
            graph.value(a).shape(),
            2 * f
        )));
    }
    let wt = graph.transpose(w);
    let wh = graph.matmul(nodes, wt)?; // N x F
    let a_src = graph.slice_rows(a, 0, f)?;
    let a_dst = graph.slice_rows(a, f, f)?;
    let s_src = graph.matmul(wh, a_src)?; // N x 1, contribution of h_i
    let s_dst = graph.matmul(wh, a_dst)?; // N x 1, contribution of h_j
    let e_raw = graph.outer_sum(s_src, s_dst)?;
    let e = apply_leaky(graph, e_raw, leaky);
    let alpha = graph.row_softmax(e, None)?;
    let agg = graph.matmul(alpha, wh)?;
    let out = apply_activation(graph, agg, activation);
    Ok((out, AttentionMatrix(graph.value(alpha).clone())))
}

/// LSTM over the rows of `seq` (m x D), returning the last hidden state
/// (H x 1). Initial hidden and cell states are zero.
pub fn lstm_forward(graph: &mut Graph, seq: NodeId, lstm: &LstmNodes) -> Result<NodeId> {
    let m = graph.value(seq).rows();
    let h_size = graph.value(lstm.b_f).rows();
    let mut h = graph.leaf(Tensor::zeros(h_size, 1));
    let mut c = graph.leaf(Tensor::zeros(h_size, 1));
    for t in 0..m {
        let row = graph.row(seq, t)?;
        let x = graph.transpose(row); // D x 1
        let gate = |graph: &mut Graph, w: NodeId, u: NodeId, b: NodeId, h: NodeId| -> Result<NodeId> {
            let wx = graph.matmul(w, x)?;
            let uh = graph.matmul(u, h)?;
            let s = graph.add(wx, uh)?;
            graph.add(s, b)
        };
        let f_pre = gate(graph, lstm.w_f, lstm.u_f, lstm.b_f, h)?;
        let f = graph.sigmoid(f_pre);
        let i_pre = gate(graph, lstm.w_i, lstm.u_i, lstm.b_i, h)?;
        let i = graph.sigmoid(i_pre);
        let o_pre = gate(graph, lstm.w_o, lstm.u_o, lstm.b_o, h)?;
        let o = graph.sigmoid(o_pre);
        let c_pre = gate(graph, lstm.w_c, lstm.u_c, lstm.b_c, h)?;
        let c_tilde = graph.tanh(c_pre);
        let keep = graph.mul(f, c)?;
        let write = graph.mul(i, c_tilde)?;
        c = graph.add(keep, write)?;
        let c_act = graph.tanh(c);
        h = graph.mul(o, c_act)?;
    }
    Ok(h)
}

/// Node ids of the LSTM parameter leaves within one graph.
pub struct LstmNodes {
    pub w_f: NodeId,
    pub w_i: NodeId,
    pub w_o: NodeId,
    pub w_c: NodeId,
    pub u_f: NodeId,
    pub u_i: NodeId,
    pub u_o: NodeId,
    pub u_c: NodeId,
    pub b_f: NodeId,
    pub b_i: NodeId,
    pub b_o: NodeId,
    pub b_c: NodeId,
}

/// Build the full forward graph for one window. In train mode a dropout
/// mask is applied to the fused sequence; eval mode is deterministic.
pub fn build_forward(
    graph: &mut Graph,
    params: &MGatParams,
    window: &Tensor,
    training: bool,
    rng: &mut impl Rng,
) -> Result<ForwardPass> {
    let cfg = &params.config;
    if window.shape() != (cfg.window_len, cfg.channels) {
        return Err(Error::Shape(format!(
            "window {:?} does not match model input {}x{}",
            window.shape(),
            cfg.window_len,
            cfg.channels
        )));
    }

    let fw = graph.leaf(params.feature_gat.w.clone());
    let fa = graph.leaf(params.feature_gat.a.clone());
    let tw = graph.leaf(params.temporal_gat.w.clone());
    let ta = graph.leaf(params.temporal_gat.a.clone());
    let lstm = LstmNodes {
        w_f: graph.leaf(params.lstm.w_f.clone()),
        w_i: graph.leaf(params.lstm.w_i.clone()),
        w_o: graph.leaf(params.lstm.w_o.clone()),
        w_c: graph.leaf(params.lstm.w_c.clone()),
        u_f: graph.leaf(params.lstm.u_f.clone()),
        u_i: graph.leaf(params.lstm.u_i.clone()),
        u_o: graph.leaf(params.lstm.u_o.clone()),
        u_c: graph.leaf(params.lstm.u_c.clone()),
        b_f: graph.leaf(params.lstm.b_f.clone()),
        b_i: graph.leaf(params.lstm.b_i.clone()),
        b_o: graph.leaf(params.lstm.b_o.clone()),
        b_c: graph.leaf(params.lstm.b_c.clone()),
    };
    let head_w = graph.leaf(params.head_w.clone());
    let head_b = graph.leaf(params.head_b.clone());
    let x = graph.leaf(window.clone());

    let identity_attention = |n: usize| {
        let mut t = Tensor::zeros(n, n);
        for i in 0..n {
            t.set(i, i, 1.0);
        }
        AttentionMatrix(t)
    };

    // Feature view: channels are nodes, each carrying its m window values.
    let (h_feat, att_feat) = if cfg.use_feature_gat {
        let nodes = graph.transpose(x); // channels x m
        let (out, att) = gat_forward(graph, nodes, fw, fa, cfg.activation, cfg.leaky)?;
        (graph.transpose(out), att)
    } else {
        (
            graph.leaf(Tensor::zeros(cfg.window_len, cfg.channels)),
            identity_attention(cfg.channels),
        )
    };

    // Temporal view: timestamps are nodes, each carrying its channel row.
    let (h_time, att_time) = if cfg.use_temporal_gat {
        gat_forward(graph, x, tw, ta, cfg.activation, cfg.leaky)?
    } else {
        (
            graph.leaf(Tensor::zeros(cfg.window_len, cfg.channels)),
            identity_attention(cfg.window_len),
        )
    };

    let fused = fuse(graph, h_feat, x, h_time, cfg.fusion_weights)?;

    let seq = if training && cfg.dropout > 0.0 {
        let mask = dropout_mask(
            cfg.window_len,
            cfg.fused_width(),
            cfg.dropout,
            true,
            rng,
        )?;
        let mask = graph.leaf(mask);
        graph.mul(fused, mask)?
    } else {
        fused
    };

    let h_final = lstm_forward(graph, seq, &lstm)?;
    let scores = graph.matmul(head_w, h_final)?;
    let logits = graph.add(scores, head_b)?;

    Ok(ForwardPass {
        logits,
        params: ParamNodes(vec![
            fw, fa, tw, ta, lstm.w_f, lstm.w_i, lstm.w_o, lstm.w_c, lstm.u_f, lstm.u_i,
            lstm.u_o, lstm.u_c, lstm.b_f, lstm.b_i, lstm.b_o, lstm.b_c, head_w, head_b,
        ]),
        feature_attention: att_feat,
        temporal_attention: att_time,
    })
}

/// Weighted channel concatenation: `[w0*h_feat || w1*x || w2*h_time]`.
pub fn fuse(
    graph: &mut Graph,
    h_feat: NodeId,
    x: NodeId,
    h_time: NodeId,
    weights: [f64; 3],
) -> Result<NodeId> {
    let a = graph.scale(h_feat, weights[0]);
    let b = graph.scale(x, weights[1]);
    let c = graph.scale(h_time, weights[2]);
    graph.concat_cols(&[a, b, c])
}

/// Eval-style forward: logits plus both attention matrices.
pub fn model_forward(
    params: &MGatParams,
    window: &Tensor,
    training: bool,
    rng: &mut impl Rng,
) -> Result<(Vec<f64>, AttentionMatrix, AttentionMatrix)> {
    let mut graph = Graph::new();
    let pass = build_forward(&mut graph, params, window, training, rng)?;
    Ok((
        graph.value(pass.logits).data().to_vec(),
        pass.feature_attention,
        pass.temporal_attention,
    ))
}

/// `L = w[y] * (-logit[y] + logsumexp(logits))`, log-sum-exp stable.
pub fn weighted_ce_loss(logits: &[f64], y: usize, class_weights: &[f64]) -> Result<f64> {
    if y >= logits.len() || class_weights.len() != logits.len() {
        return Err(Error::Numeric(format!(
            "class id {} / weights {} vs {} logits",
            y,
            class_weights.len(),
            logits.len()
        )));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    Ok(class_weights[y] * (-logits[y] + lse))
}

// ---------------------------------------------------------------------------
// Checkpoint format: JSON container with a version tag, the config block and
// every parameter array by name. Portable by semantics, not byte-for-byte.
// ---------------------------------------------------------------------------

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ArrayRepr {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointRepr {
    format_version: u32,
    config: ModelConfig,
    config_hash: String,
    params: Vec<(String, ArrayRepr)>,
}

pub fn save_checkpoint(params: &MGatParams, path: &std::path::Path) -> Result<()> {
    let repr = CheckpointRepr {
        format_version: CHECKPOINT_VERSION,
        config: params.config.clone(),
        config_hash: params.config.hash(),
        params: params
            .named_tensors()
            .into_iter()
            .map(|(name, t)| {
                (
                    name.to_string(),
                    ArrayRepr {
                        rows: t.rows(),
                        cols: t.cols(),
                        data: t.data().to_vec(),
                    },
                )
            })
            .collect(),
    };
    crate::pipeline::write_atomic(path, serde_json::to_string(&repr)?.as_bytes())
}

pub fn load_checkpoint(path: &std::path::Path) -> Result<MGatParams> {
    let text = std::fs::read_to_string(path)?;
    let repr: CheckpointRepr =
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("unreadable: {}", e)))?;
    if repr.format_version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {} unsupported (expected {})",
            repr.format_version, CHECKPOINT_VERSION
        )));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut params = MGatParams::init(repr.config.clone(), &mut rng);
    let mut stored: std::collections::HashMap<String, ArrayRepr> =
        repr.params.into_iter().collect();
    for (name, tensor) in params.named_tensors_mut() {
        let arr = stored
            .remove(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing array {}", name)))?;
        if (arr.rows, arr.cols) != tensor.shape() || arr.data.len() != arr.rows * arr.cols {
            return Err(Error::Checkpoint(format!(
                "array {} has shape {}x{}, expected {:?}",
                name, arr.rows, arr.cols, tensor.shape()
            )));
        }
        *tensor = Tensor::from_vec(arr.rows, arr.cols, arr.data)?;
    }
    Ok(params)
}

use rand::SeedableRng;
