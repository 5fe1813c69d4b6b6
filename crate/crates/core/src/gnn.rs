//! Ten single-layer message-passing operators with one output channel.
//!
//! Every operator maps node features `X` (n x d), edge features `E` (m x k)
//! and the edge list to one logit per node. Aggregation always runs over
//! in-neighbours, and every kind adds a trainable scalar output bias.
//!
//! | kind | logit `z_i` (before the bias) |
//! |------|-------------------------------|
//! | ResGatedGraphConv | `w1ᵀx_i + Σ_j σ(w3ᵀx_i + w4ᵀx_j + w5ᵀe_ij)·w2ᵀx_j` |
//! | GATConv | `Σ_j α_ij·wᵀx_j`, `α = softmax_j LeakyReLU(a_s·wᵀx_i + a_t·wᵀx_j + a_e·w_eᵀe_ij)` |
//! | GATv2Conv | `Σ_j α_ij·w_outᵀx_j`, `α = softmax_j aᵀLeakyReLU(W_s x_i + W_t x_j + W_e e_ij)` |
//! | TransformerConv | `w_rᵀx_i + Σ_j softmax_j(q_i k_j)·v_j` |
//! | GINEConv | `wᵀ(x_i + Σ_j ReLU(x_j + W_e e_ij))` |
//! | GMMConv | `w_rootᵀx_i + ⅕ Σ_κ Σ_j g_κ(e_ij)·w_κᵀx_j`, Gaussian kernels `g_κ` |
//! | MPNN | `w_rootᵀx_i + Σ_j h(e_ij)ᵀx_j`, `h` linear from k to d |
//! | GENConv | `wᵀ(x_i + Σ_j softmax_j(m_ij) ⊙ m_ij)`, `m_ij = ReLU(x_j + W_e e_ij) + 1e-7` |
//! | PDNConv | `Σ_j σ(u2ᵀReLU(U1 e_ij))·w_nᵀx_j` |
//! | GeneralConv | `w_selfᵀx_i + mean_j(w_msgᵀx_j + w_eᵀe_ij)` |

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::CountyGraph;
use crate::tensor::{
    glorot_from_rng, seeded_rng, sigmoid, Segments, Tape, Tensor, TensorError, Var,
};

/// Number of Gaussian kernels in [`OperatorKind::GmmConv`].
pub const GMM_KERNELS: usize = 5;
/// Hidden attention width of [`OperatorKind::GatV2Conv`].
pub const GATV2_HIDDEN: usize = 8;
pub const LEAKY_SLOPE: f64 = 0.2;
const GEN_MESSAGE_EPS: f64 = 1e-7;

pub const CHECKPOINT_FORMAT: &str = "sitegnn-operator-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum GnnError {
    #[error("invalid dimensions d={d}, k={k}: both must be at least 1")]
    InvalidDims { d: usize, k: usize },
    #[error("graph has dims (d={got_d}, k={got_k}) but operator expects (d={d}, k={k})")]
    DimMismatch {
        d: usize,
        k: usize,
        got_d: usize,
        got_k: usize,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("missing parameter {0}")]
    MissingParam(String),
    #[error("parameter {name} has shape {got:?}, expected {expected:?}")]
    ParamShape {
        name: String,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("node {0} out of range")]
    InvalidNodeId(usize),
    #[error("unknown operator kind {0:?}")]
    UnknownKind(String),
    #[error("tensor error: {0}")]
    Tensor(TensorError),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl From<TensorError> for GnnError {
    fn from(e: TensorError) -> Self {
        match e {
            TensorError::NonFinite { op } => GnnError::NonFinite(op),
            other => GnnError::Tensor(other),
        }
    }
}

pub type Result<T, E = GnnError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OperatorKind {
    #[serde(rename = "ResGatedGraphConv")]
    ResGatedGraphConv,
    #[serde(rename = "GATConv")]
    GatConv,
    #[serde(rename = "GATv2Conv")]
    GatV2Conv,
    #[serde(rename = "TransformerConv")]
    TransformerConv,
    #[serde(rename = "GINEConv")]
    GineConv,
    #[serde(rename = "GMMConv")]
    GmmConv,
    #[serde(rename = "MPNN")]
    Mpnn,
    #[serde(rename = "GENConv")]
    GenConv,
    #[serde(rename = "PDNConv")]
    PdnConv,
    #[serde(rename = "GeneralConv")]
    GeneralConv,
}

impl OperatorKind {
    pub const ALL: [OperatorKind; 10] = [
        OperatorKind::ResGatedGraphConv,
        OperatorKind::GatConv,
        OperatorKind::GatV2Conv,
        OperatorKind::TransformerConv,
        OperatorKind::GineConv,
        OperatorKind::GmmConv,
        OperatorKind::Mpnn,
        OperatorKind::GenConv,
        OperatorKind::PdnConv,
        OperatorKind::GeneralConv,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OperatorKind::ResGatedGraphConv => "ResGatedGraphConv",
            OperatorKind::GatConv => "GATConv",
            OperatorKind::GatV2Conv => "GATv2Conv",
            OperatorKind::TransformerConv => "TransformerConv",
            OperatorKind::GineConv => "GINEConv",
            OperatorKind::GmmConv => "GMMConv",
            OperatorKind::Mpnn => "MPNN",
            OperatorKind::GenConv => "GENConv",
            OperatorKind::PdnConv => "PDNConv",
            OperatorKind::GeneralConv => "GeneralConv",
        }
    }

    /// Kinds whose aggregation is a softmax over in-neighbours.
    pub fn is_attention(self) -> bool {
        matches!(
            self,
            OperatorKind::GatConv | OperatorKind::GatV2Conv | OperatorKind::TransformerConv
        )
    }
}

impl fmt::Display for OperatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OperatorKind {
    type Err = GnnError;

    fn from_str(s: &str) -> Result<Self> {
        let wanted = s.trim().to_ascii_lowercase();
        OperatorKind::ALL
            .into_iter()
            .find(|k| k.name().to_ascii_lowercase() == wanted)
            .ok_or_else(|| GnnError::UnknownKind(s.to_string()))
    }
}

#[derive(Clone, Copy, Debug)]
enum Init {
    Glorot,
    Zero,
    Constant(f64),
    GmmMeans,
}

/// `(name, rows, cols, init)` for every tensor of `kind`, in initialization order.
fn param_specs(kind: OperatorKind, d: usize, k: usize) -> Vec<(&'static str, usize, usize, Init)> {
    use Init::*;
    let mut specs = match kind {
        OperatorKind::ResGatedGraphConv => vec![
            ("w1", d, 1, Glorot),
            ("w2", d, 1, Glorot),
            ("w3", d, 1, Glorot),
            ("w4", d, 1, Glorot),
            ("w5", k, 1, Glorot),
        ],
        OperatorKind::GatConv => vec![
            ("w", d, 1, Glorot),
            ("w_e", k, 1, Glorot),
            ("a_s", 1, 1, Glorot),
            ("a_t", 1, 1, Glorot),
            ("a_e", 1, 1, Glorot),
        ],
        OperatorKind::GatV2Conv => vec![
            ("w_s", d, GATV2_HIDDEN, Glorot),
            ("w_t", d, GATV2_HIDDEN, Glorot),
            ("w_e", k, GATV2_HIDDEN, Glorot),
            ("a", GATV2_HIDDEN, 1, Glorot),
            ("w_out", d, 1, Glorot),
        ],
        OperatorKind::TransformerConv => vec![
            ("w_q", d, 1, Glorot),
            ("w_k", d, 1, Glorot),
            ("w_v", d, 1, Glorot),
            ("w_ke", k, 1, Glorot),
            ("w_ve", k, 1, Glorot),
            ("w_r", d, 1, Glorot),
        ],
        OperatorKind::GineConv => vec![("w_e", k, d, Glorot), ("w", d, 1, Glorot)],
        OperatorKind::GmmConv => vec![
            ("mu", GMM_KERNELS, k, GmmMeans),
            ("sigma", GMM_KERNELS, k, Constant(0.5)),
            ("w", d, GMM_KERNELS, Glorot),
            ("w_root", d, 1, Glorot),
        ],
        OperatorKind::Mpnn => vec![("w_h", k, d, Glorot), ("w_root", d, 1, Glorot)],
        OperatorKind::GenConv => vec![("w_e", k, d, Glorot), ("w", d, 1, Glorot)],
        OperatorKind::PdnConv => vec![
            ("u1", k, k, Glorot),
            ("u2", k, 1, Glorot),
            ("w_n", d, 1, Glorot),
        ],
        OperatorKind::GeneralConv => vec![
            ("w_self", d, 1, Glorot),
            ("w_msg", d, 1, Glorot),
            ("w_e", k, 1, Glorot),
        ],
    };
    specs.push(("bias", 1, 1, Zero));
    specs
}

/// Kernel means on a rank-1 lattice: `mu[κ][c] = ((κ·(c+1)) mod 5) / 4`.
fn gmm_means(k: usize) -> Tensor {
    let mut t = Tensor::zeros(GMM_KERNELS, k);
    for kappa in 0..GMM_KERNELS {
        for c in 0..k {
            t.set(
                kappa,
                c,
                ((kappa * (c + 1)) % GMM_KERNELS) as f64 / (GMM_KERNELS - 1) as f64,
            );
        }
    }
    t
}

/// Named parameter tensors of one operator instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatorParams {
    pub kind: OperatorKind,
    pub d: usize,
    pub k: usize,
    pub seed: u64,
    pub tensors: BTreeMap<String, Tensor>,
}

impl OperatorParams {
    pub fn init(kind: OperatorKind, d: usize, k: usize, seed: u64) -> Result<Self> {
        if d == 0 || k == 0 {
            return Err(GnnError::InvalidDims { d, k });
        }
        let mut rng = seeded_rng(seed);
        let tensors = param_specs(kind, d, k)
            .into_iter()
            .map(|(name, rows, cols, init)| {
                let t = match init {
                    Init::Glorot => glorot_from_rng(rows, cols, &mut rng),
                    Init::Zero => Tensor::zeros(rows, cols),
                    Init::Constant(v) => Tensor::full(rows, cols, v),
                    Init::GmmMeans => gmm_means(cols),
                };
                (name.to_string(), t)
            })
            .collect();
        Ok(Self {
            kind,
            d,
            k,
            seed,
            tensors,
        })
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn n_parameters(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Checks names, shapes and finiteness against the kind's layout.
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.k == 0 {
            return Err(GnnError::InvalidDims {
                d: self.d,
                k: self.k,
            });
        }
        let specs = param_specs(self.kind, self.d, self.k);
        for (name, rows, cols, _) in &specs {
            let t = self
                .tensors
                .get(*name)
                .ok_or_else(|| GnnError::MissingParam(name.to_string()))?;
            if t.shape() != (*rows, *cols) || t.data().len() != rows * cols {
                return Err(GnnError::ParamShape {
                    name: name.to_string(),
                    expected: (*rows, *cols),
                    got: t.shape(),
                });
            }
            if !t.all_finite() {
                return Err(GnnError::NonFinite("parameters"));
            }
        }
        if let Some(extra) = self
            .tensors
            .keys()
            .find(|n| !specs.iter().any(|s| s.0 == n.as_str()))
        {
            return Err(GnnError::Checkpoint(format!(
                "unexpected parameter {extra}"
            )));
        }
        Ok(())
    }

    fn check_graph(&self, d: usize, k: usize) -> Result<()> {
        if (d, k) != (self.d, self.k) {
            return Err(GnnError::DimMismatch {
                d: self.d,
                k: self.k,
                got_d: d,
                got_k: k,
            });
        }
        Ok(())
    }
}

/// Edge index arrays and normalizers derived once from a graph.
#[derive(Clone, Debug)]
pub struct GraphContext {
    n: usize,
    src: Arc<[usize]>,
    dst: Arc<[usize]>,
    segments: Arc<Segments>,
    inv_degree: Tensor,
    node_features: Tensor,
    edge_features: Tensor,
}

impl GraphContext {
    pub fn new(graph: &CountyGraph) -> Result<Self> {
        let n = graph.n_nodes();
        let dst = graph.targets();
        let segments = Segments::new(dst.clone(), n)?;
        let inv_degree = Tensor::from_col(
            segments
                .counts()
                .into_iter()
                .map(|c| if c == 0 { 0.0 } else { 1.0 / c as f64 })
                .collect(),
        );
        Ok(Self {
            n,
            src: graph.sources().into(),
            dst: dst.into(),
            segments: Arc::new(segments),
            inv_degree,
            node_features: graph.node_features().clone(),
            edge_features: graph.edge_features().clone(),
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n
    }

    pub fn node_dim(&self) -> usize {
        self.node_features.cols()
    }

    pub fn edge_dim(&self) -> usize {
        self.edge_features.cols()
    }

    pub fn node_features(&self) -> &Tensor {
        &self.node_features
    }

    pub fn edge_features(&self) -> &Tensor {
        &self.edge_features
    }
}

/// Result of a forward pass recorded on a tape.
pub struct TapedForward {
    pub tape: Tape,
    pub logits: Var,
    pub x: Var,
    pub params: BTreeMap<String, Var>,
    /// Per-edge attention weights for attention kinds.
    pub attention: Option<Var>,
}

impl TapedForward {
    pub fn logit_values(&self) -> Vec<f64> {
        self.tape.value(self.logits).data().to_vec()
    }
}

/// Records the operator on `tape` with caller-supplied variables for every
/// parameter and for `X`. Returns the `n x 1` logits and, for attention
/// kinds, the `m x 1` attention weights.
pub fn build_on_tape(
    kind: OperatorKind,
    t: &mut Tape,
    p: &BTreeMap<String, Var>,
    x: Var,
    ctx: &GraphContext,
) -> Result<(Var, Option<Var>)> {
    let w = |name: &str| {
        p.get(name)
            .copied()
            .ok_or_else(|| GnnError::MissingParam(name.into()))
    };
    let e = t.constant(ctx.edge_features.clone());
    let src = ctx.src.clone();
    let dst = ctx.dst.clone();
    let seg = ctx.segments.clone();
    let k = ctx.edge_features.cols();
    let mut attention = None;

    let z = match kind {
        OperatorKind::ResGatedGraphConv => {
            let root = t.matmul(x, w("w1")?)?;
            let value = t.matmul(x, w("w2")?)?;
            let value = t.gather_rows(value, src.clone())?;
            let gi = t.matmul(x, w("w3")?)?;
            let gi = t.gather_rows(gi, dst)?;
            let gj = t.matmul(x, w("w4")?)?;
            let gj = t.gather_rows(gj, src)?;
            let ge = t.matmul(e, w("w5")?)?;
            let gate = t.add(gi, gj)?;
            let gate = t.add(gate, ge)?;
            let gate = t.sigmoid(gate)?;
            let msg = t.mul(gate, value)?;
            let agg = t.segment_sum(msg, seg)?;
            t.add(root, agg)?
        }
        OperatorKind::GatConv => {
            let h = t.matmul(x, w("w")?)?;
            let h_dst = t.gather_rows(h, dst)?;
            let h_src = t.gather_rows(h, src)?;
            let s_dst = t.mul(h_dst, w("a_s")?)?;
            let s_src = t.mul(h_src, w("a_t")?)?;
            let he = t.matmul(e, w("w_e")?)?;
            let s_e = t.mul(he, w("a_e")?)?;
            let score = t.add(s_dst, s_src)?;
            let score = t.add(score, s_e)?;
            let score = t.leaky_relu(score, LEAKY_SLOPE)?;
            let alpha = t.segment_softmax(score, seg.clone())?;
            attention = Some(alpha);
            let msg = t.mul(alpha, h_src)?;
            t.segment_sum(msg, seg)?
        }
        OperatorKind::GatV2Conv => {
            let hs = t.matmul(x, w("w_s")?)?;
            let hs = t.gather_rows(hs, dst)?;
            let ht = t.matmul(x, w("w_t")?)?;
            let ht = t.gather_rows(ht, src.clone())?;
            let he = t.matmul(e, w("w_e")?)?;
            let pre = t.add(hs, ht)?;
            let pre = t.add(pre, he)?;
            let act = t.leaky_relu(pre, LEAKY_SLOPE)?;
            let score = t.matmul(act, w("a")?)?;
            let alpha = t.segment_softmax(score, seg.clone())?;
            attention = Some(alpha);
            let value = t.matmul(x, w("w_out")?)?;
            let value = t.gather_rows(value, src)?;
            let msg = t.mul(alpha, value)?;
            t.segment_sum(msg, seg)?
        }
        OperatorKind::TransformerConv => {
            let q = t.matmul(x, w("w_q")?)?;
            let q = t.gather_rows(q, dst)?;
            let key = t.matmul(x, w("w_k")?)?;
            let key = t.gather_rows(key, src.clone())?;
            let key_e = t.matmul(e, w("w_ke")?)?;
            let key = t.add(key, key_e)?;
            let value = t.matmul(x, w("w_v")?)?;
            let value = t.gather_rows(value, src)?;
            let value_e = t.matmul(e, w("w_ve")?)?;
            let value = t.add(value, value_e)?;
            let score = t.mul(q, key)?;
            let alpha = t.segment_softmax(score, seg.clone())?;
            attention = Some(alpha);
            let msg = t.mul(alpha, value)?;
            let agg = t.segment_sum(msg, seg)?;
            let root = t.matmul(x, w("w_r")?)?;
            t.add(root, agg)?
        }
        OperatorKind::GineConv => {
            let xj = t.gather_rows(x, src)?;
            let ew = t.matmul(e, w("w_e")?)?;
            let msg = t.add(xj, ew)?;
            let msg = t.relu(msg)?;
            let agg = t.segment_sum(msg, seg)?;
            let m = t.add(x, agg)?;
            t.matmul(m, w("w")?)?
        }
        OperatorKind::GmmConv => {
            let mu = w("mu")?;
            let sigma = w("sigma")?;
            let xw = t.matmul(x, w("w")?)?;
            let xw_src = t.gather_rows(xw, src)?;
            let ones_k = t.constant(Tensor::full(k, 1, 1.0));
            let mut total: Option<Var> = None;
            for kappa in 0..GMM_KERNELS {
                let mut row = Tensor::zeros(1, GMM_KERNELS);
                row.set(0, kappa, 1.0);
                let pick_row = t.constant(row);
                let mut col = Tensor::zeros(GMM_KERNELS, 1);
                col.set(kappa, 0, 1.0);
                let pick_col = t.constant(col);

                let mu_k = t.matmul(pick_row, mu)?;
                let sigma_k = t.matmul(pick_row, sigma)?;
                let diff = t.sub(e, mu_k)?;
                let sq = t.mul(diff, diff)?;
                let var = t.mul(sigma_k, sigma_k)?;
                let q = t.div(sq, var)?;
                let q = t.matmul(q, ones_k)?;
                let q = t.scale(q, -0.5)?;
                let g = t.exp(q)?;
                let value = t.matmul(xw_src, pick_col)?;
                let msg = t.mul(g, value)?;
                total = Some(match total {
                    Some(acc) => t.add(acc, msg)?,
                    None => msg,
                });
            }
            let total = total.expect("at least one kernel");
            let agg = t.segment_sum(total, seg)?;
            let agg = t.scale(agg, 1.0 / GMM_KERNELS as f64)?;
            let root = t.matmul(x, w("w_root")?)?;
            t.add(root, agg)?
        }
        OperatorKind::Mpnn => {
            let h = t.matmul(e, w("w_h")?)?;
            let xj = t.gather_rows(x, src)?;
            let prod = t.mul(h, xj)?;
            let ones_d = t.constant(Tensor::full(ctx.node_dim(), 1, 1.0));
            let msg = t.matmul(prod, ones_d)?;
            let agg = t.segment_sum(msg, seg)?;
            let root = t.matmul(x, w("w_root")?)?;
            t.add(root, agg)?
        }
        OperatorKind::GenConv => {
            let xj = t.gather_rows(x, src)?;
            let ew = t.matmul(e, w("w_e")?)?;
            let m = t.add(xj, ew)?;
            let m = t.relu(m)?;
            let m = t.add_scalar(m, GEN_MESSAGE_EPS)?;
            let alpha = t.segment_softmax(m, seg.clone())?;
            let weighted = t.mul(alpha, m)?;
            let agg = t.segment_sum(weighted, seg)?;
            let h = t.add(x, agg)?;
            t.matmul(h, w("w")?)?
        }
        OperatorKind::PdnConv => {
            let hidden = t.matmul(e, w("u1")?)?;
            let hidden = t.relu(hidden)?;
            let omega = t.matmul(hidden, w("u2")?)?;
            let omega = t.sigmoid(omega)?;
            let value = t.matmul(x, w("w_n")?)?;
            let value = t.gather_rows(value, src)?;
            let msg = t.mul(omega, value)?;
            t.segment_sum(msg, seg)?
        }
        OperatorKind::GeneralConv => {
            let value = t.matmul(x, w("w_msg")?)?;
            let value = t.gather_rows(value, src)?;
            let ew = t.matmul(e, w("w_e")?)?;
            let msg = t.add(value, ew)?;
            let agg = t.segment_sum(msg, seg)?;
            let inv = t.constant(ctx.inv_degree.clone());
            let mean = t.mul(agg, inv)?;
            let root = t.matmul(x, w("w_self")?)?;
            t.add(root, mean)?
        }
    };
    let z = t.add(z, w("bias")?)?;
    Ok((z, attention))
}

/// Forward pass with parameters recorded as trainable leaves and `x` as a
/// leaf that tracks gradients only when `x_requires_grad` is set.
pub fn forward_on_context(
    params: &OperatorParams,
    ctx: &GraphContext,
    x: &Tensor,
    x_requires_grad: bool,
) -> Result<TapedForward> {
    params.check_graph(x.cols(), ctx.edge_dim())?;
    if x.rows() != ctx.n_nodes() {
        return Err(GnnError::Tensor(TensorError::ShapeMismatch {
            op: "forward",
            left: x.shape(),
            right: (ctx.n_nodes(), params.d),
        }));
    }
    let mut tape = Tape::new();
    let vars: BTreeMap<String, Var> = params
        .tensors
        .iter()
        .map(|(name, t)| (name.clone(), tape.param(t.clone())))
        .collect();
    let xv = tape.leaf(x.clone(), x_requires_grad);
    let (logits, attention) = build_on_tape(params.kind, &mut tape, &vars, xv, ctx)?;
    Ok(TapedForward {
        tape,
        logits,
        x: xv,
        params: vars,
        attention,
    })
}

pub fn forward_with_tape(params: &OperatorParams, graph: &CountyGraph) -> Result<TapedForward> {
    params.check_graph(graph.node_dim(), graph.edge_dim())?;
    let ctx = GraphContext::new(graph)?;
    forward_on_context(params, &ctx, graph.node_features(), false)
}

/// Per-node logits.
pub fn forward(params: &OperatorParams, graph: &CountyGraph) -> Result<Vec<f64>> {
    Ok(forward_with_tape(params, graph)?.logit_values())
}

/// Per-edge attention weights (edges in graph storage order), or `None`
/// for kinds without attention.
pub fn attention_weights(params: &OperatorParams, graph: &CountyGraph) -> Result<Option<Vec<f64>>> {
    let fwd = forward_with_tape(params, graph)?;
    Ok(fwd.attention.map(|a| fwd.tape.value(a).data().to_vec()))
}

/// Probability of `node` and its gradient with respect to that node's own
/// feature row, evaluated at node features `x`.
pub fn probability_gradient(
    params: &OperatorParams,
    ctx: &GraphContext,
    x: &Tensor,
    node: usize,
) -> Result<(f64, Vec<f64>)> {
    if node >= ctx.n_nodes() {
        return Err(GnnError::InvalidNodeId(node));
    }
    let mut fwd = forward_on_context(params, ctx, x, true)?;
    let t = &mut fwd.tape;
    let z = t.gather_rows(fwd.logits, Arc::from(vec![node]))?;
    let p = t.sigmoid(z)?;
    let prob = t.value(p).data()[0];
    let grads = t.backward(p)?;
    let gx = grads.wrt(t, fwd.x);
    Ok((prob, gx.row(node).to_vec()))
}

/// `∂ sigmoid(z_node) / ∂ x_node` for the node's own feature row.
pub fn node_input_gradient(
    params: &OperatorParams,
    graph: &CountyGraph,
    node: usize,
) -> Result<Vec<f64>> {
    params.check_graph(graph.node_dim(), graph.edge_dim())?;
    if node >= graph.n_nodes() {
        return Err(GnnError::InvalidNodeId(node));
    }
    let ctx = GraphContext::new(graph)?;
    Ok(probability_gradient(params, &ctx, graph.node_features(), node)?.1)
}

/// Finite-difference check of every parameter tensor and of `X` for one
/// operator on `graph`. The scalar probe is `Σ_i c_i z_i` with fixed random
/// weights `c`. Returns the worst relative error over all checked tensors.
pub fn grad_check_operator(
    params: &OperatorParams,
    graph: &CountyGraph,
    probe_seed: u64,
) -> Result<f64> {
    params.check_graph(graph.node_dim(), graph.edge_dim())?;
    let ctx = GraphContext::new(graph)?;
    let mut rng = seeded_rng(probe_seed);
    let probe = Tensor::from_col(
        (0..graph.n_nodes())
            .map(|_| rng.random::<f64>() * 2.0 - 1.0)
            .collect(),
    );
    let mut targets: Vec<Option<&str>> = vec![None];
    targets.extend(params.tensors.keys().map(|k| Some(k.as_str())));

    let mut worst = 0.0f64;
    for target in targets {
        let start = match target {
            Some(name) => params.tensors[name].clone(),
            None => ctx.node_features.clone(),
        };
        let err = crate::tensor::grad_check(
            |tape, v| {
                let mut vars = BTreeMap::new();
                for (name, t) in &params.tensors {
                    let var = if Some(name.as_str()) == target {
                        v
                    } else {
                        tape.param(t.clone())
                    };
                    vars.insert(name.clone(), var);
                }
                let x = match target {
                    None => v,
                    Some(_) => tape.constant(ctx.node_features.clone()),
                };
                let (z, _) =
                    build_on_tape(params.kind, tape, &vars, x, &ctx).map_err(|e| match e {
                        GnnError::Tensor(t) => t,
                        GnnError::NonFinite(op) => TensorError::NonFinite { op },
                        other => TensorError::InvalidSegments(other.to_string()),
                    })?;
                let c = tape.constant(probe.clone());
                let weighted = tape.mul(z, c)?;
                tape.sum(weighted)
            },
            &start,
            1e-6,
        )?;
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Versioned checkpoint: the parameter map plus free-form run metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub params: OperatorParams,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn new(params: OperatorParams, metadata: BTreeMap<String, String>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            params,
            metadata,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| GnnError::Checkpoint(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint =
            serde_json::from_str(text).map_err(|e| GnnError::Checkpoint(e.to_string()))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(GnnError::Checkpoint(format!(
                "unrecognized format {:?}",
                ck.format
            )));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(GnnError::Checkpoint(format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        ck.params.validate()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n").map_err(|source| GnnError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| GnnError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }
}

/// Convenience for a probability vector from logits.
pub fn probabilities(logits: &[f64]) -> Vec<f64> {
    logits.iter().map(|&z| sigmoid(z)).collect()
}
