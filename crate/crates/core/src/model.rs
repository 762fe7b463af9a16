//! HTGCN forward pass.
//!
//! Every snapshot in the window is embedded by a two-layer graph
//! convolution `Â ReLU(Â X W0) W1` over the collapsed adjacency of the
//! labeled node type. The residual compressed aggregation then folds the
//! window left to right: for each meta-path, aligned endpoint pairs of the
//! previous carried embedding and the current snapshot embedding form
//! per-pair outer products (`P x d x d`, stored flattened as `P x d²`),
//! which a learned `d² -> d` map plus sigmoid compresses and scatter-adds
//! onto the current endpoints. A node-level softmax attention reweights
//! the rows, and the final step adds the snapshot embedding back.
//!
//! The literal kernel shape `1 x (N_prev * N_cur)` with one kernel per
//! current node cannot produce an `N x d` update when node counts vary over
//! time; the per-pair `d² -> d` compression is the shape-consistent reading.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Parameter, Tape, Value};
use crate::graph::{collapse_adjacency, normalize_adjacency, GraphError, HeteroSnapshot, NodeType, TypedNodeIndex};
use crate::matrix::DenseMatrix;
use crate::metapath::{pair_rows, shared_anchors, MetaPath, MetaPathError, PairRows, PairingOptions};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    MetaPath(#[from] MetaPathError),
    #[error("window needs at least 2 snapshots, got {0}")]
    WindowTooShort(usize),
    #[error("meta-path {path} must start and end at node type {target}")]
    MetaPathEndpoints { path: String, target: NodeType },
    #[error("{what}: expected {expected}, got {got}")]
    Mismatch { what: &'static str, expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub hidden_dim: usize,
    /// Output width; equals the number of communities.
    pub output_dim: usize,
    pub attention_dim: usize,
    pub meta_paths: Vec<String>,
    /// Multiply attention weights by `N` before scaling rows.
    pub attention_rescale: bool,
    /// `false` gives the convolution-only ablation.
    pub use_rescac: bool,
}

impl ModelConfig {
    pub fn parsed_meta_paths(&self) -> Result<Vec<MetaPath>, MetaPathError> {
        self.meta_paths.iter().map(|s| s.parse()).collect()
    }
}

/// Uniform on `[-a, a]`, `a = sqrt(6 / (rows + cols))`.
pub fn glorot_uniform<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DenseMatrix {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-a..=a)).collect();
    DenseMatrix::from_raw(rows, cols, data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HgcnParams {
    pub w0: Parameter,
    pub w1: Parameter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResCacParams {
    /// One `d² x d` compression map per meta-path.
    pub compress: Vec<Parameter>,
    /// `d_a x d`
    pub v_hat: Parameter,
    /// `1 x d_a`
    pub w_hat: Parameter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HtgcnParams {
    pub hgcn: HgcnParams,
    pub rescac: ResCacParams,
}

impl HtgcnParams {
    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let (dim_in, h, d, da) = (cfg.feature_dim, cfg.hidden_dim, cfg.output_dim, cfg.attention_dim);
        let w0 = Parameter::new("W0", glorot_uniform(dim_in, h, rng));
        let w1 = Parameter::new("W1", glorot_uniform(h, d, rng));
        let compress = (0..cfg.meta_paths.len())
            .map(|k| Parameter::new(format!("W_tilde.{k}"), glorot_uniform(d * d, d, rng)))
            .collect();
        let v_hat = Parameter::new("V_hat", glorot_uniform(da, d, rng));
        let w_hat = Parameter::new("W_hat", glorot_uniform(1, da, rng));
        Self { hgcn: HgcnParams { w0, w1 }, rescac: ResCacParams { compress, v_hat, w_hat } }
    }

    pub fn parameters(&self) -> Vec<&Parameter> {
        let mut out = vec![&self.hgcn.w0, &self.hgcn.w1];
        out.extend(self.rescac.compress.iter());
        out.push(&self.rescac.v_hat);
        out.push(&self.rescac.w_hat);
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out = vec![&mut self.hgcn.w0, &mut self.hgcn.w1];
        out.extend(self.rescac.compress.iter_mut());
        out.push(&mut self.rescac.v_hat);
        out.push(&mut self.rescac.w_hat);
        out
    }

    /// Parameter matrices in [`HtgcnParams::parameters`] order.
    pub fn matrices(&self) -> Vec<DenseMatrix> {
        self.parameters().into_iter().map(|p| p.data.clone()).collect()
    }

    pub fn set_matrices(&mut self, mats: &[DenseMatrix]) {
        for (p, m) in self.parameters_mut().into_iter().zip(mats) {
            p.data = m.clone();
        }
    }

    /// Records all parameters as differentiable leaves.
    pub fn record(&self, tape: &mut Tape) -> ParamValues {
        ParamValues {
            w0: self.hgcn.w0.record(tape),
            w1: self.hgcn.w1.record(tape),
            compress: self.rescac.compress.iter().map(|p| p.record(tape)).collect(),
            v_hat: self.rescac.v_hat.record(tape),
            w_hat: self.rescac.w_hat.record(tape),
        }
    }

    pub fn absorb_grads(&mut self, tape: &Tape, values: &ParamValues) {
        for (p, v) in self.parameters_mut().into_iter().zip(values.in_order()) {
            p.absorb_grad(tape, v);
        }
    }
}

/// Tape handles of the recorded parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamValues {
    pub w0: Value,
    pub w1: Value,
    pub compress: Vec<Value>,
    pub v_hat: Value,
    pub w_hat: Value,
}

impl ParamValues {
    pub fn in_order(&self) -> Vec<Value> {
        let mut out = vec![self.w0, self.w1];
        out.extend(self.compress.iter().copied());
        out.push(self.v_hat);
        out.push(self.w_hat);
        out
    }
}

/// Model-ready view of one snapshot restricted to the labeled node type.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSnapshot {
    pub time_index: i64,
    pub index: TypedNodeIndex,
    pub norm_adj: DenseMatrix,
    pub features: DenseMatrix,
    pub labels: Vec<Option<usize>>,
}

impl PreparedSnapshot {
    pub fn build(snapshot: &HeteroSnapshot, target_type: NodeType) -> Result<Self, ModelError> {
        let norm_adj = normalize_adjacency(&collapse_adjacency(snapshot, target_type)?)?;
        Ok(Self {
            time_index: snapshot.time_index(),
            index: snapshot.type_index(target_type)?,
            norm_adj,
            features: snapshot.feature_matrix(target_type)?,
            labels: snapshot.labels(target_type)?,
        })
    }

    pub fn node_count(&self) -> usize {
        self.index.len()
    }
}

/// Snapshots plus per-transition, per-meta-path endpoint row alignments.
/// `transitions[k]` links snapshot `k` to snapshot `k + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedWindow {
    pub snapshots: Vec<PreparedSnapshot>,
    pub transitions: Vec<Vec<PairRows>>,
}

impl PreparedWindow {
    pub fn build<R: Rng + ?Sized>(
        window: &[HeteroSnapshot],
        target_type: NodeType,
        meta_paths: &[MetaPath],
        options: &PairingOptions,
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        if window.len() < 2 {
            return Err(ModelError::WindowTooShort(window.len()));
        }
        for mp in meta_paths {
            if mp.head() != target_type || mp.tail() != target_type {
                return Err(ModelError::MetaPathEndpoints { path: mp.to_string(), target: target_type });
            }
        }
        let snapshots =
            window.iter().map(|s| PreparedSnapshot::build(s, target_type)).collect::<Result<Vec<_>, _>>()?;
        let mut transitions = Vec::with_capacity(window.len() - 1);
        for (k, pair) in window.windows(2).enumerate() {
            let mut per_path = Vec::with_capacity(meta_paths.len());
            for mp in meta_paths {
                let pairing = shared_anchors(&pair[0], &pair[1], mp, options, rng)?;
                per_path.push(pair_rows(&pairing, &snapshots[k].index, &snapshots[k + 1].index)?);
            }
            transitions.push(per_path);
        }
        Ok(Self { snapshots, transitions })
    }

    pub fn last(&self) -> &PreparedSnapshot {
        self.snapshots.last().expect("window is never empty")
    }
}

/// `Â ReLU(Â X W0) W1`; the second layer is linear.
pub fn hgcn_forward(tape: &mut Tape, norm_adj: Value, x: Value, w0: Value, w1: Value) -> Result<Value, ModelError> {
    let xw = tape.matmul(x, w0)?;
    let first = tape.matmul(norm_adj, xw)?;
    let hidden = tape.relu(first);
    let hw = tape.matmul(hidden, w1)?;
    Ok(tape.matmul(norm_adj, hw)?)
}

/// Per-pair outer products, flattened: `H[p, i*d + j] = zp[p, i] * xc[p, j]`.
pub fn interaction_tensor(tape: &mut Tape, zp: Value, xc: Value) -> Result<Value, ModelError> {
    Ok(tape.pair_outer(zp, xc)?)
}

/// `z + scatter(sigmoid(H W̃), targets)`. Returns `z` untouched when there
/// are no pairs.
pub fn compress_and_inject(
    tape: &mut Tape,
    interactions: Value,
    targets: &[usize],
    w_tilde: Value,
    z: Value,
) -> Result<Value, ModelError> {
    let p = tape.shape(interactions).0;
    if p != targets.len() {
        return Err(ModelError::Mismatch { what: "pair targets", expected: p, got: targets.len() });
    }
    if p == 0 {
        return Ok(z);
    }
    let compressed = tape.matmul(interactions, w_tilde)?;
    let gated = tape.sigmoid(compressed);
    Ok(tape.scatter_add_rows(z, gated, targets)?)
}

/// Softmax over nodes of `Ŵ tanh(V̂ z_iᵀ)`, returned as an `N x 1` column.
pub fn node_attention(tape: &mut Tape, z: Value, v_hat: Value, w_hat: Value) -> Result<Value, ModelError> {
    let vt = tape.transpose(v_hat);
    let projected = tape.matmul(z, vt)?;
    let squashed = tape.tanh(projected);
    let wt = tape.transpose(w_hat);
    let scores = tape.matmul(squashed, wt)?;
    let row = tape.transpose(scores);
    let weights = tape.softmax_over_rows(row);
    Ok(tape.transpose(weights))
}

/// Row `i` of `z` times `weights[i]`, optionally rescaled by `N`.
pub fn apply_attention(tape: &mut Tape, z: Value, weights: Value, rescale: bool) -> Result<Value, ModelError> {
    let weights = if rescale {
        let n = tape.shape(z).0 as f64;
        tape.scale(weights, n)
    } else {
        weights
    };
    Ok(tape.diag_row_scale(z, weights)?)
}

/// One aggregation step from the carried embedding of snapshot `t-1` to
/// snapshot `t`.
pub fn rescac_step(
    tape: &mut Tape,
    prev_z: Value,
    cur_x: Value,
    alignments: &[PairRows],
    params: &ParamValues,
    attention_rescale: bool,
) -> Result<Value, ModelError> {
    if alignments.len() != params.compress.len() {
        return Err(ModelError::Mismatch {
            what: "compression maps per meta-path",
            expected: alignments.len(),
            got: params.compress.len(),
        });
    }
    let mut z = cur_x;
    for (rows, &w_tilde) in alignments.iter().zip(&params.compress) {
        if rows.prev.is_empty() {
            continue;
        }
        let zp = tape.gather_rows(prev_z, &rows.prev)?;
        let xc = tape.gather_rows(cur_x, &rows.cur)?;
        let h = interaction_tensor(tape, zp, xc)?;
        z = compress_and_inject(tape, h, &rows.cur, w_tilde, z)?;
    }
    let weights = node_attention(tape, z, params.v_hat, params.w_hat)?;
    apply_attention(tape, z, weights, attention_rescale)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardPass {
    pub params: ParamValues,
    /// Convolution output of every snapshot in the window.
    pub embeddings: Vec<Value>,
    /// Final `N x d` representation of the last snapshot.
    pub output: Value,
}

pub fn htgcn_forward(
    tape: &mut Tape,
    window: &PreparedWindow,
    params: &HtgcnParams,
    cfg: &ModelConfig,
) -> Result<ForwardPass, ModelError> {
    if window.snapshots.len() < 2 {
        return Err(ModelError::WindowTooShort(window.snapshots.len()));
    }
    let pv = params.record(tape);
    let mut embeddings = Vec::with_capacity(window.snapshots.len());
    for snap in &window.snapshots {
        if snap.features.cols() != cfg.feature_dim {
            return Err(ModelError::Mismatch {
                what: "feature dimension",
                expected: cfg.feature_dim,
                got: snap.features.cols(),
            });
        }
        let adj = tape.constant(snap.norm_adj.clone());
        let x = tape.constant(snap.features.clone());
        embeddings.push(hgcn_forward(tape, adj, x, pv.w0, pv.w1)?);
    }
    let last = *embeddings.last().expect("window has snapshots");
    let output = if cfg.use_rescac {
        let mut carried = embeddings[0];
        for (k, alignments) in window.transitions.iter().enumerate() {
            carried = rescac_step(tape, carried, embeddings[k + 1], alignments, &pv, cfg.attention_rescale)?;
        }
        tape.add(carried, last)?
    } else {
        last
    };
    Ok(ForwardPass { params: pv, embeddings, output })
}
