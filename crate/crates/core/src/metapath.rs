//! Meta-path instance enumeration and cross-time anchor pairing.
//!
//! For a path `a1 -e1-> a2 -e2-> a3`, nodes of the middle type `a2` that
//! survive from one snapshot to the next tie the two graphs together. Each
//! surviving anchor contributes the cross product of its `a1` endpoints in
//! the previous snapshot with its `a3` endpoints in the current one.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

use crate::graph::{EdgeType, GraphError, HeteroSnapshot, NodeId, NodeType, TypedNodeIndex};
use crate::matrix::DenseMatrix;

/// Default per-anchor cap on sampled endpoint pairs.
pub const DEFAULT_PAIR_CAP: usize = 32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetaPathError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("meta-path must have exactly 3 node types and 2 edge types, got {nodes} and {edges}")]
    BadLength { nodes: usize, edges: usize },
    #[error("cannot parse meta-path {text:?}: {reason}")]
    Parse { text: String, reason: String },
    #[error("snapshots are not consecutive: t={prev} then t={cur}")]
    NonConsecutive { prev: i64, cur: i64 },
    #[error("pair references node {id} which has no row in the {side} matrix")]
    MissingRow { id: NodeId, side: &'static str },
    #[error("matrix has {rows} rows but the {side} index covers {expected} nodes")]
    RowCountMismatch { rows: usize, expected: usize, side: &'static str },
}

/// `a1 -e1-> a2 -e2-> a3`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MetaPath {
    node_types: [NodeType; 3],
    edge_types: [EdgeType; 2],
}

impl MetaPath {
    pub fn new(node_types: &[NodeType], edge_types: &[EdgeType]) -> Result<Self, MetaPathError> {
        match (node_types, edge_types) {
            (&[a1, a2, a3], &[e1, e2]) => Ok(Self { node_types: [a1, a2, a3], edge_types: [e1, e2] }),
            _ => Err(MetaPathError::BadLength { nodes: node_types.len(), edges: edge_types.len() }),
        }
    }

    /// `end -via-> middle -via-> end`.
    pub fn symmetric(end: NodeType, via: EdgeType, middle: NodeType) -> Self {
        Self { node_types: [end, middle, end], edge_types: [via, via] }
    }

    pub fn node_types(&self) -> &[NodeType; 3] {
        &self.node_types
    }

    pub fn edge_types(&self) -> &[EdgeType; 2] {
        &self.edge_types
    }

    pub fn head(&self) -> NodeType {
        self.node_types[0]
    }

    pub fn middle(&self) -> NodeType {
        self.node_types[1]
    }

    pub fn tail(&self) -> NodeType {
        self.node_types[2]
    }

    pub fn is_symmetric(&self) -> bool {
        self.node_types[0] == self.node_types[2] && self.edge_types[0] == self.edge_types[1]
    }

    fn validate(&self, snapshot: &HeteroSnapshot) -> Result<(), GraphError> {
        self.node_types.iter().try_for_each(|&t| snapshot.check_node_type(t))?;
        self.edge_types.iter().try_for_each(|&t| snapshot.check_edge_type(t))
    }
}

/// Text form `a1-e1-a2-e2-a3`, e.g. `0-0-1-0-0`.
impl fmt::Display for MetaPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [a1, a2, a3] = self.node_types;
        let [e1, e2] = self.edge_types;
        write!(f, "{a1}-{e1}-{a2}-{e2}-{a3}")
    }
}

impl FromStr for MetaPath {
    type Err = MetaPathError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let parse_err = |reason: String| MetaPathError::Parse { text: text.to_string(), reason };
        let parts = text
            .trim()
            .split('-')
            .map(|p| p.trim().parse::<u32>().map_err(|e| parse_err(format!("{p:?}: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        if parts.len() != 5 {
            return Err(parse_err(format!("expected 5 dash-separated tags, found {}", parts.len())));
        }
        Self::new(&[parts[0], parts[2], parts[4]], &[parts[1], parts[3]])
    }
}

/// Parses a comma-separated list of meta-paths.
pub fn parse_meta_paths(text: &str) -> Result<Vec<MetaPath>, MetaPathError> {
    text.split(',').filter(|s| !s.trim().is_empty()).map(str::parse).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AnchorPair {
    pub anchor: NodeId,
    pub prev_endpoint: NodeId,
    pub cur_endpoint: NodeId,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnchorPairing {
    pub anchor_ids: Vec<NodeId>,
    pub pairs: Vec<AnchorPair>,
}

impl AnchorPairing {
    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairingOptions {
    /// Maximum pairs kept per anchor; `None` keeps all.
    pub pair_cap: Option<usize>,
    /// Keep pairs whose two endpoints are the same node.
    pub keep_self_pairs: bool,
}

impl Default for PairingOptions {
    fn default() -> Self {
        Self { pair_cap: Some(DEFAULT_PAIR_CAP), keep_self_pairs: false }
    }
}

/// `endpoint_type` neighbors reached from each `anchor_type` node over `edge_type`.
fn endpoints_by_anchor(
    snapshot: &HeteroSnapshot,
    anchor_type: NodeType,
    edge_type: EdgeType,
    endpoint_type: NodeType,
) -> BTreeMap<NodeId, BTreeSet<NodeId>> {
    let type_of = |id| snapshot.node(id).map(|n| n.node_type);
    let mut out: BTreeMap<NodeId, BTreeSet<NodeId>> = BTreeMap::new();
    for e in snapshot.edges().iter().filter(|e| e.edge_type == edge_type) {
        for (anchor, endpoint) in [(e.src, e.dst), (e.dst, e.src)] {
            if type_of(anchor) == Some(anchor_type) && type_of(endpoint) == Some(endpoint_type) {
                out.entry(anchor).or_default().insert(endpoint);
            }
        }
    }
    out
}

/// All `(u, a, v)` instances of the meta-path, sorted. Degenerate `u == v`
/// instances are included.
pub fn enumerate_instances(
    snapshot: &HeteroSnapshot,
    mp: &MetaPath,
) -> Result<Vec<(NodeId, NodeId, NodeId)>, MetaPathError> {
    mp.validate(snapshot)?;
    let heads = endpoints_by_anchor(snapshot, mp.middle(), mp.edge_types[0], mp.head());
    let tails = endpoints_by_anchor(snapshot, mp.middle(), mp.edge_types[1], mp.tail());
    let mut out = Vec::new();
    for (&anchor, us) in &heads {
        let Some(vs) = tails.get(&anchor) else { continue };
        for &u in us {
            for &v in vs {
                out.push((u, anchor, v));
            }
        }
    }
    out.sort_unstable();
    Ok(out)
}

/// Anchor pairing between two consecutive snapshots.
pub fn shared_anchors<R: Rng + ?Sized>(
    prev: &HeteroSnapshot,
    cur: &HeteroSnapshot,
    mp: &MetaPath,
    options: &PairingOptions,
    rng: &mut R,
) -> Result<AnchorPairing, MetaPathError> {
    if prev.time_index() + 1 != cur.time_index() {
        return Err(MetaPathError::NonConsecutive { prev: prev.time_index(), cur: cur.time_index() });
    }
    pair_anchors(prev, cur, mp, options, rng)
}

/// [`shared_anchors`] without the consecutive-time precondition.
pub fn pair_anchors<R: Rng + ?Sized>(
    prev: &HeteroSnapshot,
    cur: &HeteroSnapshot,
    mp: &MetaPath,
    options: &PairingOptions,
    rng: &mut R,
) -> Result<AnchorPairing, MetaPathError> {
    mp.validate(prev)?;
    mp.validate(cur)?;
    let anchor_ids: Vec<NodeId> = prev
        .nodes()
        .iter()
        .filter(|n| n.node_type == mp.middle())
        .filter(|n| cur.node(n.id).is_some_and(|c| c.node_type == mp.middle()))
        .map(|n| n.id)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let prev_ends = endpoints_by_anchor(prev, mp.middle(), mp.edge_types[0], mp.head());
    let cur_ends = endpoints_by_anchor(cur, mp.middle(), mp.edge_types[1], mp.tail());

    let mut pairs = Vec::new();
    for &anchor in &anchor_ids {
        let (Some(ps), Some(cs)) = (prev_ends.get(&anchor), cur_ends.get(&anchor)) else { continue };
        // BTreeSet iteration already yields (prev, cur) in sorted order.
        let candidates: Vec<AnchorPair> = ps
            .iter()
            .flat_map(|&p| cs.iter().map(move |&c| (p, c)))
            .filter(|&(p, c)| options.keep_self_pairs || p != c)
            .map(|(prev_endpoint, cur_endpoint)| AnchorPair { anchor, prev_endpoint, cur_endpoint })
            .collect();
        match options.pair_cap {
            Some(cap) if candidates.len() > cap => {
                let mut picked = rand::seq::index::sample(rng, candidates.len(), cap).into_vec();
                picked.sort_unstable();
                pairs.extend(picked.into_iter().map(|i| candidates[i]));
            }
            _ => pairs.extend(candidates),
        }
    }
    Ok(AnchorPairing { anchor_ids, pairs })
}

/// Row positions of each pair's endpoints in the previous and current
/// embedding matrices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PairRows {
    pub prev: Vec<usize>,
    pub cur: Vec<usize>,
}

pub fn pair_rows(
    pairing: &AnchorPairing,
    prev_index: &TypedNodeIndex,
    cur_index: &TypedNodeIndex,
) -> Result<PairRows, MetaPathError> {
    let mut rows = PairRows { prev: Vec::with_capacity(pairing.len()), cur: Vec::with_capacity(pairing.len()) };
    for pair in &pairing.pairs {
        let p = prev_index
            .row_of(pair.prev_endpoint)
            .ok_or(MetaPathError::MissingRow { id: pair.prev_endpoint, side: "previous" })?;
        let c = cur_index
            .row_of(pair.cur_endpoint)
            .ok_or(MetaPathError::MissingRow { id: pair.cur_endpoint, side: "current" })?;
        rows.prev.push(p);
        rows.cur.push(c);
    }
    Ok(rows)
}

/// Gathers the aligned `(previous, current)` endpoint embeddings, one row
/// per pair in pairing order.
pub fn sample_pair_matrices(
    z_prev: &DenseMatrix,
    prev_index: &TypedNodeIndex,
    x_cur: &DenseMatrix,
    cur_index: &TypedNodeIndex,
    pairing: &AnchorPairing,
) -> Result<(DenseMatrix, DenseMatrix), MetaPathError> {
    if z_prev.rows() != prev_index.len() {
        return Err(MetaPathError::RowCountMismatch {
            rows: z_prev.rows(),
            expected: prev_index.len(),
            side: "previous",
        });
    }
    if x_cur.rows() != cur_index.len() {
        return Err(MetaPathError::RowCountMismatch {
            rows: x_cur.rows(),
            expected: cur_index.len(),
            side: "current",
        });
    }
    let rows = pair_rows(pairing, prev_index, cur_index)?;
    Ok((z_prev.select_rows(&rows.prev), x_cur.select_rows(&rows.cur)))
}
