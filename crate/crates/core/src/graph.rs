//! Typed heterogeneous snapshots, adjacency block assembly and the
//! symmetric renormalization fed to the graph convolution.
//!
//! Same-type adjacency for `(node type i, edge type j)` links two nodes of
//! type `i` when an edge of type `j` joins them directly, or when both hops
//! of a length-2 path through a node of a different type carry edge type
//! `j`. Blocks are binary; [`collapse_adjacency`] sums them over edge types
//! so multi-typed connections count once per type.

use std::collections::{BTreeSet, HashMap};

use thiserror::Error;

use crate::matrix::DenseMatrix;

pub type NodeId = u64;
pub type NodeType = u32;
pub type EdgeType = u32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("unknown node type tag {0}")]
    UnknownNodeType(NodeType),
    #[error("unknown edge type tag {0}")]
    UnknownEdgeType(EdgeType),
    #[error("snapshot has no nodes of type {0}")]
    NoNodesOfType(NodeType),
    #[error("graph is not heterogeneous: {node_types} node types + {edge_types} edge types <= 2")]
    NotHeterogeneous { node_types: u32, edge_types: u32 },
    #[error("time index must be >= 1, got {0}")]
    BadTimeIndex(i64),
    #[error("duplicate node id {0}")]
    DuplicateNodeId(NodeId),
    #[error("node {id} has {got} features, expected {expected}")]
    FeatureLength { id: NodeId, expected: usize, got: usize },
    #[error("node {id} has non-finite feature value")]
    NonFiniteFeature { id: NodeId },
    #[error("self-loop on node {0}")]
    SelfLoop(NodeId),
    #[error("edge ({src}, {dst}) references missing node {missing}")]
    MissingEndpoint { src: NodeId, dst: NodeId, missing: NodeId },
    #[error("node {id} has label {label} outside [0, {communities})")]
    LabelOutOfRange { id: NodeId, label: usize, communities: usize },
    #[error("snapshot time indices must strictly increase: {prev} then {next}")]
    TimeNotIncreasing { prev: i64, next: i64 },
    #[error("feature dimension changed from {expected} to {got} at t={time}")]
    FeatureDimChanged { time: i64, expected: usize, got: usize },
    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric at ({row}, {col})")]
    Asymmetric { row: usize, col: usize },
    #[error("matrix has negative entry at ({row}, {col})")]
    Negative { row: usize, col: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeRecord {
    pub id: NodeId,
    pub node_type: NodeType,
    pub features: Vec<f64>,
    pub label: Option<usize>,
}

/// Undirected typed edge, stored with `src < dst`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EdgeRecord {
    pub src: NodeId,
    pub dst: NodeId,
    pub edge_type: EdgeType,
}

impl EdgeRecord {
    /// Canonicalizes endpoint order. Self-loops are rejected when the edge
    /// enters a snapshot.
    pub fn new(a: NodeId, b: NodeId, edge_type: EdgeType) -> Self {
        let (src, dst) = if a <= b { (a, b) } else { (b, a) };
        Self { src, dst, edge_type }
    }
}

/// Row order of the nodes of one type: position in the snapshot's node list.
#[derive(Debug, Clone, PartialEq)]
pub struct TypedNodeIndex {
    pub node_type: NodeType,
    ids: Vec<NodeId>,
    rows: HashMap<NodeId, usize>,
}

impl TypedNodeIndex {
    pub fn ids(&self) -> &[NodeId] {
        &self.ids
    }

    pub fn row_of(&self, id: NodeId) -> Option<usize> {
        self.rows.get(&id).copied()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// One time step of the heterogeneous graph. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct HeteroSnapshot {
    time_index: i64,
    nodes: Vec<NodeRecord>,
    edges: Vec<EdgeRecord>,
    node_type_count: u32,
    edge_type_count: u32,
    position: HashMap<NodeId, usize>,
}

impl HeteroSnapshot {
    pub fn new(
        time_index: i64,
        nodes: Vec<NodeRecord>,
        edges: Vec<EdgeRecord>,
        node_type_count: u32,
        edge_type_count: u32,
    ) -> Result<Self, GraphError> {
        if node_type_count + edge_type_count <= 2 {
            return Err(GraphError::NotHeterogeneous {
                node_types: node_type_count,
                edge_types: edge_type_count,
            });
        }
        if time_index < 1 {
            return Err(GraphError::BadTimeIndex(time_index));
        }
        let feature_dim = nodes.first().map_or(0, |n| n.features.len());
        let mut position = HashMap::with_capacity(nodes.len());
        for (i, node) in nodes.iter().enumerate() {
            if node.node_type >= node_type_count {
                return Err(GraphError::UnknownNodeType(node.node_type));
            }
            if position.insert(node.id, i).is_some() {
                return Err(GraphError::DuplicateNodeId(node.id));
            }
            if node.features.len() != feature_dim {
                return Err(GraphError::FeatureLength {
                    id: node.id,
                    expected: feature_dim,
                    got: node.features.len(),
                });
            }
            if node.features.iter().any(|v| !v.is_finite()) {
                return Err(GraphError::NonFiniteFeature { id: node.id });
            }
        }
        let mut canonical = Vec::with_capacity(edges.len());
        for e in edges {
            if e.edge_type >= edge_type_count {
                return Err(GraphError::UnknownEdgeType(e.edge_type));
            }
            if e.src == e.dst {
                return Err(GraphError::SelfLoop(e.src));
            }
            for end in [e.src, e.dst] {
                if !position.contains_key(&end) {
                    return Err(GraphError::MissingEndpoint { src: e.src, dst: e.dst, missing: end });
                }
            }
            canonical.push(EdgeRecord::new(e.src, e.dst, e.edge_type));
        }
        Ok(Self { time_index, nodes, edges: canonical, node_type_count, edge_type_count, position })
    }

    pub fn time_index(&self) -> i64 {
        self.time_index
    }

    pub fn nodes(&self) -> &[NodeRecord] {
        &self.nodes
    }

    pub fn edges(&self) -> &[EdgeRecord] {
        &self.edges
    }

    pub fn node_type_count(&self) -> u32 {
        self.node_type_count
    }

    pub fn edge_type_count(&self) -> u32 {
        self.edge_type_count
    }

    pub fn feature_dim(&self) -> usize {
        self.nodes.first().map_or(0, |n| n.features.len())
    }

    pub fn node(&self, id: NodeId) -> Option<&NodeRecord> {
        self.position.get(&id).map(|&i| &self.nodes[i])
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.position.contains_key(&id)
    }

    pub fn check_node_type(&self, t: NodeType) -> Result<(), GraphError> {
        if t < self.node_type_count {
            Ok(())
        } else {
            Err(GraphError::UnknownNodeType(t))
        }
    }

    pub fn check_edge_type(&self, t: EdgeType) -> Result<(), GraphError> {
        if t < self.edge_type_count {
            Ok(())
        } else {
            Err(GraphError::UnknownEdgeType(t))
        }
    }

    pub fn type_index(&self, node_type: NodeType) -> Result<TypedNodeIndex, GraphError> {
        self.check_node_type(node_type)?;
        let ids: Vec<NodeId> =
            self.nodes.iter().filter(|n| n.node_type == node_type).map(|n| n.id).collect();
        let rows = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        Ok(TypedNodeIndex { node_type, ids, rows })
    }

    /// Features of the nodes of one type, rows in [`TypedNodeIndex`] order.
    pub fn feature_matrix(&self, node_type: NodeType) -> Result<DenseMatrix, GraphError> {
        self.check_node_type(node_type)?;
        let d = self.feature_dim();
        let mut data = Vec::new();
        let mut rows = 0;
        for n in self.nodes.iter().filter(|n| n.node_type == node_type) {
            data.extend_from_slice(&n.features);
            rows += 1;
        }
        Ok(DenseMatrix::from_raw(rows, d, data))
    }

    /// Labels of the nodes of one type, in [`TypedNodeIndex`] order.
    pub fn labels(&self, node_type: NodeType) -> Result<Vec<Option<usize>>, GraphError> {
        self.check_node_type(node_type)?;
        Ok(self.nodes.iter().filter(|n| n.node_type == node_type).map(|n| n.label).collect())
    }

    /// Neighbors of `id` reached by an edge of `edge_type`, restricted to
    /// `neighbor_type`, ascending by id.
    pub fn neighbors(&self, id: NodeId, edge_type: EdgeType, neighbor_type: NodeType) -> Vec<NodeId> {
        let mut out: BTreeSet<NodeId> = BTreeSet::new();
        for e in self.edges.iter().filter(|e| e.edge_type == edge_type) {
            let other = if e.src == id {
                e.dst
            } else if e.dst == id {
                e.src
            } else {
                continue;
            };
            if self.node(other).is_some_and(|n| n.node_type == neighbor_type) {
                out.insert(other);
            }
        }
        out.into_iter().collect()
    }

    pub fn validate_labels(&self, communities: usize) -> Result<(), GraphError> {
        for n in &self.nodes {
            if let Some(label) = n.label {
                if label >= communities {
                    return Err(GraphError::LabelOutOfRange { id: n.id, label, communities });
                }
            }
        }
        Ok(())
    }
}

/// Ordered snapshots with strictly increasing time and a constant feature
/// dimension. Node ids keep their identity across snapshots.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TemporalSeries {
    snapshots: Vec<HeteroSnapshot>,
}

impl TemporalSeries {
    pub fn new(snapshots: Vec<HeteroSnapshot>) -> Result<Self, GraphError> {
        for pair in snapshots.windows(2) {
            if pair[1].time_index <= pair[0].time_index {
                return Err(GraphError::TimeNotIncreasing {
                    prev: pair[0].time_index,
                    next: pair[1].time_index,
                });
            }
        }
        // Empty snapshots carry no dimension information.
        let mut dim: Option<usize> = None;
        for s in snapshots.iter().filter(|s| !s.nodes.is_empty()) {
            match dim {
                None => dim = Some(s.feature_dim()),
                Some(d) if d != s.feature_dim() => {
                    return Err(GraphError::FeatureDimChanged {
                        time: s.time_index,
                        expected: d,
                        got: s.feature_dim(),
                    })
                }
                Some(_) => {}
            }
        }
        Ok(Self { snapshots })
    }

    pub fn snapshots(&self) -> &[HeteroSnapshot] {
        &self.snapshots
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    /// The last `length` snapshots.
    pub fn window(&self, length: usize) -> &[HeteroSnapshot] {
        &self.snapshots[self.snapshots.len().saturating_sub(length)..]
    }

    pub fn validate_labels(&self, communities: usize) -> Result<(), GraphError> {
        self.snapshots.iter().try_for_each(|s| s.validate_labels(communities))
    }
}

/// Binary same-type adjacency for one `(node_type, edge_type)` block.
pub fn block_adjacency(
    snapshot: &HeteroSnapshot,
    node_type: NodeType,
    edge_type: EdgeType,
) -> Result<DenseMatrix, GraphError> {
    snapshot.check_edge_type(edge_type)?;
    let index = snapshot.type_index(node_type)?;
    let n = index.len();
    let mut adj = DenseMatrix::zeros(n, n);
    // Same-type neighbors collected per intermediate node of another type.
    let mut through: HashMap<NodeId, BTreeSet<usize>> = HashMap::new();
    for e in snapshot.edges.iter().filter(|e| e.edge_type == edge_type) {
        match (index.row_of(e.src), index.row_of(e.dst)) {
            (Some(a), Some(b)) => {
                adj.set(a, b, 1.0);
                adj.set(b, a, 1.0);
            }
            (Some(a), None) => {
                through.entry(e.dst).or_default().insert(a);
            }
            (None, Some(b)) => {
                through.entry(e.src).or_default().insert(b);
            }
            (None, None) => {}
        }
    }
    for members in through.values() {
        for &a in members {
            for &b in members {
                if a != b {
                    adj.set(a, b, 1.0);
                }
            }
        }
    }
    Ok(adj)
}

/// Entrywise sum of [`block_adjacency`] over every edge type.
pub fn collapse_adjacency(snapshot: &HeteroSnapshot, target_type: NodeType) -> Result<DenseMatrix, GraphError> {
    let index = snapshot.type_index(target_type)?;
    if index.is_empty() {
        return Err(GraphError::NoNodesOfType(target_type));
    }
    let n = index.len();
    let mut total = DenseMatrix::zeros(n, n);
    for edge_type in 0..snapshot.edge_type_count {
        total.add_assign(&block_adjacency(snapshot, target_type, edge_type)?);
    }
    Ok(total)
}

/// `D^-1/2 (A + I) D^-1/2` with `D = diag(rowsum(A + I))`.
pub fn normalize_adjacency(adj: &DenseMatrix) -> Result<DenseMatrix, GraphError> {
    let (rows, cols) = adj.shape();
    if rows != cols {
        return Err(GraphError::NotSquare { rows, cols });
    }
    for i in 0..rows {
        for j in 0..cols {
            let v = adj.get(i, j);
            if v < 0.0 {
                return Err(GraphError::Negative { row: i, col: j });
            }
            if j > i && v != adj.get(j, i) {
                return Err(GraphError::Asymmetric { row: i, col: j });
            }
        }
    }
    let degree: Vec<f64> = adj.row_sums().iter().map(|d| d + 1.0).collect();
    let mut out = DenseMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            let a = adj.get(i, j) + if i == j { 1.0 } else { 0.0 };
            if a != 0.0 {
                out.set(i, j, a / (degree[i] * degree[j]).sqrt());
            }
        }
    }
    Ok(out)
}
