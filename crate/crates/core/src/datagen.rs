//! Temporal heterogeneous stochastic block model.
//!
//! Every node carries a latent community; only nodes of the labeled type
//! expose it as a label. Edge types connect distinct node-type pairs, taken
//! in lexicographic order `(0,1), (0,2), …, (1,2), …`, so with three node
//! types and three edge types the schema mirrors an author/paper/venue
//! graph. Between steps a fraction of each type's nodes is replaced by
//! fresh ids and a fraction of the survivors migrates to another community;
//! edges and feature noise are redrawn at every step.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{EdgeRecord, EdgeType, GraphError, HeteroSnapshot, NodeId, NodeRecord, NodeType, TemporalSeries};
use crate::metapath::MetaPath;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DatagenError {
    #[error("invalid generator config field `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub node_type_count: u32,
    pub edge_type_count: u32,
    pub community_count: usize,
    /// Nodes of each type present at every step.
    pub nodes_per_type: Vec<usize>,
    pub time_steps: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub churn_rate: f64,
    pub migration_rate: f64,
    pub feature_dim: usize,
    pub feature_noise: f64,
    pub labeled_type: NodeType,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            node_type_count: 3,
            edge_type_count: 3,
            community_count: 3,
            nodes_per_type: vec![300, 150, 30],
            time_steps: 3,
            p_in: 0.2,
            p_out: 0.01,
            churn_rate: 0.1,
            migration_rate: 0.05,
            feature_dim: 16,
            feature_noise: 1.0,
            labeled_type: 0,
            seed: 7,
        }
    }
}

fn invalid(field: &'static str, reason: impl Into<String>) -> DatagenError {
    DatagenError::InvalidConfig { field, reason: reason.into() }
}

/// Node-type pair joined by each edge type.
pub fn relation_schema(node_type_count: u32, edge_type_count: u32) -> Vec<(NodeType, NodeType)> {
    let mut pairs = Vec::new();
    for a in 0..node_type_count {
        for b in a + 1..node_type_count {
            pairs.push((a, b));
        }
    }
    pairs.truncate(edge_type_count as usize);
    pairs
}

/// Symmetric length-3 meta-paths `L -e-> X -e-> L` for every edge type `e`
/// touching the labeled type `L`.
pub fn default_meta_paths(cfg: &GenConfig) -> Vec<MetaPath> {
    relation_schema(cfg.node_type_count, cfg.edge_type_count)
        .into_iter()
        .enumerate()
        .filter_map(|(e, (a, b))| {
            let e = e as EdgeType;
            if a == cfg.labeled_type {
                Some(MetaPath::symmetric(a, e, b))
            } else if b == cfg.labeled_type {
                Some(MetaPath::symmetric(b, e, a))
            } else {
                None
            }
        })
        .collect()
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), DatagenError> {
        let (m, n) = (self.node_type_count, self.edge_type_count);
        if m < 2 {
            return Err(invalid("node_type_count", "need at least 2 node types"));
        }
        if m + n <= 2 {
            return Err(invalid("edge_type_count", "node + edge type count must exceed 2"));
        }
        if n == 0 || n > m * (m - 1) / 2 {
            return Err(invalid("edge_type_count", format!("must be in 1..={} for {m} node types", m * (m - 1) / 2)));
        }
        if self.community_count == 0 {
            return Err(invalid("community_count", "must be positive"));
        }
        if self.nodes_per_type.len() != m as usize {
            return Err(invalid(
                "nodes_per_type",
                format!("expected {m} entries, got {}", self.nodes_per_type.len()),
            ));
        }
        if self.nodes_per_type.contains(&0) {
            return Err(invalid("nodes_per_type", "every type needs at least one node"));
        }
        if self.time_steps == 0 {
            return Err(invalid("time_steps", "must be positive"));
        }
        for (field, p) in [("p_in", self.p_in), ("p_out", self.p_out)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(invalid(field, format!("{p} is not a probability")));
            }
        }
        if self.p_in <= self.p_out {
            return Err(invalid("p_in", format!("must exceed p_out ({} <= {})", self.p_in, self.p_out)));
        }
        for (field, r) in [("churn_rate", self.churn_rate), ("migration_rate", self.migration_rate)] {
            if !(0.0..1.0).contains(&r) {
                return Err(invalid(field, format!("{r} not in [0, 1)")));
            }
        }
        if self.feature_dim == 0 {
            return Err(invalid("feature_dim", "must be positive"));
        }
        if !(self.feature_noise >= 0.0 && self.feature_noise.is_finite()) {
            return Err(invalid("feature_noise", "must be finite and nonnegative"));
        }
        if self.labeled_type >= m {
            return Err(invalid("labeled_type", format!("{} is not a node type", self.labeled_type)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct LatentNode {
    id: NodeId,
    community: usize,
}

fn fresh_community<R: Rng>(rng: &mut R, c: usize) -> usize {
    rng.random_range(0..c)
}

pub fn generate_series(cfg: &GenConfig) -> Result<TemporalSeries, DatagenError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let c = cfg.community_count;
    let means: Vec<Vec<f64>> = (0..c)
        .map(|_| (0..cfg.feature_dim).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    let schema = relation_schema(cfg.node_type_count, cfg.edge_type_count);

    let mut next_id: NodeId = 0;
    // Balanced initial assignment, shuffled.
    let mut population: Vec<Vec<LatentNode>> = cfg
        .nodes_per_type
        .iter()
        .map(|&count| {
            let mut comms: Vec<usize> = (0..count).map(|i| i % c).collect();
            comms.shuffle(&mut rng);
            comms
                .into_iter()
                .map(|community| {
                    let node = LatentNode { id: next_id, community };
                    next_id += 1;
                    node
                })
                .collect()
        })
        .collect();

    let mut snapshots = Vec::with_capacity(cfg.time_steps);
    for step in 0..cfg.time_steps {
        if step > 0 {
            for nodes in population.iter_mut() {
                let count = nodes.len();
                let replaced = (cfg.churn_rate * count as f64).round() as usize;
                let replaced = replaced.min(count);
                let mut slots = rand::seq::index::sample(&mut rng, count, replaced).into_vec();
                slots.sort_unstable();
                for i in slots {
                    nodes[i] = LatentNode { id: next_id, community: fresh_community(&mut rng, c) };
                    next_id += 1;
                }
                // fresh ids are the largest, so survivors come first after sorting
                nodes.sort_by_key(|n| n.id);
                let survivors = count - replaced;
                let migrating = (cfg.migration_rate * survivors as f64).round() as usize;
                if c > 1 {
                    for i in rand::seq::index::sample(&mut rng, survivors, migrating.min(survivors)).into_vec() {
                        let shift = rng.random_range(1..c);
                        nodes[i].community = (nodes[i].community + shift) % c;
                    }
                }
            }
        }
        snapshots.push(draw_snapshot(cfg, &schema, &means, &population, step as i64 + 1, &mut rng)?);
    }
    Ok(TemporalSeries::new(snapshots)?)
}

fn draw_snapshot(
    cfg: &GenConfig,
    schema: &[(NodeType, NodeType)],
    means: &[Vec<f64>],
    population: &[Vec<LatentNode>],
    time_index: i64,
    rng: &mut ChaCha8Rng,
) -> Result<HeteroSnapshot, DatagenError> {
    let mut nodes = Vec::new();
    for (t, members) in population.iter().enumerate() {
        for n in members {
            let features = means[n.community]
                .iter()
                .map(|&mu| {
                    let z: f64 = StandardNormal.sample(rng);
                    mu + cfg.feature_noise * z
                })
                .collect();
            let label = (t as NodeType == cfg.labeled_type).then_some(n.community);
            nodes.push(NodeRecord { id: n.id, node_type: t as NodeType, features, label });
        }
    }
    let mut edges = Vec::new();
    for (e, &(a, b)) in schema.iter().enumerate() {
        for u in &population[a as usize] {
            for v in &population[b as usize] {
                let p = if u.community == v.community { cfg.p_in } else { cfg.p_out };
                if rng.random_bool(p) {
                    edges.push(EdgeRecord::new(u.id, v.id, e as EdgeType));
                }
            }
        }
    }
    Ok(HeteroSnapshot::new(time_index, nodes, edges, cfg.node_type_count, cfg.edge_type_count)?)
}
