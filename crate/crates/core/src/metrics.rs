//! Evaluation criteria: ACC, NMI, ARI, Macro/Micro-F1 and modularity.
//!
//! ACC and both F1 scores are computed after mapping predicted community
//! indices onto ground-truth indices with the best permutation (exhaustive,
//! same limit as the training loss). With single-label predictions Micro-F1
//! therefore equals ACC.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{collapse_adjacency, GraphError, HeteroSnapshot, NodeType};
use crate::matrix::DenseMatrix;
use crate::objective::{permutations, MAX_BRUTE_FORCE_COMMUNITIES};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("label length mismatch: truth={truth}, predicted={predicted}")]
    LengthMismatch { truth: usize, predicted: usize },
    #[error("cannot score an empty labeling")]
    Empty,
    #[error("{0} label classes exceed the exhaustive alignment limit of 8")]
    TooManyClasses(usize),
    #[error("modularity undefined on a graph without edges")]
    NoEdges,
    #[error("adjacency is {rows}x{cols} but {labels} labels were given")]
    AdjacencyMismatch { rows: usize, cols: usize, labels: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

fn check_lengths(truth: &[usize], predicted: &[usize]) -> Result<(), MetricError> {
    if truth.len() != predicted.len() {
        return Err(MetricError::LengthMismatch { truth: truth.len(), predicted: predicted.len() });
    }
    if truth.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(())
}

fn class_count(truth: &[usize], predicted: &[usize]) -> usize {
    truth.iter().chain(predicted).copied().max().map_or(0, |m| m + 1)
}

/// `table[t][p]` counts nodes with true label `t` and predicted label `p`.
fn contingency(truth: &[usize], predicted: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut table = vec![vec![0usize; k]; k];
    for (&t, &p) in truth.iter().zip(predicted) {
        table[t][p] += 1;
    }
    table
}

/// `map[p]` is the true label that predicted label `p` is relabeled to,
/// chosen to maximize agreement with `truth`. Ties resolve to the
/// lexicographically first permutation.
pub fn alignment(truth: &[usize], predicted: &[usize]) -> Result<Vec<usize>, MetricError> {
    check_lengths(truth, predicted)?;
    let k = class_count(truth, predicted);
    if k > MAX_BRUTE_FORCE_COMMUNITIES {
        return Err(MetricError::TooManyClasses(k));
    }
    let table = contingency(truth, predicted, k);
    let mut best = (0usize, (0..k).collect::<Vec<_>>());
    let mut first = true;
    for perm in permutations(k) {
        let hits: usize = (0..k).map(|p| table[perm[p]][p]).sum();
        if first || hits > best.0 {
            best = (hits, perm);
            first = false;
        }
    }
    Ok(best.1)
}

/// Relabels predictions with [`alignment`].
pub fn align_predictions(truth: &[usize], predicted: &[usize]) -> Result<Vec<usize>, MetricError> {
    let map = alignment(truth, predicted)?;
    Ok(predicted.iter().map(|&p| map[p]).collect())
}

/// Fraction correct after best-permutation alignment.
pub fn accuracy(truth: &[usize], predicted: &[usize]) -> Result<f64, MetricError> {
    let aligned = align_predictions(truth, predicted)?;
    Ok(raw_accuracy(truth, &aligned))
}

/// Fraction correct without relabeling.
pub fn raw_accuracy(truth: &[usize], predicted: &[usize]) -> f64 {
    let hits = truth.iter().zip(predicted).filter(|(a, b)| a == b).count();
    hits as f64 / truth.len().max(1) as f64
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts.filter(|&c| c > 0).map(|c| c as f64 / n).map(|p| -p * p.ln()).sum()
}

/// Normalized mutual information with arithmetic-mean normalization.
/// Returns 0 when both partitions have zero entropy.
pub fn nmi(truth: &[usize], predicted: &[usize]) -> Result<f64, MetricError> {
    check_lengths(truth, predicted)?;
    let k = class_count(truth, predicted);
    let n = truth.len() as f64;
    let table = contingency(truth, predicted, k);
    let rows: Vec<usize> = table.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<usize> = (0..k).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    let mut mi = 0.0;
    for (i, row) in table.iter().enumerate() {
        for (j, &nij) in row.iter().enumerate() {
            if nij > 0 {
                let nij = nij as f64;
                mi += nij / n * (n * nij / (rows[i] as f64 * cols[j] as f64)).ln();
            }
        }
    }
    let denom = 0.5 * (entropy(rows.into_iter(), n) + entropy(cols.into_iter(), n));
    if denom <= 0.0 {
        return Ok(0.0);
    }
    Ok((mi / denom).clamp(0.0, 1.0))
}

fn choose2(x: usize) -> f64 {
    let x = x as f64;
    x * (x - 1.0) / 2.0
}

/// Adjusted Rand index. When the expected and maximum indices coincide
/// (both partitions trivial) the partitions are identical and 1 is returned.
pub fn ari(truth: &[usize], predicted: &[usize]) -> Result<f64, MetricError> {
    check_lengths(truth, predicted)?;
    let k = class_count(truth, predicted);
    let table = contingency(truth, predicted, k);
    let index: f64 = table.iter().flatten().map(|&c| choose2(c)).sum();
    let a: f64 = table.iter().map(|r| choose2(r.iter().sum())).sum();
    let b: f64 = (0..k).map(|j| choose2(table.iter().map(|r| r[j]).sum())).sum();
    let total = choose2(truth.len());
    let expected = if total > 0.0 { a * b / total } else { 0.0 };
    let max_index = 0.5 * (a + b);
    if max_index == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max_index - expected))
}

fn per_class_counts(truth: &[usize], aligned: &[usize]) -> Vec<(usize, usize, usize, usize)> {
    // (class, tp, fp, fn) for every class present in either labeling
    let classes: BTreeSet<usize> = truth.iter().chain(aligned).copied().collect();
    classes
        .into_iter()
        .map(|c| {
            let mut tp = 0;
            let mut fp = 0;
            let mut fn_ = 0;
            for (&t, &p) in truth.iter().zip(aligned) {
                match (t == c, p == c) {
                    (true, true) => tp += 1,
                    (false, true) => fp += 1,
                    (true, false) => fn_ += 1,
                    (false, false) => {}
                }
            }
            (c, tp, fp, fn_)
        })
        .collect()
}

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// Unweighted mean of per-class F1 over classes present in either labeling,
/// after alignment.
pub fn macro_f1(truth: &[usize], predicted: &[usize]) -> Result<f64, MetricError> {
    let aligned = align_predictions(truth, predicted)?;
    let counts = per_class_counts(truth, &aligned);
    Ok(counts.iter().map(|&(_, tp, fp, fn_)| f1(tp, fp, fn_)).sum::<f64>() / counts.len() as f64)
}

/// F1 from pooled counts, after alignment.
pub fn micro_f1(truth: &[usize], predicted: &[usize]) -> Result<f64, MetricError> {
    let aligned = align_predictions(truth, predicted)?;
    let (tp, fp, fn_) = per_class_counts(truth, &aligned)
        .into_iter()
        .fold((0, 0, 0), |acc, (_, tp, fp, fn_)| (acc.0 + tp, acc.1 + fp, acc.2 + fn_));
    Ok(f1(tp, fp, fn_))
}

/// Newman–Girvan modularity of a labeling on a weighted undirected graph.
pub fn modularity_from_adjacency(adj: &DenseMatrix, labels: &[usize]) -> Result<f64, MetricError> {
    let (rows, cols) = adj.shape();
    if rows != cols || rows != labels.len() {
        return Err(MetricError::AdjacencyMismatch { rows, cols, labels: labels.len() });
    }
    let two_m = adj.sum();
    if two_m <= 0.0 {
        return Err(MetricError::NoEdges);
    }
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let degree = adj.row_sums();
    let mut internal = vec![0.0; k];
    let mut volume = vec![0.0; k];
    for u in 0..rows {
        volume[labels[u]] += degree[u];
        let row = adj.row(u);
        for (v, &a) in row.iter().enumerate() {
            if a != 0.0 && labels[u] == labels[v] {
                internal[labels[u]] += a;
            }
        }
    }
    Ok((0..k).map(|c| internal[c] / two_m - (volume[c] / two_m).powi(2)).sum())
}

/// Modularity on the collapsed graph of `target_type`.
pub fn modularity(snapshot: &HeteroSnapshot, target_type: NodeType, labels: &[usize]) -> Result<f64, MetricError> {
    let adj = collapse_adjacency(snapshot, target_type)?;
    modularity_from_adjacency(&adj, labels)
}

/// The six criteria as fractions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub acc: f64,
    pub nmi: f64,
    pub modularity: f64,
    pub ari: f64,
    pub macro_f1: f64,
    pub micro_f1: f64,
}

/// JSON form: percentages rounded to two decimals.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PercentReport {
    #[serde(rename = "ACC")]
    pub acc: f64,
    #[serde(rename = "NMI")]
    pub nmi: f64,
    #[serde(rename = "Modularity")]
    pub modularity: f64,
    #[serde(rename = "ARI")]
    pub ari: f64,
    #[serde(rename = "Macro-F1")]
    pub macro_f1: f64,
    #[serde(rename = "Micro-F1")]
    pub micro_f1: f64,
}

pub const CRITERIA: [&str; 6] = ["ACC", "NMI", "Modularity", "ARI", "Macro-F1", "Micro-F1"];

fn percent(x: f64) -> f64 {
    (x * 10_000.0).round() / 100.0
}

impl MetricReport {
    /// Label-agreement criteria on `truth`/`predicted`; modularity is
    /// supplied separately because it is scored on a graph.
    pub fn compute(truth: &[usize], predicted: &[usize], modularity: f64) -> Result<Self, MetricError> {
        Ok(Self {
            acc: accuracy(truth, predicted)?,
            nmi: nmi(truth, predicted)?,
            modularity,
            ari: ari(truth, predicted)?,
            macro_f1: macro_f1(truth, predicted)?,
            micro_f1: micro_f1(truth, predicted)?,
        })
    }

    pub fn as_percent(&self) -> PercentReport {
        PercentReport {
            acc: percent(self.acc),
            nmi: percent(self.nmi),
            modularity: percent(self.modularity),
            ari: percent(self.ari),
            macro_f1: percent(self.macro_f1),
            micro_f1: percent(self.micro_f1),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.as_percent()).expect("plain struct serializes")
    }
}
