#![allow(dead_code)]

use htgcn::datagen::{generate_series, GenConfig};
use htgcn::graph::{HeteroSnapshot, TemporalSeries};
use htgcn::matrix::DenseMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn seed7() -> TemporalSeries {
    generate_series(&GenConfig::default()).unwrap()
}

pub fn small_series(seed: u64) -> TemporalSeries {
    let cfg = GenConfig { nodes_per_type: vec![30, 15, 6], feature_dim: 5, seed, ..GenConfig::default() };
    generate_series(&cfg).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> DenseMatrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    DenseMatrix::from_vec(rows, cols, data).unwrap()
}

/// Symmetric 0/1 matrix with zero diagonal.
pub fn random_adjacency(n: usize, density: f64, rng: &mut impl Rng) -> DenseMatrix {
    let mut a = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(density) {
                a.set(i, j, 1.0);
                a.set(j, i, 1.0);
            }
        }
    }
    a
}

pub fn node_type_of(s: &HeteroSnapshot, id: u64) -> u32 {
    s.node(id).unwrap().node_type
}

/// Every `(a, b)` ordering of each edge of `edge_type`.
pub fn directed_edges(s: &HeteroSnapshot, edge_type: u32) -> Vec<(u64, u64)> {
    s.edges()
        .iter()
        .filter(|e| e.edge_type == edge_type)
        .flat_map(|e| [(e.src, e.dst), (e.dst, e.src)])
        .collect()
}

pub fn assert_close(a: &DenseMatrix, b: &DenseMatrix, tol: f64) {
    assert_eq!(a.shape(), b.shape());
    let diff = a.max_abs_diff(b);
    assert!(diff <= tol, "max abs diff {diff:e} > {tol:e}");
}

pub mod oracles;

/// Random labels over `k` classes and probabilities with no exact ties.
pub fn random_labeling(n: usize, k: usize, r: &mut impl Rng) -> Vec<usize> {
    (0..n).map(|_| r.random_range(0..k)).collect()
}

pub fn random_probs(n: usize, c: usize, r: &mut impl Rng) -> DenseMatrix {
    let raw = random_matrix(n, c, r).map(|v| (3.0 * v).exp());
    let mut out = raw.clone();
    for i in 0..n {
        let s: f64 = raw.row(i).iter().sum();
        out.row_mut(i).iter_mut().for_each(|v| *v /= s);
    }
    out
}
