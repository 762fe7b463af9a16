mod common;

use common::*;
use htgcn::autodiff::Tape;
use htgcn::datagen::{generate_series, GenConfig};
use htgcn::graph::{normalize_adjacency, EdgeRecord, HeteroSnapshot, NodeRecord};
use htgcn::matrix::DenseMatrix;
use htgcn::metapath::{MetaPath, PairingOptions};
use htgcn::model::{
    apply_attention, compress_and_inject, hgcn_forward, htgcn_forward, interaction_tensor, node_attention,
    rescac_step, HtgcnParams, ModelConfig, ModelError, PreparedWindow,
};
use proptest::prelude::*;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn naive_matmul(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(a.rows(), b.cols());
    for i in 0..a.rows() {
        for j in 0..b.cols() {
            let mut s = 0.0;
            for k in 0..a.cols() {
                s += a.get(i, k) * b.get(k, j);
            }
            out.set(i, j, s);
        }
    }
    out
}

fn manual_hgcn(adj: &DenseMatrix, x: &DenseMatrix, w0: &DenseMatrix, w1: &DenseMatrix) -> DenseMatrix {
    let hidden = naive_matmul(adj, &naive_matmul(x, w0)).map(|v| v.max(0.0));
    naive_matmul(adj, &naive_matmul(&hidden, w1))
}

fn manual_attention(z: &DenseMatrix, v_hat: &DenseMatrix, w_hat: &DenseMatrix) -> Vec<f64> {
    let scores: Vec<f64> = (0..z.rows())
        .map(|i| {
            (0..v_hat.rows())
                .map(|a| w_hat.get(0, a) * (0..z.cols()).map(|c| v_hat.get(a, c) * z.get(i, c)).sum::<f64>().tanh())
                .sum()
        })
        .collect();
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    exp.iter().map(|e| e / total).collect()
}

/// Loop-level evaluation of the whole forward pass.
fn manual_forward(window: &PreparedWindow, params: &HtgcnParams, cfg: &ModelConfig) -> DenseMatrix {
    let (w0, w1) = (&params.hgcn.w0.data, &params.hgcn.w1.data);
    let xs: Vec<DenseMatrix> = window.snapshots.iter().map(|s| manual_hgcn(&s.norm_adj, &s.features, w0, w1)).collect();
    let last = xs.last().unwrap().clone();
    if !cfg.use_rescac {
        return last;
    }
    let d = cfg.output_dim;
    let mut carried = xs[0].clone();
    for (k, alignments) in window.transitions.iter().enumerate() {
        let cur = &xs[k + 1];
        let mut z = cur.clone();
        for (rows, wt) in alignments.iter().zip(&params.rescac.compress) {
            for p in 0..rows.prev.len() {
                for c in 0..d {
                    let mut s = 0.0;
                    for i in 0..d {
                        for j in 0..d {
                            s += carried.get(rows.prev[p], i) * cur.get(rows.cur[p], j) * wt.data.get(i * d + j, c);
                        }
                    }
                    z.add_at(rows.cur[p], c, sigmoid(s));
                }
            }
        }
        let w = manual_attention(&z, &params.rescac.v_hat.data, &params.rescac.w_hat.data);
        let n = z.rows() as f64;
        for (i, wi) in w.iter().enumerate() {
            let f = if cfg.attention_rescale { wi * n } else { *wi };
            z.row_mut(i).iter_mut().for_each(|v| *v *= f);
        }
        carried = z;
    }
    carried.zip_map(&last, |a, b| a + b)
}

fn setup(seed: u64, window_len: usize, rescale: bool) -> (PreparedWindow, HtgcnParams, ModelConfig) {
    let cfg_gen = GenConfig { nodes_per_type: vec![30, 15, 6], time_steps: window_len, feature_dim: 5, seed, ..GenConfig::default() };
    let series = generate_series(&cfg_gen).unwrap();
    let mps = vec![MetaPath::symmetric(0, 0, 1), MetaPath::symmetric(0, 1, 2)];
    let window = PreparedWindow::build(series.snapshots(), 0, &mps, &PairingOptions::default(), &mut rng(seed)).unwrap();
    let cfg = ModelConfig {
        feature_dim: 5,
        hidden_dim: 4,
        output_dim: 3,
        attention_dim: 3,
        meta_paths: mps.iter().map(|m| m.to_string()).collect(),
        attention_rescale: rescale,
        use_rescac: true,
    };
    let params = HtgcnParams::init(&cfg, &mut rng(seed + 1000));
    (window, params, cfg)
}

fn forward(window: &PreparedWindow, params: &HtgcnParams, cfg: &ModelConfig) -> DenseMatrix {
    let mut t = Tape::new();
    let pass = htgcn_forward(&mut t, window, params, cfg).unwrap();
    t.data(pass.output).clone()
}

#[test]
fn full_forward_matches_unrolled_composition() {
    for (seed, len, rescale) in [(1, 3, false), (2, 3, true), (3, 5, false)] {
        let (window, params, cfg) = setup(seed, len, rescale);
        assert!(window.transitions.iter().flatten().any(|r| !r.prev.is_empty()));
        assert_close(&forward(&window, &params, &cfg), &manual_forward(&window, &params, &cfg), 1e-12);
        let ablation = ModelConfig { use_rescac: false, ..cfg.clone() };
        assert_close(&forward(&window, &params, &ablation), &manual_forward(&window, &params, &ablation), 1e-12);
    }
}

#[test]
fn five_node_convolution_by_hand() {
    // path 0-1-2-3 plus isolated node 4
    let mut a = DenseMatrix::zeros(5, 5);
    for (i, j) in [(0, 1), (1, 2), (2, 3)] {
        a.set(i, j, 1.0);
        a.set(j, i, 1.0);
    }
    let adj = normalize_adjacency(&a).unwrap();
    let x = DenseMatrix::from_rows(&[
        vec![1.0, 0.0],
        vec![0.0, 1.0],
        vec![1.0, 1.0],
        vec![-1.0, 2.0],
        vec![0.5, -0.5],
    ]);
    let w0 = DenseMatrix::from_rows(&[vec![1.0, -1.0, 0.5], vec![0.5, 1.0, -2.0]]);
    let w1 = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, -1.0]]);
    let mut t = Tape::new();
    let (va, vx, v0, v1) = (t.constant(adj.clone()), t.constant(x.clone()), t.variable(w0.clone()), t.variable(w1.clone()));
    let out = hgcn_forward(&mut t, va, vx, v0, v1).unwrap();
    assert_close(t.data(out), &manual_hgcn(&adj, &x, &w0, &w1), 1e-12);
    // the isolated node only sees itself: Â[4,4] = 1
    let h4: Vec<f64> = (0..3).map(|k| (0.5 * w0.get(0, k) - 0.5 * w0.get(1, k)).max(0.0)).collect();
    for c in 0..2 {
        let expected: f64 = (0..3).map(|k| h4[k] * w1.get(k, c)).sum();
        assert!((t.data(out).get(4, c) - expected).abs() < 1e-12);
    }
}

#[test]
fn interaction_compression_and_attention_oracles() {
    let mut r = rng(8);
    let (zp, xc) = (random_matrix(3, 2, &mut r), random_matrix(3, 2, &mut r));
    let mut t = Tape::new();
    let (a, b) = (t.constant(zp.clone()), t.constant(xc.clone()));
    let h = interaction_tensor(&mut t, a, b).unwrap();
    for p in 0..3 {
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(t.data(h).get(p, i * 2 + j), zp.get(p, i) * xc.get(p, j));
            }
        }
    }

    let wt = random_matrix(4, 2, &mut r);
    let z = random_matrix(4, 2, &mut r);
    let targets = [3, 0, 3];
    let (vw, vz) = (t.variable(wt.clone()), t.variable(z.clone()));
    let out = compress_and_inject(&mut t, h, &targets, vw, vz).unwrap();
    let mut expected = z.clone();
    for (p, &row) in targets.iter().enumerate() {
        for c in 0..2 {
            let s: f64 = (0..4).map(|k| t.data(h).get(p, k) * wt.get(k, c)).sum();
            expected.add_at(row, c, sigmoid(s));
        }
    }
    assert_close(t.data(out), &expected, 1e-12);

    let zero_w = t.constant(DenseMatrix::zeros(4, 2));
    let one = interaction_tensor(&mut t, a, b).unwrap();
    let single = t.gather_rows(one, &[0]).unwrap();
    let base = t.constant(DenseMatrix::zeros(2, 2));
    let bumped = compress_and_inject(&mut t, single, &[0], zero_w, base).unwrap();
    assert_eq!(t.data(bumped), &DenseMatrix::from_rows(&[vec![0.5, 0.5], vec![0.0, 0.0]]));
    assert!(matches!(compress_and_inject(&mut t, single, &[0, 1], zero_w, base), Err(ModelError::Mismatch { .. })));

    let z4 = random_matrix(4, 3, &mut r);
    let v_hat = random_matrix(2, 3, &mut r);
    let w_hat = random_matrix(1, 2, &mut r);
    let (vz, vv, vwh) = (t.constant(z4.clone()), t.constant(v_hat.clone()), t.constant(w_hat.clone()));
    let w = node_attention(&mut t, vz, vv, vwh).unwrap();
    let oracle = manual_attention(&z4, &v_hat, &w_hat);
    for (i, o) in oracle.iter().enumerate() {
        assert!((t.data(w).get(i, 0) - o).abs() < 1e-12);
    }
    let scaled = apply_attention(&mut t, vz, w, false).unwrap();
    for (i, wi) in oracle.iter().enumerate() {
        for c in 0..3 {
            assert!((t.data(scaled).get(i, c) - wi * z4.get(i, c)).abs() < 1e-12);
        }
    }
}

#[test]
fn attention_edge_cases() {
    let mut t = Tape::new();
    let z1 = t.constant(DenseMatrix::from_rows(&[vec![3.0, -1.0]]));
    let v = t.constant(DenseMatrix::filled(2, 2, 0.7));
    let w = t.constant(DenseMatrix::filled(1, 2, 1.3));
    let single = node_attention(&mut t, z1, v, w).unwrap();
    assert_eq!(t.data(single), &DenseMatrix::filled(1, 1, 1.0));

    let z5 = t.constant(random_matrix(5, 2, &mut rng(1)));
    let w0 = t.constant(DenseMatrix::zeros(1, 2));
    let uniform = node_attention(&mut t, z5, v, w0).unwrap();
    assert_close(t.data(uniform), &DenseMatrix::filled(5, 1, 0.2), 1e-15);

    let z2 = t.constant(DenseMatrix::from_rows(&[vec![2.0, 4.0], vec![6.0, 8.0]]));
    let half = t.constant(DenseMatrix::filled(2, 1, 0.5));
    let halved = apply_attention(&mut t, z2, half, false).unwrap();
    assert_eq!(t.data(halved), &DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
    let one_hot = t.constant(DenseMatrix::from_rows(&[vec![0.0], vec![1.0]]));
    let picked = apply_attention(&mut t, z2, one_hot, false).unwrap();
    assert_eq!(t.data(picked), &DenseMatrix::from_rows(&[vec![0.0, 0.0], vec![6.0, 8.0]]));
}

#[test]
fn rescac_without_pairs_is_attention_of_current() {
    let (window, params, cfg) = setup(4, 3, false);
    let mut t = Tape::new();
    let pv = params.record(&mut t);
    let prev = t.constant(random_matrix(window.snapshots[0].node_count(), 3, &mut rng(2)));
    let cur_m = random_matrix(window.snapshots[1].node_count(), 3, &mut rng(3));
    let cur = t.constant(cur_m.clone());
    let empty = vec![Default::default(); cfg.meta_paths.len()];
    let out = rescac_step(&mut t, prev, cur, &empty, &pv, false).unwrap();
    let w = manual_attention(&cur_m, &params.rescac.v_hat.data, &params.rescac.w_hat.data);
    let mut expected = cur_m.clone();
    for (i, wi) in w.iter().enumerate() {
        expected.row_mut(i).iter_mut().for_each(|v| *v *= wi);
    }
    assert_close(t.data(out), &expected, 1e-12);
}

fn isolated_snapshot(t: i64, offset: u64) -> HeteroSnapshot {
    // type-0 nodes wired only to each other and to private type-1 nodes
    let mut nodes: Vec<NodeRecord> = (0..4)
        .map(|i| NodeRecord { id: i, node_type: 0, features: vec![i as f64, 1.0 - i as f64, 0.5], label: Some(i as usize % 2) })
        .collect();
    nodes.push(NodeRecord { id: 100 + offset, node_type: 1, features: vec![0.0; 3], label: None });
    let edges = vec![EdgeRecord::new(0, 1, 0), EdgeRecord::new(2, 3, 0), EdgeRecord::new(1, 100 + offset, 1)];
    HeteroSnapshot::new(t + 1, nodes, edges, 2, 2).unwrap()
}

#[test]
fn zero_anchor_window_has_closed_form() {
    let snaps: Vec<HeteroSnapshot> = (0..3).map(|t| isolated_snapshot(t, t as u64)).collect();
    let mps = vec![MetaPath::symmetric(0, 1, 1)];
    let window = PreparedWindow::build(&snaps, 0, &mps, &PairingOptions::default(), &mut rng(0)).unwrap();
    assert!(window.transitions.iter().flatten().all(|r| r.prev.is_empty()));
    let cfg = ModelConfig {
        feature_dim: 3,
        hidden_dim: 4,
        output_dim: 2,
        attention_dim: 2,
        meta_paths: vec![mps[0].to_string()],
        attention_rescale: false,
        use_rescac: true,
    };
    let params = HtgcnParams::init(&cfg, &mut rng(5));
    let last = window.last();
    let x = manual_hgcn(&last.norm_adj, &last.features, &params.hgcn.w0.data, &params.hgcn.w1.data);
    let w = manual_attention(&x, &params.rescac.v_hat.data, &params.rescac.w_hat.data);
    let mut expected = x.clone();
    for (i, wi) in w.iter().enumerate() {
        expected.row_mut(i).iter_mut().for_each(|v| *v *= 1.0 + wi);
    }
    assert_close(&forward(&window, &params, &cfg), &expected, 1e-12);
}

#[test]
fn residual_dominance_closed_form() {
    let (window, mut params, cfg) = setup(6, 3, false);
    for p in &mut params.rescac.compress {
        p.data.fill(0.0);
    }
    params.rescac.w_hat.data.fill(0.0);
    let last = window.last();
    let x = manual_hgcn(&last.norm_adj, &last.features, &params.hgcn.w0.data, &params.hgcn.w1.data);
    let n = x.rows() as f64;
    let mut injections = vec![0.0; x.rows()];
    for rows in window.transitions.last().unwrap() {
        for &r in &rows.cur {
            injections[r] += 0.5;
        }
    }
    assert!(injections.iter().any(|&v| v > 0.0));
    let expected = DenseMatrix::from_vec(
        x.rows(),
        x.cols(),
        (0..x.rows()).flat_map(|i| (0..x.cols()).map(move |c| (i, c))).map(|(i, c)| (x.get(i, c) + injections[i]) / n + x.get(i, c)).collect(),
    )
    .unwrap();
    assert_close(&forward(&window, &params, &cfg), &expected, 1e-12);
}

#[test]
fn every_parameter_receives_gradient() {
    let (window, params, cfg) = setup(7, 3, false);
    let mut t = Tape::new();
    let pass = htgcn_forward(&mut t, &window, &params, &cfg).unwrap();
    let (rows, cols) = t.shape(pass.output);
    let c = t.constant(random_matrix(rows, cols, &mut rng(9)));
    let weighted = t.elementwise_mul(pass.output, c).unwrap();
    let loss = t.scalar_sum(weighted);
    t.backward(loss).unwrap();
    for (p, v) in params.parameters().iter().zip(pass.params.in_order()) {
        let g = t.grad(v);
        assert!(g.as_slice().iter().any(|&x| x != 0.0), "{} has no gradient", p.name);
    }
}

#[test]
fn forward_is_deterministic_and_tracks_final_node_count() {
    let (w1, p1, c1) = setup(9, 5, false);
    let (w2, p2, c2) = setup(9, 5, false);
    let a = forward(&w1, &p1, &c1);
    assert_eq!(a, forward(&w2, &p2, &c2));
    assert_eq!(a.rows(), w1.last().node_count());
    assert_eq!(a.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), forward(&w2, &p2, &c2).as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
}

#[test]
fn window_errors() {
    let snaps = vec![isolated_snapshot(0, 0)];
    let mps = vec![MetaPath::symmetric(0, 1, 1)];
    assert!(matches!(
        PreparedWindow::build(&snaps, 0, &mps, &PairingOptions::default(), &mut rng(0)),
        Err(ModelError::WindowTooShort(1))
    ));
    let two = vec![isolated_snapshot(0, 0), isolated_snapshot(1, 1)];
    let wrong = vec![MetaPath::symmetric(1, 1, 0)];
    assert!(matches!(
        PreparedWindow::build(&two, 0, &wrong, &PairingOptions::default(), &mut rng(0)),
        Err(ModelError::MetaPathEndpoints { .. })
    ));
}

proptest! {
    #[test]
    fn convolution_is_permutation_equivariant(seed in 0u64..5000, n in 2usize..9) {
        let mut r = rng(seed);
        let a = normalize_adjacency(&random_adjacency(n, 0.4, &mut r)).unwrap();
        let x = random_matrix(n, 3, &mut r);
        let w0 = random_matrix(3, 4, &mut r);
        let w1 = random_matrix(4, 2, &mut r);
        let mut perm: Vec<usize> = (0..n).collect();
        use rand::seq::SliceRandom;
        perm.shuffle(&mut r);
        let mut pa = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                pa.set(i, j, a.get(perm[i], perm[j]));
            }
        }
        let px = x.select_rows(&perm);
        let run = |adj: &DenseMatrix, feats: &DenseMatrix| {
            let mut t = Tape::new();
            let (va, vx, v0, v1) = (t.constant(adj.clone()), t.constant(feats.clone()), t.constant(w0.clone()), t.constant(w1.clone()));
            let out = hgcn_forward(&mut t, va, vx, v0, v1).unwrap();
            t.data(out).clone()
        };
        let base = run(&a, &x);
        let permuted = run(&pa, &px);
        prop_assert!(permuted.max_abs_diff(&base.select_rows(&perm)) < 1e-12);
    }

    #[test]
    fn attention_weights_form_a_distribution(seed in 0u64..5000, n in 1usize..40, scale in 0.01f64..100.0) {
        let mut r = rng(seed);
        let z = random_matrix(n, 3, &mut r).map(|v| v * scale);
        let mut t = Tape::new();
        let (vz, vv, vw) = (t.constant(z), t.constant(random_matrix(4, 3, &mut r)), t.constant(random_matrix(1, 4, &mut r)));
        let w = node_attention(&mut t, vz, vv, vw).unwrap();
        let col = t.data(w);
        prop_assert!((col.sum() - 1.0).abs() <= 1e-12);
        prop_assert!(col.as_slice().iter().all(|&x| x > 0.0));
    }
}
