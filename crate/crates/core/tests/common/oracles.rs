//! Direct-definition metric and loss oracles shared by the integration and
//! acceptance tests.

use htgcn::matrix::DenseMatrix;

/// All permutations of `0..n`, by recursion.
pub fn all_permutations(n: usize) -> Vec<Vec<usize>> {
    fn go(prefix: &mut Vec<usize>, used: &mut Vec<bool>, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                go(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    go(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

pub fn perm_loss_oracle(probs: &DenseMatrix, labels: &[usize], c: usize) -> f64 {
    all_permutations(c)
        .iter()
        .map(|p| -labels.iter().enumerate().map(|(i, &l)| probs.get(i, p[l]).ln()).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
}

fn k_of(truth: &[usize], pred: &[usize]) -> usize {
    truth.iter().chain(pred).max().map_or(0, |m| m + 1)
}

pub fn aligned_oracle(truth: &[usize], pred: &[usize]) -> Vec<usize> {
    let k = k_of(truth, pred);
    // first maximum in lexicographic order
    let mut best = (0..k).collect::<Vec<_>>();
    let mut best_hits = None;
    for p in all_permutations(k) {
        let hits = pred.iter().zip(truth).filter(|(&q, &t)| p[q] == t).count();
        if best_hits.is_none_or(|b| hits > b) {
            best_hits = Some(hits);
            best = p;
        }
    }
    pred.iter().map(|&q| best[q]).collect()
}

pub fn acc_oracle(truth: &[usize], pred: &[usize]) -> f64 {
    let aligned = aligned_oracle(truth, pred);
    truth.iter().zip(&aligned).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64
}

pub fn nmi_oracle(truth: &[usize], pred: &[usize]) -> f64 {
    let n = truth.len() as f64;
    let k = k_of(truth, pred);
    let p = |f: &dyn Fn(usize) -> bool| (0..truth.len()).filter(|&i| f(i)).count() as f64 / n;
    let mut mi = 0.0;
    let (mut ht, mut hp) = (0.0, 0.0);
    for a in 0..k {
        let pa = p(&|i| truth[i] == a);
        if pa > 0.0 {
            ht -= pa * pa.ln();
        }
        let pb = p(&|i| pred[i] == a);
        if pb > 0.0 {
            hp -= pb * pb.ln();
        }
        for b in 0..k {
            let pab = p(&|i| truth[i] == a && pred[i] == b);
            if pab > 0.0 {
                let pb = p(&|i| pred[i] == b);
                mi += pab * (pab / (pa * pb)).ln();
            }
        }
    }
    if ht + hp == 0.0 {
        0.0
    } else {
        mi / ((ht + hp) / 2.0)
    }
}

/// Pair-counting ARI over all `n(n-1)/2` node pairs.
pub fn ari_oracle(truth: &[usize], pred: &[usize]) -> f64 {
    let (mut n11, mut n10, mut n01, mut n00) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for i in 0..truth.len() {
        for j in i + 1..truth.len() {
            match (truth[i] == truth[j], pred[i] == pred[j]) {
                (true, true) => n11 += 1.0,
                (true, false) => n10 += 1.0,
                (false, true) => n01 += 1.0,
                (false, false) => n00 += 1.0,
            }
        }
    }
    let denom = (n11 + n01) * (n01 + n00) + (n11 + n10) * (n10 + n00);
    if denom == 0.0 {
        1.0
    } else {
        2.0 * (n11 * n00 - n10 * n01) / denom
    }
}

pub fn macro_f1_oracle(truth: &[usize], pred: &[usize]) -> f64 {
    let aligned = aligned_oracle(truth, pred);
    let mut classes: Vec<usize> = truth.iter().chain(&aligned).copied().collect();
    classes.sort_unstable();
    classes.dedup();
    let mut total = 0.0;
    for &c in &classes {
        let tp = truth.iter().zip(&aligned).filter(|(&t, &p)| t == c && p == c).count() as f64;
        let predicted = aligned.iter().filter(|&&p| p == c).count() as f64;
        let actual = truth.iter().filter(|&&t| t == c).count() as f64;
        let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
        let recall = if actual > 0.0 { tp / actual } else { 0.0 };
        total += if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    }
    total / classes.len() as f64
}

/// Single-label micro-F1 equals aligned accuracy.
pub fn micro_f1_oracle(truth: &[usize], pred: &[usize]) -> f64 {
    acc_oracle(truth, pred)
}

pub fn modularity_oracle(adj: &DenseMatrix, labels: &[usize]) -> f64 {
    let n = adj.rows();
    let k: Vec<f64> = (0..n).map(|u| (0..n).map(|v| adj.get(u, v)).sum()).collect();
    let two_m: f64 = k.iter().sum();
    let mut q = 0.0;
    for u in 0..n {
        for v in 0..n {
            if labels[u] == labels[v] {
                q += adj.get(u, v) - k[u] * k[v] / two_m;
            }
        }
    }
    q / two_m
}

pub fn two_triangles() -> (DenseMatrix, Vec<usize>) {
    let mut a = DenseMatrix::zeros(6, 6);
    for (i, j) in [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)] {
        a.set(i, j, 1.0);
        a.set(j, i, 1.0);
    }
    (a, vec![0, 0, 0, 1, 1, 1])
}
