//! Permutation-infimum cross-entropy.
//!
//! Community indices are arbitrary, so the loss is the minimum negative
//! log-likelihood over every relabeling `π` of the ground truth. The
//! minimizing permutation is held fixed during backward (a subgradient of
//! the minimum).

use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Value};
use crate::matrix::DenseMatrix;

/// Largest community count handled by exhaustive enumeration.
pub const MAX_BRUTE_FORCE_COMMUNITIES: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObjectiveError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(
        "{0} communities exceed the exhaustive permutation limit of 8; \
         grouping labels into coarser sets is not supported"
    )]
    TooManyCommunities(usize),
    #[error("label {label} at row {row} is outside [0, {communities})")]
    LabelOutOfRange { row: usize, label: usize, communities: usize },
    #[error("row {row} out of range for {rows} rows")]
    RowOutOfRange { row: usize, rows: usize },
    #[error("probability matrix has {got} columns, expected {expected}")]
    ColumnMismatch { expected: usize, got: usize },
    #[error("no labeled rows")]
    NoTargets,
    #[error("entry ({row}, {col}) = {value} is not a probability")]
    InvalidProbability { row: usize, col: usize, value: f64 },
}

/// All permutations of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut current: Vec<usize> = (0..n).collect();
    let mut out = vec![current.clone()];
    // next lexicographic permutation, standard pivot/suffix reversal
    loop {
        let Some(pivot) = (1..n).rev().find(|&i| current[i - 1] < current[i]).map(|i| i - 1) else {
            return out;
        };
        let swap = (pivot + 1..n).rev().find(|&j| current[j] > current[pivot]).expect("pivot has a successor");
        current.swap(pivot, swap);
        current[pivot + 1..].reverse();
        out.push(current.clone());
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PermLoss {
    pub value: Value,
    pub loss: f64,
    /// `permutation[true_label]` is the predicted column the label maps to.
    pub permutation: Vec<usize>,
}

/// `min_π -Σ_i ln probs[row_i, π(label_i)]` over the `(row, label)` targets.
pub fn perm_ce_loss(
    tape: &mut Tape,
    probs: Value,
    targets: &[(usize, usize)],
    communities: usize,
) -> Result<PermLoss, ObjectiveError> {
    if communities > MAX_BRUTE_FORCE_COMMUNITIES {
        return Err(ObjectiveError::TooManyCommunities(communities));
    }
    let (rows, cols) = tape.shape(probs);
    if cols != communities {
        return Err(ObjectiveError::ColumnMismatch { expected: communities, got: cols });
    }
    if targets.is_empty() {
        return Err(ObjectiveError::NoTargets);
    }
    for &(row, label) in targets {
        if row >= rows {
            return Err(ObjectiveError::RowOutOfRange { row, rows });
        }
        if label >= communities {
            return Err(ObjectiveError::LabelOutOfRange { row, label, communities });
        }
    }
    let permutation = {
        let p = tape.data(probs);
        // score[k][c]: total log-probability of column c over rows labeled k;
        // zero probabilities contribute -inf and never win the minimum
        let mut score = vec![vec![0.0; communities]; communities];
        for &(row, label) in targets {
            for (c, s) in score[label].iter_mut().enumerate() {
                let v = p.get(row, c);
                if !(0.0..=1.0).contains(&v) {
                    return Err(ObjectiveError::InvalidProbability { row, col: c, value: v });
                }
                *s += v.ln();
            }
        }
        let mut best: Option<(f64, Vec<usize>)> = None;
        for perm in permutations(communities) {
            let nll = -(0..communities).map(|k| score[k][perm[k]]).sum::<f64>();
            if best.as_ref().is_none_or(|(b, _)| nll < *b) {
                best = Some((nll, perm));
            }
        }
        best.expect("at least one permutation").1
    };
    // only the picked entry of each target row enters the logarithm
    let target_rows: Vec<usize> = targets.iter().map(|&(row, _)| row).collect();
    let mut mask = DenseMatrix::zeros(targets.len(), cols);
    for (i, &(_, label)) in targets.iter().enumerate() {
        mask.set(i, permutation[label], 1.0);
    }
    let selected = tape.gather_rows(probs, &target_rows)?;
    let mask = tape.constant(mask);
    let masked = tape.elementwise_mul(mask, selected)?;
    let ones = tape.constant(DenseMatrix::filled(cols, 1, 1.0));
    let picked = tape.matmul(masked, ones)?;
    let log_picked = tape.ln(picked)?;
    let total = tape.scalar_sum(log_picked);
    let value = tape.scale(total, -1.0);
    let loss = tape.data(value).get(0, 0);
    Ok(PermLoss { value, loss, permutation })
}

/// [`perm_ce_loss`] over every row, with `labels[i]` the label of row `i`.
pub fn perm_ce_loss_all(
    tape: &mut Tape,
    probs: Value,
    labels: &[usize],
    communities: usize,
) -> Result<PermLoss, ObjectiveError> {
    let targets: Vec<(usize, usize)> = labels.iter().copied().enumerate().collect();
    perm_ce_loss(tape, probs, &targets, communities)
}
