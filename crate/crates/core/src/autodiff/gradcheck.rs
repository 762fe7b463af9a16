//! Central finite-difference verification of analytic gradients.

use super::tape::AutodiffError;
use crate::matrix::DenseMatrix;

pub const DEFAULT_STEP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// `(parameter, row, col)` of the worst entry.
    pub worst_entry: Option<(usize, usize, usize)>,
    pub entries_checked: usize,
}

/// Compares the analytic gradient returned by `objective` with
/// `(f(w + h) - f(w - h)) / 2h` for every parameter entry. The relative
/// error denominator is `max(|analytic|, |numeric|, 1e-12)`.
///
/// `objective` returns the loss and one gradient matrix per parameter.
/// Checks near ReLU kinks are the caller's responsibility.
pub fn finite_difference_check<E, F>(
    params: &[DenseMatrix],
    step: f64,
    mut objective: F,
) -> Result<GradCheckReport, E>
where
    E: From<AutodiffError>,
    F: FnMut(&[DenseMatrix]) -> Result<(f64, Vec<DenseMatrix>), E>,
{
    let (base, analytic) = objective(params)?;
    if !base.is_finite() {
        return Err(AutodiffError::NonFinite { op: "finite_difference_check" }.into());
    }
    for (p, g) in params.iter().zip(&analytic) {
        if p.shape() != g.shape() {
            return Err(AutodiffError::ShapeMismatch { op: "finite_difference_check", left: p.shape(), right: g.shape() }
                .into());
        }
    }
    let mut work = params.to_vec();
    let mut report = GradCheckReport { max_relative_error: 0.0, worst_entry: None, entries_checked: 0 };
    for k in 0..work.len() {
        let (rows, cols) = work[k].shape();
        for r in 0..rows {
            for c in 0..cols {
                let original = work[k].get(r, c);
                work[k].set(r, c, original + step);
                let (plus, _) = objective(&work)?;
                work[k].set(r, c, original - step);
                let (minus, _) = objective(&work)?;
                work[k].set(r, c, original);
                if !plus.is_finite() || !minus.is_finite() {
                    return Err(AutodiffError::NonFinite { op: "finite_difference_check" }.into());
                }
                let numeric = (plus - minus) / (2.0 * step);
                let exact = analytic[k].get(r, c);
                let denom = exact.abs().max(numeric.abs()).max(1e-12);
                let rel = (exact - numeric).abs() / denom;
                report.entries_checked += 1;
                if rel > report.max_relative_error || report.worst_entry.is_none() {
                    report.max_relative_error = rel;
                    report.worst_entry = Some((k, r, c));
                }
            }
        }
    }
    Ok(report)
}
