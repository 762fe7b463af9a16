//! Reverse-mode differentiation over dense matrices, finite-difference
//! checking and the Adam optimizer.

mod adam;
mod gradcheck;
mod tape;

pub use adam::{AdamState, Parameter};
pub use gradcheck::{finite_difference_check, GradCheckReport, DEFAULT_STEP};
pub use tape::{AutodiffError, Tape, Value};
pub use tape::softmax_rows;
