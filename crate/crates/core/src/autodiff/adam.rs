use log::warn;
use serde::{Deserialize, Serialize};

use super::tape::{AutodiffError, Tape, Value};
use crate::matrix::DenseMatrix;

/// A named trainable matrix and its accumulated gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    pub data: DenseMatrix,
    #[serde(skip, default = "empty")]
    pub grad: DenseMatrix,
}

fn empty() -> DenseMatrix {
    DenseMatrix::zeros(0, 0)
}

impl Parameter {
    pub fn new(name: impl Into<String>, data: DenseMatrix) -> Self {
        let grad = DenseMatrix::zeros(data.rows(), data.cols());
        Self { name: name.into(), data, grad }
    }

    /// Records the current value as a differentiable leaf.
    pub fn record(&self, tape: &mut Tape) -> Value {
        tape.variable(self.data.clone())
    }

    /// Adds the tape gradient of `v` into this parameter's gradient.
    pub fn absorb_grad(&mut self, tape: &Tape, v: Value) {
        if self.grad.shape() != self.data.shape() {
            self.grad = DenseMatrix::zeros(self.data.rows(), self.data.cols());
        }
        self.grad.add_assign(&tape.grad(v));
    }

    pub fn zero_grad(&mut self) {
        if self.grad.shape() == self.data.shape() {
            self.grad.fill(0.0);
        } else {
            self.grad = DenseMatrix::zeros(self.data.rows(), self.data.cols());
        }
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first_moment: Vec<DenseMatrix>,
    second_moment: Vec<DenseMatrix>,
}

impl AdamState {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update from the parameters' gradients, then zeroes them.
    pub fn step(&mut self, params: &mut [&mut Parameter]) -> Result<(), AutodiffError> {
        if params.is_empty() {
            warn!("adam step called with no parameters; skipping");
            return Ok(());
        }
        if self.first_moment.is_empty() {
            self.first_moment = params.iter().map(|p| DenseMatrix::zeros(p.data.rows(), p.data.cols())).collect();
            self.second_moment = self.first_moment.clone();
        }
        if self.first_moment.len() != params.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "adam_step",
                left: (self.first_moment.len(), 1),
                right: (params.len(), 1),
            });
        }
        for (p, m) in params.iter().zip(&self.first_moment) {
            if p.data.shape() != m.shape() || p.grad.shape() != m.shape() {
                return Err(AutodiffError::ShapeMismatch { op: "adam_step", left: m.shape(), right: p.grad.shape() });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        for ((p, m), v) in params.iter_mut().zip(&mut self.first_moment).zip(&mut self.second_moment) {
            let grads = p.grad.as_slice().to_vec();
            let data = p.data.as_mut_slice();
            for (i, g) in grads.into_iter().enumerate() {
                let mi = &mut m.as_mut_slice()[i];
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
                let vi = &mut v.as_mut_slice()[i];
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
                let m_hat = *mi / bias1;
                let v_hat = *vi / bias2;
                data[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
            p.zero_grad();
        }
        Ok(())
    }
}
