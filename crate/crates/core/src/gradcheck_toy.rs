//! Seeded toy problem for verifying the training gradient end to end.

use log::debug;

use crate::autodiff::{finite_difference_check, GradCheckReport, Tape};
use crate::config::RunConfig;
use crate::datagen::{generate_series, GenConfig};
use crate::matrix::DenseMatrix;
use crate::model::{htgcn_forward, HtgcnParams};
use crate::objective::{permutations, perm_ce_loss};
use crate::trainer::{stream_rng, Session, TrainError};

/// Parameter draws closer than this to a ReLU kink or a permutation tie
/// are rejected.
const KINK_MARGIN: f64 = 1e-3;
const MAX_DRAWS: u64 = 64;

/// Central-difference step for the toy check. At `1e-6` rounding noise in
/// a loss of magnitude ~10 dominates the smallest gradient entries.
pub const TOY_STEP: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct ToyProblem {
    pub session: Session,
    pub params: HtgcnParams,
}

pub fn toy_series_config(seed: u64) -> GenConfig {
    GenConfig {
        nodes_per_type: vec![10, 6, 3],
        time_steps: 3,
        feature_dim: 4,
        p_in: 0.5,
        p_out: 0.1,
        churn_rate: 0.1,
        migration_rate: 0.1,
        seed,
        ..GenConfig::default()
    }
}

/// Three snapshots of at most 10 labeled nodes, `d = 3`, two meta-paths.
pub fn toy_problem(seed: u64) -> Result<ToyProblem, TrainError> {
    let series = generate_series(&toy_series_config(seed)).map_err(|e| TrainError::Incompatible(e.to_string()))?;
    let run = RunConfig {
        window_length: 3,
        hidden_width: 5,
        attention_dim: 3,
        attention_rescale: true,
        train_label_fraction: 1.0,
        seed,
        ..RunConfig::default()
    };
    let session = Session::new(&run, &series)?;
    for draw in 0..MAX_DRAWS {
        let params = HtgcnParams::init(&session.model, &mut stream_rng(seed, 100 + draw));
        if well_conditioned(&session, &params)? {
            return Ok(ToyProblem { session, params });
        }
        debug!("toy draw {draw} rejected");
    }
    Err(TrainError::Incompatible(format!("no well-conditioned toy parameters for seed {seed}")))
}

fn well_conditioned(session: &Session, params: &HtgcnParams) -> Result<bool, TrainError> {
    for snap in &session.window.snapshots {
        let pre = snap.norm_adj.matmul(&snap.features).matmul(&params.hgcn.w0.data);
        if pre.as_slice().iter().any(|v| v.abs() < KINK_MARGIN) {
            return Ok(false);
        }
    }
    let probs = crate::trainer::probabilities(session, params)?;
    let c = session.communities();
    let labels = &session.window.last().labels;
    let mut score = vec![vec![0.0; c]; c];
    for &row in &session.split.train {
        let k = labels[row].expect("train rows are labeled");
        for (col, s) in score[k].iter_mut().enumerate() {
            *s += probs.get(row, col).ln();
        }
    }
    let mut nll: Vec<f64> =
        permutations(c).iter().map(|p| -(0..c).map(|k| score[k][p[k]]).sum::<f64>()).collect();
    nll.sort_by(f64::total_cmp);
    Ok(nll.len() < 2 || nll[1] - nll[0] > KINK_MARGIN)
}

/// Loss and per-parameter gradients of the training objective at `mats`.
pub fn loss_and_grads(problem: &ToyProblem, mats: &[DenseMatrix]) -> Result<(f64, Vec<DenseMatrix>), TrainError> {
    let session = &problem.session;
    let mut params = problem.params.clone();
    params.set_matrices(mats);
    let mut tape = Tape::new();
    let pass = htgcn_forward(&mut tape, &session.window, &params, &session.model)?;
    let probs = tape.softmax_over_rows(pass.output);
    let labels = &session.window.last().labels;
    let targets: Vec<(usize, usize)> =
        session.split.train.iter().map(|&r| (r, labels[r].expect("train rows are labeled"))).collect();
    let loss = perm_ce_loss(&mut tape, probs, &targets, session.communities())?;
    tape.backward(loss.value)?;
    let grads = pass.params.in_order().into_iter().map(|v| tape.grad(v)).collect();
    Ok((loss.loss, grads))
}

pub fn run_gradient_check(seed: u64, step: f64) -> Result<GradCheckReport, TrainError> {
    let problem = toy_problem(seed)?;
    let start = problem.params.matrices();
    finite_difference_check(&start, step, |mats| loss_and_grads(&problem, mats))
}
