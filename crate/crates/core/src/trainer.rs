//! Training, evaluation, checkpoints and embedding export.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::Path;

use log::{debug, info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{softmax_rows, AdamState, AutodiffError, Tape};
use crate::config::{ConfigError, RunConfig};
use crate::graph::{collapse_adjacency, GraphError, HeteroSnapshot, NodeId, NodeType, TemporalSeries};
use crate::matrix::DenseMatrix;
use crate::metapath::{MetaPath, MetaPathError, PairingOptions};
use crate::metrics::{alignment, modularity_from_adjacency, MetricError, MetricReport, PercentReport};
use crate::model::{htgcn_forward, HtgcnParams, ModelConfig, ModelError, PreparedWindow};
use crate::objective::{perm_ce_loss, ObjectiveError};

pub const CHECKPOINT_VERSION: u32 = 1;

const INIT_STREAM: u64 = 1;
const PAIRING_STREAM: u64 = 2;
const SPLIT_STREAM: u64 = 3;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    MetaPath(#[from] MetaPathError),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("window of {window} snapshots requested but the series has {available}")]
    WindowTooLong { window: usize, available: usize },
    #[error("no labeled nodes in the final snapshot")]
    NoLabels,
    #[error("node type {0} has no labeled nodes in the final snapshot")]
    UnlabeledTarget(NodeType),
    #[error("loss became non-finite at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },
    #[error("series does not match checkpoint: {0}")]
    Incompatible(String),
}

/// Independent deterministic generator for one consumer of the run seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Lowest node type carrying labels in `snapshot`.
pub fn infer_target_type(snapshot: &HeteroSnapshot) -> Result<NodeType, TrainError> {
    snapshot.nodes().iter().filter(|n| n.label.is_some()).map(|n| n.node_type).min().ok_or(TrainError::NoLabels)
}

/// `max label + 1` over the labeled nodes of `target_type` in `window`.
pub fn infer_communities(window: &[HeteroSnapshot], target_type: NodeType) -> Result<usize, TrainError> {
    window
        .iter()
        .flat_map(|s| s.nodes().iter())
        .filter(|n| n.node_type == target_type)
        .filter_map(|n| n.label)
        .max()
        .map(|m| m + 1)
        .ok_or(TrainError::UnlabeledTarget(target_type))
}

/// `L -e-> X -e-> L` for every `(edge type, other node type)` seen on
/// edges with exactly one endpoint of the target type.
pub fn derive_meta_paths(window: &[HeteroSnapshot], target_type: NodeType) -> Vec<MetaPath> {
    let mut found = BTreeSet::new();
    for s in window {
        for e in s.edges() {
            let (Some(a), Some(b)) = (s.node(e.src), s.node(e.dst)) else { continue };
            let other = match (a.node_type == target_type, b.node_type == target_type) {
                (true, false) => b.node_type,
                (false, true) => a.node_type,
                _ => continue,
            };
            found.insert((e.edge_type, other));
        }
    }
    found.into_iter().map(|(e, x)| MetaPath::symmetric(target_type, e, x)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskSelection {
    Train,
    Heldout,
    All,
}

impl std::str::FromStr for MaskSelection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Self::Train),
            "heldout" | "held-out" | "test" => Ok(Self::Heldout),
            "all" => Ok(Self::All),
            other => Err(format!("unknown mask `{other}` (train, heldout, all)")),
        }
    }
}

/// Row positions of labeled final-snapshot nodes, split into training and
/// held-out sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub heldout: Vec<usize>,
}

impl Split {
    pub fn new(labels: &[Option<usize>], fraction: f64, seed: u64) -> Result<Self, TrainError> {
        let mut labeled: Vec<usize> = labels.iter().enumerate().filter(|(_, l)| l.is_some()).map(|(i, _)| i).collect();
        if labeled.is_empty() {
            return Err(TrainError::NoLabels);
        }
        labeled.shuffle(&mut stream_rng(seed, SPLIT_STREAM));
        let n_train = ((fraction * labeled.len() as f64).round() as usize).clamp(1, labeled.len());
        let mut train = labeled[..n_train].to_vec();
        let mut heldout = labeled[n_train..].to_vec();
        train.sort_unstable();
        heldout.sort_unstable();
        Ok(Self { train, heldout })
    }

    /// Rows scored for `mask`. An empty held-out set falls back to all
    /// labeled rows.
    pub fn rows(&self, mask: MaskSelection) -> Vec<usize> {
        let all = || {
            let mut rows = [self.train.clone(), self.heldout.clone()].concat();
            rows.sort_unstable();
            rows
        };
        match mask {
            MaskSelection::Train => self.train.clone(),
            MaskSelection::Heldout if !self.heldout.is_empty() => self.heldout.clone(),
            MaskSelection::Heldout | MaskSelection::All => all(),
        }
    }
}

/// Everything a run needs that depends only on the data and the
/// configuration, built once.
#[derive(Debug, Clone)]
pub struct Session {
    pub run: RunConfig,
    pub model: ModelConfig,
    pub target_type: NodeType,
    pub window: PreparedWindow,
    pub split: Split,
    /// Unnormalized collapsed adjacency of the final snapshot.
    pub final_adjacency: DenseMatrix,
    pub final_ids: Vec<NodeId>,
}

impl Session {
    /// Infers the target type, community count and meta-paths where the
    /// configuration leaves them open.
    pub fn new(run: &RunConfig, series: &TemporalSeries) -> Result<Self, TrainError> {
        run.validate()?;
        let window = checked_window(run, series)?;
        let last = window.last().expect("window is non-empty");
        let target_type = match run.target_type {
            Some(t) => t,
            None => infer_target_type(last)?,
        };
        let communities = match run.communities {
            Some(c) => c,
            None => infer_communities(window, target_type)?,
        };
        let meta_paths = if run.meta_paths.is_empty() {
            derive_meta_paths(window, target_type).iter().map(|m| m.to_string()).collect()
        } else {
            run.meta_paths.clone()
        };
        let model = ModelConfig {
            feature_dim: last.feature_dim(),
            hidden_dim: run.hidden_width,
            output_dim: communities,
            attention_dim: run.attention_dim,
            meta_paths,
            attention_rescale: run.attention_rescale,
            use_rescac: run.use_rescac,
        };
        Self::with_model(run, model, target_type, series)
    }

    pub fn with_model(
        run: &RunConfig,
        model: ModelConfig,
        target_type: NodeType,
        series: &TemporalSeries,
    ) -> Result<Self, TrainError> {
        let window = checked_window(run, series)?;
        let last = window.last().expect("window is non-empty");
        if last.feature_dim() != model.feature_dim {
            return Err(TrainError::Incompatible(format!(
                "feature dimension {} but the model expects {}",
                last.feature_dim(),
                model.feature_dim
            )));
        }
        for s in window {
            s.validate_labels(model.output_dim)?;
        }
        let meta_paths = model.parsed_meta_paths()?;
        let options = PairingOptions { pair_cap: Some(run.pair_cap), keep_self_pairs: run.keep_self_pairs };
        let prepared =
            PreparedWindow::build(window, target_type, &meta_paths, &options, &mut stream_rng(run.seed, PAIRING_STREAM))?;
        let final_labels = &prepared.last().labels;
        if final_labels.iter().all(Option::is_none) {
            return Err(TrainError::UnlabeledTarget(target_type));
        }
        let split = Split::new(final_labels, run.train_label_fraction, run.seed)?;
        let final_adjacency = collapse_adjacency(last, target_type)?;
        let final_ids = prepared.last().index.ids().to_vec();
        info!(
            "window of {} snapshots, target type {target_type}, {} nodes, {} train / {} held-out, meta-paths {:?}",
            prepared.snapshots.len(),
            final_ids.len(),
            split.train.len(),
            split.heldout.len(),
            model.meta_paths
        );
        Ok(Self { run: run.clone(), model, target_type, window: prepared, split, final_adjacency, final_ids })
    }

    pub fn communities(&self) -> usize {
        self.model.output_dim
    }

    pub fn init_params(&self) -> HtgcnParams {
        HtgcnParams::init(&self.model, &mut stream_rng(self.run.seed, INIT_STREAM))
    }

    fn targets(&self, rows: &[usize]) -> Vec<(usize, usize)> {
        let labels = &self.window.last().labels;
        rows.iter().map(|&r| (r, labels[r].expect("split rows are labeled"))).collect()
    }

    /// Final `N x d` output for the last snapshot.
    pub fn embed(&self, params: &HtgcnParams) -> Result<DenseMatrix, TrainError> {
        let mut tape = Tape::new();
        let pass = htgcn_forward(&mut tape, &self.window, params, &self.model)?;
        Ok(tape.data(pass.output).clone())
    }

    /// Scores `probs` (or raw outputs; only the row argmax matters) on the
    /// rows selected by `mask`. Modularity uses predictions for every node
    /// of the final collapsed graph.
    pub fn score(&self, outputs: &DenseMatrix, mask: MaskSelection) -> Result<MetricReport, TrainError> {
        let predicted = outputs.argmax_rows();
        let rows = self.split.rows(mask);
        let labels = &self.window.last().labels;
        let truth: Vec<usize> = rows.iter().map(|&r| labels[r].expect("split rows are labeled")).collect();
        let pred: Vec<usize> = rows.iter().map(|&r| predicted[r]).collect();
        let q = match modularity_from_adjacency(&self.final_adjacency, &predicted) {
            Ok(q) => q,
            Err(MetricError::NoEdges) => {
                warn!("final snapshot has no same-type connections; modularity reported as 0");
                0.0
            }
            Err(e) => return Err(e.into()),
        };
        Ok(MetricReport::compute(&truth, &pred, q)?)
    }

    pub fn evaluate(&self, params: &HtgcnParams, mask: MaskSelection) -> Result<MetricReport, TrainError> {
        let out = self.embed(params)?;
        self.score(&out, mask)
    }

    /// Loss of the training objective at `params`, without gradients.
    pub fn loss(&self, params: &HtgcnParams) -> Result<f64, TrainError> {
        let mut tape = Tape::new();
        let pass = htgcn_forward(&mut tape, &self.window, params, &self.model)?;
        let probs = tape.softmax_over_rows(pass.output);
        let targets = self.targets(&self.split.train);
        Ok(perm_ce_loss(&mut tape, probs, &targets, self.communities())?.loss)
    }
}

fn checked_window<'a>(run: &RunConfig, series: &'a TemporalSeries) -> Result<&'a [HeteroSnapshot], TrainError> {
    if series.len() < run.window_length {
        return Err(TrainError::WindowTooLong { window: run.window_length, available: series.len() });
    }
    Ok(series.window(run.window_length))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    /// Held-out criteria before this epoch's update, in percent.
    pub heldout: PercentReport,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: HtgcnParams,
    pub history: Vec<EpochRecord>,
    pub stopped_early: bool,
    pub final_metrics: MetricReport,
}

fn plateaued(history: &[EpochRecord], window: usize, tolerance: f64) -> bool {
    if window == 0 || history.len() <= window {
        return false;
    }
    let now = history[history.len() - 1].loss;
    let then = history[history.len() - 1 - window].loss;
    (now - then).abs() / then.abs().max(f64::MIN_POSITIVE) < tolerance
}

/// Full-batch training with Adam. `on_epoch` sees every record as it is
/// produced.
pub fn train_with<F: FnMut(&EpochRecord)>(session: &Session, mut on_epoch: F) -> Result<TrainOutcome, TrainError> {
    let run = &session.run;
    let mut params = session.init_params();
    let mut adam = AdamState::new(run.learning_rate);
    let targets = session.targets(&session.split.train);
    let mut history = Vec::with_capacity(run.epochs);
    let mut stopped_early = false;
    for epoch in 0..run.epochs {
        let mut tape = Tape::new();
        let pass = htgcn_forward(&mut tape, &session.window, &params, &session.model)?;
        let probs = tape.softmax_over_rows(pass.output);
        let loss = perm_ce_loss(&mut tape, probs, &targets, session.communities())?;
        if !loss.loss.is_finite() {
            return Err(TrainError::Diverged { epoch });
        }
        let heldout = session.score(tape.data(probs), MaskSelection::Heldout)?.as_percent();
        let record = EpochRecord { epoch, loss: loss.loss, heldout };
        debug!("epoch {epoch}: loss {:.6}", loss.loss);
        on_epoch(&record);
        history.push(record);

        tape.backward(loss.value)?;
        params.absorb_grads(&tape, &pass.params);
        adam.step(&mut params.parameters_mut())?;

        if plateaued(&history, run.plateau_epochs, run.plateau_tolerance) {
            info!("loss plateaued at epoch {epoch}");
            stopped_early = true;
            break;
        }
    }
    let final_metrics = session.evaluate(&params, MaskSelection::Heldout)?;
    Ok(TrainOutcome { params, history, stopped_early, final_metrics })
}

pub fn train(session: &Session) -> Result<TrainOutcome, TrainError> {
    train_with(session, |_| {})
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub run: RunConfig,
    pub model: ModelConfig,
    pub target_type: NodeType,
    pub epochs_run: usize,
    pub params: HtgcnParams,
    pub final_metrics: PercentReport,
}

impl Checkpoint {
    pub fn new(session: &Session, outcome: &TrainOutcome) -> Self {
        Self {
            format_version: CHECKPOINT_VERSION,
            run: session.run.clone(),
            model: session.model.clone(),
            target_type: session.target_type,
            epochs_run: outcome.history.len(),
            params: outcome.params.clone(),
            final_metrics: outcome.final_metrics.as_percent(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, TrainError> {
        #[derive(Deserialize)]
        struct Header {
            format_version: u32,
        }
        let header: Header = serde_json::from_str(text)?;
        if header.format_version != CHECKPOINT_VERSION {
            return Err(TrainError::CheckpointVersion { found: header.format_version, expected: CHECKPOINT_VERSION });
        }
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Rebuilds the session this checkpoint was trained in, over `series`.
    pub fn session(&self, series: &TemporalSeries) -> Result<Session, TrainError> {
        Session::with_model(&self.run, self.model.clone(), self.target_type, series)
    }
}

/// Trains and writes `checkpoint.json`, `metrics.json` and `epochs.jsonl`
/// into `out_dir`.
pub fn train_to_dir(session: &Session, out_dir: &Path) -> Result<(TrainOutcome, Checkpoint), TrainError> {
    fs::create_dir_all(out_dir)?;
    let mut log = BufWriter::new(File::create(out_dir.join("epochs.jsonl"))?);
    let mut write_err = None;
    let outcome = train_with(session, |rec| {
        if write_err.is_none() {
            let line = serde_json::to_string(rec).expect("record serializes");
            if let Err(e) = writeln!(log, "{line}") {
                write_err = Some(e);
            }
        }
    })?;
    if let Some(e) = write_err {
        return Err(e.into());
    }
    log.flush()?;
    let checkpoint = Checkpoint::new(session, &outcome);
    checkpoint.save(&out_dir.join("checkpoint.json"))?;
    fs::write(out_dir.join("metrics.json"), outcome.final_metrics.to_json())?;
    Ok((outcome, checkpoint))
}

/// Metrics of a checkpoint on `series`, restricted to `mask`.
pub fn evaluate_checkpoint(
    checkpoint: &Checkpoint,
    series: &TemporalSeries,
    mask: MaskSelection,
) -> Result<MetricReport, TrainError> {
    checkpoint.session(series)?.evaluate(&checkpoint.params, mask)
}

/// Tab-separated final embeddings: `node_id true_label predicted_label
/// z0..z{d-1}`. Predicted labels are relabeled to best agree with the
/// known labels; unlabeled nodes get `-1` as their true label.
pub fn embeddings_tsv(session: &Session, params: &HtgcnParams) -> Result<String, TrainError> {
    let out = session.embed(params)?;
    let predicted = out.argmax_rows();
    let labels = &session.window.last().labels;
    let (truth, pred): (Vec<usize>, Vec<usize>) =
        labels.iter().zip(&predicted).filter_map(|(l, &p)| l.map(|l| (l, p))).unzip();
    let mut map = alignment(&truth, &pred)?;
    // classes predicted only on unlabeled rows keep the remaining labels
    let d = session.communities();
    if map.len() < d {
        let used: BTreeSet<usize> = map.iter().copied().collect();
        map.extend((0..d).filter(|c| !used.contains(c)).take(d - map.len()));
    }
    let mut text = String::from("node_id\ttrue_label\tpredicted_label");
    for j in 0..out.cols() {
        write!(text, "\tz{j}").expect("writing to String");
    }
    text.push('\n');
    for (row, id) in session.final_ids.iter().enumerate() {
        let truth = labels[row].map_or("-1".to_string(), |l| l.to_string());
        write!(text, "{id}\t{truth}\t{}", map[predicted[row]]).expect("writing to String");
        for &z in out.row(row) {
            write!(text, "\t{z}").expect("writing to String");
        }
        text.push('\n');
    }
    Ok(text)
}

pub fn export_embeddings(checkpoint: &Checkpoint, series: &TemporalSeries, path: &Path) -> Result<(), TrainError> {
    let session = checkpoint.session(series)?;
    fs::write(path, embeddings_tsv(&session, &checkpoint.params)?)?;
    Ok(())
}

/// Row-wise softmax of the final output.
pub fn probabilities(session: &Session, params: &HtgcnParams) -> Result<DenseMatrix, TrainError> {
    Ok(softmax_rows(&session.embed(params)?))
}
