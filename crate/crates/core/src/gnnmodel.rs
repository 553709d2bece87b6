//! The feature-graph GNN.
//!
//! Every feature is a node. Node `i` of a sample starts from
//! `[x_i ‖ X_i]`, the scalar feature value next to a learned per-node
//! embedding row. Each layer computes, for every node,
//!
//! ```text
//! z_i = W_root h_i + Σ_{j ∈ N(i)} α_ij W_val h_j
//! α_ij = softmax_j ((W_qry h_i) · (W_key h_j) / √hidden)
//! h_i' = ReLU(BatchNorm(z_i))
//! ```
//!
//! with biases on all four projections, then the final node states are
//! mean-pooled and a linear head reads the prediction. All samples of a run
//! share one graph, so a minibatch of `B` samples is one block-diagonal
//! graph of `B·d` nodes and batch normalization runs over all of them.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffkit::{Adam, AdamConfig, BatchNorm, DiffError, NormMode, PlateauConfig, PlateauSchedule, Tape, Tensor, Var};
use crate::fgraph::FeatureGraph;
use crate::rng::{seeded, stream};
use crate::synth::{DataView, SyntheticDataset};

pub const EMBEDDING_DIM: usize = 16;

/// Rows per forward pass when predicting.
const EVAL_CHUNK: usize = 512;

/// Tensors per message-passing layer: query, key, value and root weights
/// and biases, then the batch-norm scale and shift.
const TENSORS_PER_LAYER: usize = 10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GnnError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("expected {expected} features, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("no rows")]
    EmptyRows,
    #[error("training diverged in epoch {epoch}")]
    Diverged { epoch: usize },
    #[error(transparent)]
    Diff(#[from] DiffError),
}

/// Hidden width that keeps parameter budgets comparable across depths.
pub fn default_hidden_dim(num_layers: usize) -> Option<usize> {
    match num_layers {
        1 => Some(26),
        2 => Some(20),
        3 => Some(16),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnnConfig {
    pub num_layers: usize,
    pub embedding_dim: usize,
    pub hidden_dim: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without train-loss improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub plateau: PlateauConfig,
}

impl GnnConfig {
    pub fn for_layers(num_layers: usize) -> Result<Self, GnnError> {
        let hidden_dim = default_hidden_dim(num_layers)
            .ok_or_else(|| GnnError::Config(format!("no default width for {num_layers} layers")))?;
        Ok(Self {
            num_layers,
            embedding_dim: EMBEDDING_DIM,
            hidden_dim,
            lr: 1e-2,
            batch_size: 256,
            max_epochs: 200,
            patience: 30,
            seed: 0,
            plateau: PlateauConfig::default(),
        })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_max_epochs(mut self, max_epochs: usize) -> Self {
        self.max_epochs = max_epochs;
        self
    }

    pub fn validate(&self) -> Result<(), GnnError> {
        let bad = |m: &str| Err(GnnError::Config(m.into()));
        if self.num_layers == 0 {
            return bad("at least one layer is required");
        }
        if self.hidden_dim == 0 {
            return bad("hidden width must be positive");
        }
        if self.batch_size < 2 {
            return bad("batch norm needs batches of at least 2 rows");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be positive");
        }
        Ok(())
    }
}

/// Arc and node index lists for a batch of `rows` samples on one graph.
#[derive(Debug, Clone)]
pub struct MessagePlan {
    rows: usize,
    num_features: usize,
    src: Arc<[usize]>,
    dst: Arc<[usize]>,
    node: Arc<[usize]>,
}

impl MessagePlan {
    pub fn new(graph: &FeatureGraph, rows: usize) -> Self {
        let d = graph.num_features();
        let arcs = graph.arcs();
        let mut src = Vec::with_capacity(rows * arcs.len());
        let mut dst = Vec::with_capacity(rows * arcs.len());
        for b in 0..rows {
            for &(s, t) in &arcs {
                src.push(b * d + s);
                dst.push(b * d + t);
            }
        }
        let node: Vec<usize> = (0..rows).flat_map(|_| 0..d).collect();
        Self {
            rows,
            num_features: d,
            src: src.into(),
            dst: dst.into(),
            node: node.into(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn num_arcs(&self) -> usize {
        self.src.len()
    }
}

/// Result of recording a forward pass.
pub struct Forward {
    /// Shape `[rows]`.
    pub prediction: Var,
    /// Tape handles of the parameters, in [`GnnModel::parameter_names`] order.
    pub params: Vec<Var>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnnModel {
    num_features: usize,
    num_layers: usize,
    embedding_dim: usize,
    hidden_dim: usize,
    params: Vec<Tensor>,
    norms: Vec<BatchNorm>,
}

fn uniform(rng: &mut impl Rng, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape volume")
}

impl GnnModel {
    /// Fresh model: embedding rows `N(0, 0.1²)`, linear weights and biases
    /// uniform in `±1/√fan_in`, batch-norm scale 1 and shift 0.
    pub fn new(num_features: usize, config: &GnnConfig) -> Result<Self, GnnError> {
        config.validate()?;
        if num_features == 0 {
            return Err(GnnError::Config("a graph needs at least one feature".into()));
        }
        let mut rng = seeded(config.seed, stream::INIT);
        let (e, h) = (config.embedding_dim, config.hidden_dim);
        let normal = Normal::new(0.0, 0.1).expect("valid deviation");
        let emb = (0..num_features * e).map(|_| normal.sample(&mut rng)).collect();
        let mut params = vec![Tensor::matrix(num_features, e, emb)?];
        let mut norms = Vec::new();
        for l in 0..config.num_layers {
            let fan_in = if l == 0 { 1 + e } else { h };
            let bound = 1.0 / libm::sqrt(fan_in as f64);
            for _ in 0..4 {
                params.push(uniform(&mut rng, &[fan_in, h], bound));
                params.push(uniform(&mut rng, &[h], bound));
            }
            params.push(Tensor::vector(vec![1.0; h]));
            params.push(Tensor::vector(vec![0.0; h]));
            norms.push(BatchNorm::new(h));
        }
        let bound = 1.0 / libm::sqrt(h as f64);
        params.push(uniform(&mut rng, &[h, 1], bound));
        params.push(uniform(&mut rng, &[1], bound));
        Ok(Self {
            num_features,
            num_layers: config.num_layers,
            embedding_dim: e,
            hidden_dim: h,
            params,
            norms,
        })
    }

    /// Reassembles a model from stored tensors; shapes are checked against
    /// a freshly initialized model of the same configuration.
    pub fn from_parts(
        num_features: usize,
        config: &GnnConfig,
        params: Vec<Tensor>,
        norms: Vec<BatchNorm>,
    ) -> Result<Self, GnnError> {
        let mut model = Self::new(num_features, config)?;
        let shapes_match = params.len() == model.params.len()
            && params.iter().zip(&model.params).all(|(a, b)| a.shape() == b.shape());
        let norms_match = norms.len() == model.norms.len()
            && norms
                .iter()
                .all(|n| n.channels() == model.hidden_dim && n.running_var.len() == model.hidden_dim);
        if !shapes_match || !norms_match {
            return Err(GnnError::Config("stored tensors do not fit the configuration".into()));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(DiffError::NonFinite { op: "load" }.into());
        }
        model.params = params;
        model.norms = norms;
        Ok(model)
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn num_layers(&self) -> usize {
        self.num_layers
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn parameters(&self) -> &[Tensor] {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn norms(&self) -> &[BatchNorm] {
        &self.norms
    }

    pub fn norms_mut(&mut self) -> &mut [BatchNorm] {
        &mut self.norms
    }

    pub fn parameter_names(&self) -> Vec<String> {
        let mut names = vec![String::from("embedding")];
        for l in 0..self.num_layers {
            for proj in ["query", "key", "value", "root"] {
                names.push(format!("layer{l}.{proj}.weight"));
                names.push(format!("layer{l}.{proj}.bias"));
            }
            names.push(format!("layer{l}.norm.scale"));
            names.push(format!("layer{l}.norm.shift"));
        }
        names.push("head.weight".into());
        names.push("head.bias".into());
        names
    }

    /// Learnable scalars, optionally without the embedding table (whose
    /// size grows with the feature count rather than the architecture).
    pub fn parameter_count(&self, include_embedding: bool) -> usize {
        let skip = usize::from(!include_embedding);
        self.params.iter().skip(skip).map(Tensor::len).sum()
    }

    /// Moves node `i` to position `perm[i]`: embedding rows follow, so the
    /// model paired with `graph.relabel(perm)` and correspondingly permuted
    /// feature columns computes the same function.
    pub fn permute_nodes(&mut self, perm: &[usize]) -> Result<(), GnnError> {
        let d = self.num_features;
        let mut seen = vec![false; d];
        if perm.len() != d || perm.iter().any(|&p| p >= d || core::mem::replace(&mut seen[p], true)) {
            return Err(GnnError::Config("not a permutation of the nodes".into()));
        }
        let e = self.embedding_dim;
        let old = self.params[0].data().to_vec();
        let table = self.params[0].data_mut();
        for (i, &p) in perm.iter().enumerate() {
            table[p * e..(p + 1) * e].copy_from_slice(&old[i * e..(i + 1) * e]);
        }
        Ok(())
    }

    /// Records the forward pass on `tape`. `x` holds the batch's feature
    /// values as a `[rows·d, 1]` column, sample-major.
    pub fn record(
        &mut self,
        tape: &mut Tape,
        plan: &MessagePlan,
        x: Var,
        mode: NormMode,
        update_stats: bool,
    ) -> Result<Forward, GnnError> {
        if plan.num_features != self.num_features {
            return Err(GnnError::Dimension {
                expected: self.num_features,
                got: plan.num_features,
            });
        }
        let rows = plan.rows;
        if rows == 0 {
            return Err(GnnError::EmptyRows);
        }
        let (d, h) = (self.num_features, self.hidden_dim);
        let n = rows * d;
        let params: Vec<Var> = self.params.iter().map(|p| tape.param(p.clone())).collect();
        let linear = |tape: &mut Tape, input: Var, k: usize| -> Result<Var, DiffError> {
            let m = tape.matmul(input, params[k])?;
            tape.add_row(m, params[k + 1])
        };
        let emb = tape.gather_rows(params[0], plan.node.clone())?;
        let mut hidden = tape.concat_cols(x, emb)?;
        let inv_sqrt_h = 1.0 / libm::sqrt(h as f64);
        for l in 0..self.num_layers {
            let base = 1 + l * TENSORS_PER_LAYER;
            let mut z = linear(tape, hidden, base + 6)?;
            if plan.num_arcs() > 0 {
                let q = linear(tape, hidden, base)?;
                let k = linear(tape, hidden, base + 2)?;
                let v = linear(tape, hidden, base + 4)?;
                let scores = tape.gather_dot(q, k, plan.dst.clone(), plan.src.clone(), inv_sqrt_h)?;
                let alpha = tape.segment_softmax(scores, plan.dst.clone(), n)?;
                let agg = tape.weighted_aggregate(alpha, v, plan.src.clone(), plan.dst.clone(), n)?;
                z = tape.add(z, agg)?;
            }
            let normed = self.norms[l].forward(tape, z, params[base + 8], params[base + 9], mode, update_stats)?;
            hidden = tape.relu(normed)?;
        }
        let cube = tape.reshape(hidden, &[rows, d, h])?;
        let pooled = tape.mean_axis(cube, 1)?;
        let head = params.len() - 2;
        let out = linear(tape, pooled, head)?;
        let prediction = tape.reshape(out, &[rows])?;
        Ok(Forward { prediction, params })
    }

    /// Eval-mode predictions for row-major `features` (`rows × d`).
    pub fn predict(&self, graph: &FeatureGraph, features: &[f64]) -> Result<Vec<f64>, GnnError> {
        let d = self.num_features;
        if graph.num_features() != d {
            return Err(GnnError::Dimension {
                expected: d,
                got: graph.num_features(),
            });
        }
        if features.is_empty() || features.len() % d != 0 {
            return Err(GnnError::EmptyRows);
        }
        let rows = features.len() / d;
        let mut scratch = self.clone();
        let mut out = Vec::with_capacity(rows);
        let full = MessagePlan::new(graph, EVAL_CHUNK.min(rows));
        let mut start = 0;
        while start < rows {
            let len = EVAL_CHUNK.min(rows - start);
            let tail;
            let plan = if len == full.rows {
                &full
            } else {
                tail = MessagePlan::new(graph, len);
                &tail
            };
            let mut tape = Tape::new();
            let x = tape.constant(Tensor::matrix(len * d, 1, features[start * d..(start + len) * d].to_vec())?);
            let fwd = scratch.record(&mut tape, plan, x, NormMode::Eval, false)?;
            out.extend_from_slice(tape.value(fwd.prediction).data());
            start += len;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub mse: f64,
}

pub fn metrics(predictions: &[f64], targets: &[f64]) -> Result<Metrics, GnnError> {
    if targets.is_empty() {
        return Err(GnnError::EmptyRows);
    }
    if predictions.len() != targets.len() {
        return Err(GnnError::Dimension {
            expected: targets.len(),
            got: predictions.len(),
        });
    }
    let n = targets.len() as f64;
    let (mut abs, mut sq) = (0.0, 0.0);
    for (p, t) in predictions.iter().zip(targets) {
        abs += (p - t).abs();
        sq += (p - t) * (p - t);
    }
    Ok(Metrics { mae: abs / n, mse: sq / n })
}

pub fn evaluate(model: &GnnModel, graph: &FeatureGraph, rows: DataView<'_>) -> Result<Metrics, GnnError> {
    if rows.is_empty() {
        return Err(GnnError::EmptyRows);
    }
    if rows.num_features != model.num_features {
        return Err(GnnError::Dimension {
            expected: model.num_features,
            got: rows.num_features,
        });
    }
    metrics(&model.predict(graph, rows.features)?, rows.targets)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 0 is the untrained model; its loss is the eval-mode train MSE.
    pub epoch: usize,
    /// Mean minibatch MSE over the epoch.
    pub train_loss: f64,
    /// Learning rate used during the epoch.
    pub lr: f64,
    /// Optimizer steps taken so far.
    pub steps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub model: GnnModel,
    pub config: GnnConfig,
    pub history: Vec<EpochRecord>,
    pub stopped_early: bool,
    pub test: Metrics,
}

impl TrainedModel {
    pub fn epochs_run(&self) -> usize {
        self.history.len() - 1
    }
}

fn diverged(epoch: usize) -> impl Fn(GnnError) -> GnnError {
    move |e| match e {
        GnnError::Diff(DiffError::NonFinite { .. }) => GnnError::Diverged { epoch },
        other => other,
    }
}

/// One pass over `order` in minibatches; returns the mean batch loss.
fn train_epoch(
    model: &mut GnnModel,
    graph: &FeatureGraph,
    train: DataView<'_>,
    order: &[usize],
    batch_size: usize,
    adam: &mut Adam,
    plans: &mut Vec<MessagePlan>,
) -> Result<f64, GnnError> {
    let d = model.num_features;
    let (mut total, mut seen) = (0.0, 0usize);
    for batch in order.chunks(batch_size) {
        // Batch statistics need two rows; a lone trailing row is skipped.
        if batch.len() < 2 {
            continue;
        }
        let plan = match plans.iter().position(|p| p.rows == batch.len()) {
            Some(i) => &plans[i],
            None => {
                plans.push(MessagePlan::new(graph, batch.len()));
                plans.last().expect("just pushed")
            }
        };
        let mut xs = Vec::with_capacity(batch.len() * d);
        let mut ys = Vec::with_capacity(batch.len());
        for &i in batch {
            xs.extend_from_slice(train.row(i));
            ys.push(train.targets[i]);
        }
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::matrix(batch.len() * d, 1, xs)?);
        let y = tape.constant(Tensor::vector(ys));
        let fwd = model.record(&mut tape, plan, x, NormMode::Train, true)?;
        let loss = tape.mse(fwd.prediction, y)?;
        let grads = tape.backward(loss)?;
        let g: Vec<Option<&[f64]>> = fwd.params.iter().map(|&v| grads.get_slice(v)).collect();
        let mut params: Vec<&mut Tensor> = model.params.iter_mut().collect();
        adam.step(&mut params, &g)?;
        total += tape.value(loss).item() * batch.len() as f64;
        seen += batch.len();
    }
    if seen == 0 {
        return Err(GnnError::EmptyRows);
    }
    Ok(total / seen as f64)
}

/// Trains on `train` and scores `test`.
///
/// Minibatches are drawn from a per-epoch shuffle seeded by `config.seed`.
/// The rate follows the plateau schedule and training stops after
/// `config.patience` epochs without a train-loss improvement of at least
/// the schedule threshold.
pub fn train(
    graph: &FeatureGraph,
    train: DataView<'_>,
    test: DataView<'_>,
    config: &GnnConfig,
) -> Result<TrainedModel, GnnError> {
    let d = graph.num_features();
    for rows in [&train, &test] {
        if rows.num_features != d {
            return Err(GnnError::Dimension {
                expected: d,
                got: rows.num_features,
            });
        }
    }
    if train.len() < 2 || test.is_empty() {
        return Err(GnnError::EmptyRows);
    }
    let mut model = GnnModel::new(d, config)?;
    let initial = evaluate(&model, graph, train)?;
    let mut history = vec![EpochRecord {
        epoch: 0,
        train_loss: initial.mse,
        lr: config.lr,
        steps: 0,
    }];
    let mut adam = Adam::new(
        AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        },
        &model.params.iter().collect::<Vec<_>>(),
    );
    let mut schedule = PlateauSchedule::new(config.plateau, config.lr);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut shuffle = seeded(config.seed, stream::SHUFFLE);
    let mut plans = Vec::new();
    let (mut best, mut stale) = (f64::INFINITY, 0usize);
    let mut stopped_early = false;
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut shuffle);
        let lr = adam.lr();
        let loss = train_epoch(&mut model, graph, train, &order, config.batch_size, &mut adam, &mut plans)
            .map_err(diverged(epoch))?;
        if !loss.is_finite() {
            return Err(GnnError::Diverged { epoch });
        }
        history.push(EpochRecord {
            epoch,
            train_loss: loss,
            lr,
            steps: adam.steps(),
        });
        adam.set_lr(schedule.observe(loss));
        if loss < best - config.plateau.threshold {
            best = loss;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                stopped_early = true;
                break;
            }
        }
    }
    let test = evaluate(&model, graph, test)?;
    Ok(TrainedModel {
        model,
        config: config.clone(),
        history,
        stopped_early,
        test,
    })
}

/// [`train`] on a dataset's own split.
pub fn train_dataset(graph: &FeatureGraph, data: &SyntheticDataset, config: &GnnConfig) -> Result<TrainedModel, GnnError> {
    train(graph, data.train(), data.test(), config)
}
