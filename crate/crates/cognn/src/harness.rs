//! Config-driven training, evaluation, and instrumentation.
//!
//! [`RunConfig`] captures one experiment point (task, model family, depths,
//! widths, optimizer settings, seed). [`train`] runs full- or mini-batch
//! Adam with best-validation model selection and produces a [`MetricsLog`];
//! everything is bit-deterministic given the config. Evaluation samples
//! hard actions and averages the metric over a fixed set of evaluation
//! streams. The instrumentation entry points measure edge retention per
//! layer, the action network's accuracy at keeping exactly the degree-6
//! root arcs, per-node action traces, and layer cost (a closed-form
//! multiply-accumulate count next to measured wall-clock).

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::datagen::{random_graph, split_of, Sample, Split};
use crate::error::{Error, Result};
use crate::graph::{Aggregation, Batch, Graph};
use crate::layers::PoolMode;
use crate::model::{ActionMode, CoGnnModel, Family, ModelSpec, Readout, TempSpec};
use crate::rng::stream;
use crate::tensor::{AdamState, Tape, Tensor};
use std::collections::BTreeMap;

/// Benchmark task.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Task {
    #[serde(rename = "root-neighbors")]
    RootNeighbors,
    #[serde(rename = "cycles")]
    Cycles,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::RootNeighbors => "root-neighbors",
            Task::Cycles => "cycles",
        }
    }

    /// Dataset file name under a data directory.
    pub fn file_name(self) -> &'static str {
        match self {
            Task::RootNeighbors => "root_neighbors.jsonl",
            Task::Cycles => "cycles.jsonl",
        }
    }

    /// Whether larger metric values are better (accuracy vs. MAE).
    fn higher_is_better(self) -> bool {
        matches!(self, Task::Cycles)
    }
}

/// Model family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "cognn")]
    Cognn,
    #[serde(rename = "baseline-sum")]
    BaselineSum,
    #[serde(rename = "baseline-mean")]
    BaselineMean,
    #[serde(rename = "baseline-gcn")]
    BaselineGcn,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Cognn => "cognn",
            ModelKind::BaselineSum => "baseline-sum",
            ModelKind::BaselineMean => "baseline-mean",
            ModelKind::BaselineGcn => "baseline-gcn",
        }
    }
}

/// Temperature mode selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TempKind {
    Learned,
    Fixed,
}

/// One experiment point. Field names double as config-file keys.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    pub model: ModelKind,
    /// Environment depth; 0 collapses the model to encode-decode.
    pub env_layers: usize,
    pub env_dim: usize,
    /// Environment aggregation; overridden by baseline model kinds.
    pub env_agg: Aggregation,
    pub act_layers: usize,
    pub act_dim: usize,
    pub act_agg: Aggregation,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub dropout: f64,
    pub lr: f64,
    pub epochs: usize,
    /// Graphs per training batch; 0 means full batch.
    pub batch_size: usize,
    pub temp: TempKind,
    /// Fixed temperature (`temp = fixed`).
    pub tau: f64,
    /// Temperature offset (`temp = learned`).
    pub tau0: f64,
    pub seed: u64,
    /// Number of evaluation streams to average the metric over.
    pub eval_seeds: usize,
    /// Validation/test cadence in epochs (epoch 0 and the final epoch are
    /// always evaluated).
    pub eval_every: usize,
    /// Times the train split is repeated within each epoch's batches. With
    /// sampled actions every copy draws fresh noise, so replicas > 1 average
    /// more action draws into each gradient step (lower estimator variance)
    /// on tiny train splits.
    pub train_replicas: usize,
    /// Learning-rate schedule over epochs.
    pub lr_schedule: LrSchedule,
    /// Global gradient-norm ceiling per step; 0 disables clipping.
    pub grad_clip: f64,
}

/// How the learning rate evolves over the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LrSchedule {
    Constant,
    /// Half-cosine decay from `lr` at epoch 0 to 0 at the final epoch.
    Cosine,
}

impl Default for RunConfig {
    /// The single-layer mean-environment point of the root-neighbors grid,
    /// shortened to 1000 epochs.
    fn default() -> RunConfig {
        RunConfig {
            task: Task::RootNeighbors,
            model: ModelKind::Cognn,
            env_layers: 1,
            env_dim: 16,
            env_agg: Aggregation::Mean,
            act_layers: 2,
            act_dim: 16,
            act_agg: Aggregation::Sum,
            encoder_layers: 2,
            decoder_layers: 1,
            dropout: 0.0,
            lr: 1e-3,
            epochs: 1000,
            batch_size: 0,
            temp: TempKind::Learned,
            tau: 1.0,
            tau0: 0.1,
            seed: 0,
            eval_seeds: 10,
            eval_every: 1,
            train_replicas: 1,
            lr_schedule: LrSchedule::Constant,
            grad_clip: 0.0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.env_dim == 0 || self.act_dim == 0 {
            return Err(Error::Config("dims must be >= 1".into()));
        }
        if self.lr <= 0.0 {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.eval_seeds == 0 || self.eval_every == 0 {
            return Err(Error::Config("eval_seeds and eval_every must be >= 1".into()));
        }
        if self.train_replicas == 0 {
            return Err(Error::Config("train_replicas must be >= 1".into()));
        }
        if !(self.grad_clip >= 0.0) {
            return Err(Error::Config(format!(
                "grad_clip must be >= 0 (0 disables), got {}",
                self.grad_clip
            )));
        }
        if self.model == ModelKind::Cognn && self.act_layers == 0 {
            return Err(Error::Config("a cognn model needs act_layers >= 1".into()));
        }
        Ok(())
    }

    /// The structural model description this config induces.
    pub fn model_spec(&self) -> ModelSpec {
        let (family, env_agg) = match self.model {
            ModelKind::Cognn => (Family::Cognn, self.env_agg),
            ModelKind::BaselineSum => (Family::Baseline, Aggregation::Sum),
            ModelKind::BaselineMean => (Family::Baseline, Aggregation::Mean),
            ModelKind::BaselineGcn => (Family::Baseline, Aggregation::Gcn),
        };
        let (in_dim, out_dim, readout) = match self.task {
            Task::RootNeighbors => (crate::datagen::ROOT_FEATURE_DIM, 5, Readout::Root),
            Task::Cycles => (1, 2, Readout::Pool(PoolMode::Sum)),
        };
        ModelSpec {
            family,
            in_dim,
            out_dim,
            env_dim: self.env_dim,
            env_layers: self.env_layers,
            env_agg,
            act_dim: self.act_dim,
            act_layers: self.act_layers,
            act_agg: self.act_agg,
            encoder_layers: self.encoder_layers,
            decoder_layers: self.decoder_layers,
            dropout: self.dropout,
            temp: match self.temp {
                TempKind::Learned => TempSpec::Learned { tau0: self.tau0 },
                TempKind::Fixed => TempSpec::Fixed { tau: self.tau },
            },
            readout,
        }
    }

    /// Serialize as `key = value` lines; reparses to the same config.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "task = {}", self.task.name());
        let _ = writeln!(s, "model = {}", self.model.name());
        let _ = writeln!(s, "env_layers = {}", self.env_layers);
        let _ = writeln!(s, "env_dim = {}", self.env_dim);
        let _ = writeln!(s, "env_agg = {}", agg_name(self.env_agg));
        let _ = writeln!(s, "act_layers = {}", self.act_layers);
        let _ = writeln!(s, "act_dim = {}", self.act_dim);
        let _ = writeln!(s, "act_agg = {}", agg_name(self.act_agg));
        let _ = writeln!(s, "encoder_layers = {}", self.encoder_layers);
        let _ = writeln!(s, "decoder_layers = {}", self.decoder_layers);
        let _ = writeln!(s, "dropout = {}", self.dropout);
        let _ = writeln!(s, "lr = {}", self.lr);
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(
            s,
            "temp = {}",
            match self.temp {
                TempKind::Learned => "learned",
                TempKind::Fixed => "fixed",
            }
        );
        let _ = writeln!(s, "tau = {}", self.tau);
        let _ = writeln!(s, "tau0 = {}", self.tau0);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "eval_seeds = {}", self.eval_seeds);
        let _ = writeln!(s, "eval_every = {}", self.eval_every);
        let _ = writeln!(s, "train_replicas = {}", self.train_replicas);
        let _ = writeln!(
            s,
            "lr_schedule = {}",
            match self.lr_schedule {
                LrSchedule::Constant => "constant",
                LrSchedule::Cosine => "cosine",
            }
        );
        let _ = writeln!(s, "grad_clip = {}", self.grad_clip);
        s
    }
}

fn agg_name(a: Aggregation) -> &'static str {
    match a {
        Aggregation::Sum => "sum",
        Aggregation::Mean => "mean",
        Aggregation::Gcn => "gcn",
    }
}

/// One epoch of the training record.
#[derive(Clone, Debug)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_loss: f64,
    /// Validation metric (carried forward between evaluation points).
    pub val_metric: f64,
    pub test_metric: f64,
    /// Per-layer kept-arc ratio from the last training batch of the epoch.
    pub retention: Vec<f64>,
    pub wall_seconds: f64,
}

/// Full training record.
#[derive(Clone, Debug, Default)]
pub struct MetricsLog {
    pub rows: Vec<EpochRow>,
    pub best_epoch: usize,
    pub best_val: f64,
    pub test_at_best: f64,
    /// Standard error of the test metric across evaluation streams at the
    /// best-validation point.
    pub test_at_best_stderr: f64,
    /// Total inverse-temperature floor clamps seen while training.
    pub floor_hits: usize,
}

impl MetricsLog {
    /// CSV with columns `epoch,train_loss,val_metric,test_metric,
    /// ratio_layer_0..L-1`.
    pub fn to_csv(&self) -> String {
        let layers = self.rows.first().map_or(0, |r| r.retention.len());
        let mut s = String::from("epoch,train_loss,val_metric,test_metric");
        for l in 0..layers {
            let _ = write!(s, ",ratio_layer_{l}");
        }
        s.push('\n');
        for r in &self.rows {
            let _ = write!(
                s,
                "{},{},{},{}",
                r.epoch, r.train_loss, r.val_metric, r.test_metric
            );
            for v in &r.retention {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }
}

/// A batch with its supervision, ready for forward passes.
struct Prepared {
    batch: Batch,
    /// `[num_graphs, 5]` regression targets.
    targets: Option<Tensor>,
    /// Class labels, one per graph.
    labels: Option<Vec<u32>>,
}

fn prepare(task: Task, samples: &[&Sample]) -> Result<Prepared> {
    if samples.is_empty() {
        return Err(Error::Invalid("cannot batch zero samples".into()));
    }
    let graphs: Vec<&Graph> = samples.iter().map(|s| &s.graph).collect();
    let batch = Graph::disjoint_union(&graphs)?;
    match task {
        Task::RootNeighbors => {
            let mut rows = Vec::with_capacity(samples.len() * 5);
            for s in samples {
                let t = s.target.as_ref().ok_or_else(|| {
                    Error::Config("sample has no regression target; wrong task?".into())
                })?;
                rows.extend_from_slice(t);
            }
            let dim = rows.len() / samples.len();
            Ok(Prepared {
                batch,
                targets: Some(Tensor::from_vec(&[samples.len(), dim], rows)?),
                labels: None,
            })
        }
        Task::Cycles => {
            let labels = samples
                .iter()
                .map(|s| {
                    s.label
                        .ok_or_else(|| Error::Config("sample has no label; wrong task?".into()))
                })
                .collect::<Result<Vec<u32>>>()?;
            Ok(Prepared {
                batch,
                targets: None,
                labels: Some(labels),
            })
        }
    }
}

fn task_loss(task: Task, preds: &Tensor, prepared: &Prepared) -> Result<Tensor> {
    match task {
        Task::RootNeighbors => {
            let t = prepared.targets.as_ref().expect("prepared regression batch");
            preds
                .sub(t)?
                .abs()?
                .sum()?
                .scale(1.0 / preds.numel() as f64)
        }
        Task::Cycles => preds.cross_entropy(prepared.labels.as_ref().expect("prepared labels")),
    }
}

/// Mean absolute error between prediction and target rows.
pub fn regression_mae(preds: &Tensor, targets: &Tensor) -> Result<f64> {
    if preds.shape() != targets.shape() {
        return Err(Error::Shape(format!(
            "predictions {:?} vs targets {:?}",
            preds.shape(),
            targets.shape()
        )));
    }
    let n = preds.numel();
    let sum: f64 = preds
        .data()
        .iter()
        .zip(targets.data())
        .map(|(p, t)| (p - t).abs())
        .sum();
    Ok(sum / n as f64)
}

/// Fraction of rows whose argmax equals the label.
pub fn classification_accuracy(preds: &Tensor, labels: &[u32]) -> Result<f64> {
    if preds.rows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} prediction rows vs {} labels",
            preds.rows(),
            labels.len()
        )));
    }
    let cols = preds.cols();
    let mut correct = 0usize;
    for (r, &lab) in labels.iter().enumerate() {
        let row = &preds.data()[r * cols..(r + 1) * cols];
        let mut best = 0;
        for j in 1..cols {
            if row[j] > row[best] {
                best = j;
            }
        }
        if best == lab as usize {
            correct += 1;
        }
    }
    Ok(correct as f64 / labels.len() as f64)
}

fn metric_value(task: Task, preds: &Tensor, prepared: &Prepared) -> Result<f64> {
    match task {
        Task::RootNeighbors => {
            regression_mae(preds, prepared.targets.as_ref().expect("targets"))
        }
        Task::Cycles => {
            classification_accuracy(preds, prepared.labels.as_ref().expect("labels"))
        }
    }
}

/// Metric over prepared data under hard-sampled actions, averaged over the
/// configured evaluation streams. Returns `(mean, standard error)`.
fn evaluate_prepared(
    cfg: &RunConfig,
    model: &CoGnnModel,
    prepared: &Prepared,
) -> Result<(f64, f64)> {
    // Baseline forwards ignore the stream entirely, so one pass suffices.
    let runs = if model.spec.family == Family::Baseline {
        1
    } else {
        cfg.eval_seeds
    };
    let mut vals = Vec::with_capacity(runs);
    for i in 0..runs {
        let mut rng = stream(cfg.seed, &format!("eval/{i}"));
        let tape = Tape::new();
        let out = model.forward(
            &tape,
            &prepared.batch,
            ActionMode::Sample(&mut rng),
            false,
            None,
        )?;
        vals.push(metric_value(cfg.task, &out.preds, prepared)?);
    }
    Ok(mean_and_stderr(&vals))
}

fn mean_and_stderr(vals: &[f64]) -> (f64, f64) {
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    if vals.len() < 2 {
        return (mean, 0.0);
    }
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Evaluate the regression metric (MAE) with the standard protocol.
pub fn evaluate_mae(
    cfg: &RunConfig,
    model: &CoGnnModel,
    samples: &[&Sample],
) -> Result<(f64, f64)> {
    if cfg.task != Task::RootNeighbors {
        return Err(Error::Config("MAE evaluation needs a regression task".into()));
    }
    evaluate_prepared(cfg, model, &prepare(cfg.task, samples)?)
}

/// Evaluate classification accuracy with the standard protocol.
pub fn evaluate_accuracy(
    cfg: &RunConfig,
    model: &CoGnnModel,
    samples: &[&Sample],
) -> Result<(f64, f64)> {
    if cfg.task != Task::Cycles {
        return Err(Error::Config(
            "accuracy evaluation needs a classification task".into(),
        ));
    }
    evaluate_prepared(cfg, model, &prepare(cfg.task, samples)?)
}

/// Task-appropriate metric for this config.
pub fn evaluate(cfg: &RunConfig, model: &CoGnnModel, samples: &[&Sample]) -> Result<(f64, f64)> {
    evaluate_prepared(cfg, model, &prepare(cfg.task, samples)?)
}

/// Scale all gradients by `cap / norm` when the global L2 norm exceeds the
/// cap. `cap = 0` disables clipping.
fn clip_global_norm(named: &mut BTreeMap<String, Tensor>, cap: f64) -> Result<()> {
    if cap <= 0.0 || named.is_empty() {
        return Ok(());
    }
    let sq: f64 = named
        .values()
        .map(|g| g.data().iter().map(|x| x * x).sum::<f64>())
        .sum();
    let norm = sq.sqrt();
    if norm <= cap {
        return Ok(());
    }
    let scale = cap / norm;
    for g in named.values_mut() {
        let scaled: Vec<f64> = g.data().iter().map(|x| x * scale).collect();
        *g = Tensor::from_vec(g.shape(), scaled)?;
    }
    Ok(())
}

/// Train a model from scratch on the samples' train split, tracking the
/// validation metric and returning the parameters from the best-validation
/// epoch. Bit-deterministic in the config.
pub fn train(cfg: &RunConfig, samples: &[Sample]) -> Result<(CoGnnModel, MetricsLog)> {
    cfg.validate()?;
    let spec = cfg.model_spec();
    let mut model = CoGnnModel::build(spec, &mut stream(cfg.seed, "init"))?;

    let base_train = split_of(samples, Split::Train);
    // Repeat the split in whole-split order so fixed-size chunks keep the
    // same graph composition in every replica.
    let train_refs: Vec<&Sample> = (0..cfg.train_replicas)
        .flat_map(|_| base_train.iter().copied())
        .collect();
    let valid_refs = split_of(samples, Split::Valid);
    let test_refs = split_of(samples, Split::Test);
    if train_refs.is_empty() || valid_refs.is_empty() || test_refs.is_empty() {
        return Err(Error::Invalid(
            "training needs non-empty train/valid/test splits".into(),
        ));
    }
    let chunk = if cfg.batch_size == 0 {
        train_refs.len()
    } else {
        cfg.batch_size
    };
    let train_batches: Vec<Prepared> = train_refs
        .chunks(chunk)
        .map(|c| prepare(cfg.task, c))
        .collect::<Result<_>>()?;
    let valid_prepared = prepare(cfg.task, &valid_refs)?;
    let test_prepared = prepare(cfg.task, &test_refs)?;
    let total_train_graphs: usize = train_batches.iter().map(|b| b.batch.num_graphs).sum();

    let mut adam = AdamState::new(cfg.lr);
    let mut gumbel = stream(cfg.seed, "gumbel");
    let mut dropout = stream(cfg.seed, "dropout");

    let mut log = MetricsLog {
        best_val: if cfg.task.higher_is_better() {
            f64::NEG_INFINITY
        } else {
            f64::INFINITY
        },
        ..MetricsLog::default()
    };
    let mut best_snapshot = model.snapshot();
    let (mut cur_val, mut cur_test) = (f64::NAN, f64::NAN);

    for epoch in 0..cfg.epochs {
        let t0 = Instant::now();
        adam.lr = match cfg.lr_schedule {
            LrSchedule::Constant => cfg.lr,
            // Half-cosine from lr down to 0 over the run.
            LrSchedule::Cosine => {
                let frac = epoch as f64 / cfg.epochs.max(1) as f64;
                cfg.lr * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
            }
        };
        let mut epoch_loss = 0.0;
        let mut retention: Vec<f64> = Vec::new();
        for prepared in &train_batches {
            let tape = Tape::new();
            let out = model.forward(
                &tape,
                &prepared.batch,
                ActionMode::Sample(&mut gumbel),
                true,
                Some(&mut dropout),
            )?;
            let loss = task_loss(cfg.task, &out.preds, prepared)?;
            let lv = loss.data()[0];
            if !lv.is_finite() {
                return Err(Error::Diverged { epoch, loss: lv });
            }
            epoch_loss += lv * prepared.batch.num_graphs as f64;
            let grads = loss.backward()?;
            let mut named = out.binds.named_grads(&grads);
            clip_global_norm(&mut named, cfg.grad_clip)?;
            adam.step(&mut model.params_mut(), &named)?;
            retention = out.layers.iter().map(|f| f.retention).collect();
            log.floor_hits += out.layers.iter().map(|f| f.floor_hits).sum::<usize>();
        }
        epoch_loss /= total_train_graphs as f64;

        if epoch % cfg.eval_every == 0 || epoch + 1 == cfg.epochs {
            let (val, _) = evaluate_prepared(cfg, &model, &valid_prepared)?;
            let (test, test_se) = evaluate_prepared(cfg, &model, &test_prepared)?;
            (cur_val, cur_test) = (val, test);
            let improved = if cfg.task.higher_is_better() {
                val > log.best_val
            } else {
                val < log.best_val
            };
            if improved {
                log.best_val = val;
                log.best_epoch = epoch;
                log.test_at_best = test;
                log.test_at_best_stderr = test_se;
                best_snapshot = model.snapshot();
            }
        }

        log.rows.push(EpochRow {
            epoch,
            train_loss: epoch_loss,
            val_metric: cur_val,
            test_metric: cur_test,
            retention,
            wall_seconds: t0.elapsed().as_secs_f64(),
        });
    }

    model.restore(&best_snapshot)?;
    Ok((model, log))
}

// ---------------------------------------------------------------------------
// Instrumentation
// ---------------------------------------------------------------------------

/// Per-layer kept-arc ratio under hard sampling, averaged over the
/// configured evaluation streams.
pub fn edge_retention_ratio(
    cfg: &RunConfig,
    model: &CoGnnModel,
    g: &Graph,
) -> Result<Vec<f64>> {
    let batch = Batch::single(g)?;
    let runs = cfg.eval_seeds.max(1);
    let mut acc = vec![0.0; model.env.len()];
    for i in 0..runs {
        let mut rng = stream(cfg.seed, &format!("eval/{i}"));
        let tape = Tape::new();
        let out = model.forward(&tape, &batch, ActionMode::Sample(&mut rng), false, None)?;
        for (a, f) in acc.iter_mut().zip(&out.layers) {
            *a += f.retention;
        }
    }
    for a in &mut acc {
        *a /= runs as f64;
    }
    Ok(acc)
}

/// Count (correct, total) over the arcs pointing into `roots`: an arc is
/// correct when it is kept exactly if its source has degree 6.
fn root_arc_counts(g: &Graph, roots: &[u32], gates: &[f64]) -> (usize, usize) {
    let mut correct = 0;
    let mut total = 0;
    for &r in roots {
        for a in g.arcs_into(r as usize) {
            let src = g.arc_src()[a] as usize;
            let kept = gates[a] == 1.0;
            let should_keep = g.degree(src) == 6;
            if kept == should_keep {
                correct += 1;
            }
            total += 1;
        }
    }
    (correct, total)
}

/// Percentage of root-incident arcs the action network gates correctly
/// (kept exactly when the sender has degree 6), under hard sampling
/// averaged over the evaluation streams. Requires a single-layer model.
pub fn action_edge_accuracy(
    cfg: &RunConfig,
    model: &CoGnnModel,
    samples: &[&Sample],
) -> Result<f64> {
    if model.env.len() != 1 {
        return Err(Error::Config(format!(
            "edge accuracy is defined for single-layer models, got {} layers",
            model.env.len()
        )));
    }
    if cfg.task != Task::RootNeighbors {
        return Err(Error::Config("edge accuracy needs the root task".into()));
    }
    let prepared = prepare(cfg.task, samples)?;
    let g = &prepared.batch.graph;
    let roots = prepared.batch.roots();
    let mut fracs = Vec::with_capacity(cfg.eval_seeds);
    for i in 0..cfg.eval_seeds {
        let mut rng = stream(cfg.seed, &format!("eval/{i}"));
        let tape = Tape::new();
        let out = model.forward(
            &tape,
            &prepared.batch,
            ActionMode::Sample(&mut rng),
            false,
            None,
        )?;
        let (correct, total) = root_arc_counts(g, roots, &out.layers[0].gates);
        fracs.push(correct as f64 / total as f64);
    }
    Ok(100.0 * fracs.iter().sum::<f64>() / fracs.len() as f64)
}

/// Write a per-node action trace CSV (`layer,node,action,p_S,p_L,p_B,p_I,
/// tau`, one row per layer and node) and the kept-arc list
/// (`layer,src,dst`) to a sibling `.edges.csv` file.
pub fn record_trace(
    model: &CoGnnModel,
    g: &Graph,
    mode: ActionMode,
    out: &Path,
) -> Result<()> {
    let batch = Batch::single(g)?;
    let tape = Tape::new();
    let fwd = model.forward(&tape, &batch, mode, false, None)?;

    let mut trace = String::from("layer,node,action,p_S,p_L,p_B,p_I,tau\n");
    let mut edges = String::from("layer,src,dst\n");
    for (l, field) in fwd.layers.iter().enumerate() {
        for v in 0..g.num_nodes() {
            let p = &field.probs[v * 4..(v + 1) * 4];
            let _ = writeln!(
                trace,
                "{l},{v},{},{},{},{},{},{}",
                field.actions[v].letter(),
                p[0],
                p[1],
                p[2],
                p[3],
                field.tau[v]
            );
        }
        for (a, &gate) in field.gates.iter().enumerate() {
            if gate != 0.0 {
                let _ = writeln!(edges, "{l},{},{}", g.arc_src()[a], g.arc_dst()[a]);
            }
        }
    }
    let mut f = std::fs::File::create(out)?;
    f.write_all(trace.as_bytes())?;
    let edge_path = out.with_extension("edges.csv");
    let mut f = std::fs::File::create(edge_path)?;
    f.write_all(edges.as_bytes())?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Cost accounting and benchmarks
// ---------------------------------------------------------------------------

/// Closed-form multiply-accumulate counts for one gated layer, next to a
/// wall-clock measurement of a full forward pass.
#[derive(Clone, Debug)]
pub struct CostReport {
    /// Action-stack MACs per cooperative layer:
    /// `L_pi * d_pi * (|E| * d_pi + |V|)`.
    pub action_macs: u64,
    /// Environment MACs per layer: `d_env * (|E| * d_env + |V|)`.
    pub env_macs: u64,
    /// All cooperative layers together.
    pub total_macs: u64,
    /// Measured wall-clock of one full forward pass, seconds.
    pub forward_seconds: f64,
}

/// Estimate per-layer cost on a concrete graph.
pub fn layer_cost_estimate(cfg: &RunConfig, g: &Graph) -> Result<CostReport> {
    let (v, e) = (g.num_nodes() as u64, g.num_edges() as u64);
    let (d_pi, l_pi, d_env) = (
        cfg.act_dim as u64,
        cfg.act_layers as u64,
        cfg.env_dim as u64,
    );
    let action_macs = if cfg.model == ModelKind::Cognn {
        l_pi * d_pi * (e * d_pi + v)
    } else {
        0
    };
    let env_macs = d_env * (e * d_env + v);
    let total_macs = cfg.env_layers as u64 * (action_macs + env_macs);

    let model = CoGnnModel::build(cfg.model_spec(), &mut stream(cfg.seed, "init"))?;
    let batch = Batch::single(g)?;
    let mut rng = stream(cfg.seed, "bench");
    let t0 = Instant::now();
    let tape = Tape::new();
    model.forward(&tape, &batch, ActionMode::Sample(&mut rng), false, None)?;
    let forward_seconds = t0.elapsed().as_secs_f64();
    Ok(CostReport {
        action_macs,
        env_macs,
        total_macs,
        forward_seconds,
    })
}

/// One measured point of the scaling benchmark.
#[derive(Clone, Debug)]
pub struct BenchPoint {
    pub edges: usize,
    pub nodes: usize,
    /// Best-of-3 wall-clock of a forward pass, seconds.
    pub seconds: f64,
}

/// Least-squares line fit; returns `(slope, intercept, r_squared)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let e = y - (slope * x + intercept);
            e * e
        })
        .sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    (slope, intercept, r2)
}

/// Forward-pass wall-clock at the requested edge counts (nodes scale as
/// `|E| / 4`), with a linear fit of seconds against edges.
pub fn bench_scaling(cfg: &RunConfig, sizes: &[usize]) -> Result<(Vec<BenchPoint>, f64)> {
    if sizes.len() < 2 {
        return Err(Error::Invalid("need at least two benchmark sizes".into()));
    }
    let spec = cfg.model_spec();
    let model = CoGnnModel::build(spec.clone(), &mut stream(cfg.seed, "init"))?;
    let mut points = Vec::with_capacity(sizes.len());
    for &e in sizes {
        let n = (e / 4).max(4);
        let mut rng = stream(cfg.seed, "bench");
        let g = random_graph(&mut rng, n, e, spec.in_dim)?;
        let batch = Batch::single(&g)?;
        let mut best = f64::INFINITY;
        for _ in 0..3 {
            let mut gum = stream(cfg.seed, "bench");
            let tape = Tape::new();
            let t0 = Instant::now();
            model.forward(&tape, &batch, ActionMode::Sample(&mut gum), false, None)?;
            best = best.min(t0.elapsed().as_secs_f64());
        }
        points.push(BenchPoint {
            edges: e,
            nodes: n,
            seconds: best,
        });
    }
    let xs: Vec<f64> = points.iter().map(|p| p.edges as f64).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.seconds).collect();
    let (_, _, r2) = linear_fit(&xs, &ys);
    Ok((points, r2))
}
