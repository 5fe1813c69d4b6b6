//! Loss, optimizer, early-stopped training and stratified cross-validation.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gnn::{forward_on_context, GnnError, GraphContext, OperatorKind, OperatorParams};
use crate::graph::CountyGraph;
use crate::tensor::{seeded_rng, sigmoid, Tape, Tensor, TensorError, Var};

/// Lower clamp applied to probabilities before taking logarithms.
pub const PROB_CLAMP: f64 = 1e-12;
/// Minimum decrease of the validation loss that counts as an improvement.
pub const MIN_IMPROVEMENT: f64 = 1e-6;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("no negative labels to hold out")]
    NoNegatives,
    #[error("class {class} has {count} members, fewer than k={k}")]
    TooFewPerClass { class: u8, count: usize, k: usize },
    #[error("k must be at least 2, got {0}")]
    InvalidK(usize),
    #[error("mask selects no nodes")]
    EmptyMask,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("fold {fold} out of range for {k} folds")]
    InvalidFold { fold: usize, k: usize },
    #[error(transparent)]
    Gnn(#[from] GnnError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        TrainError::Gnn(e.into())
    }
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub learning_rate: f64,
    pub threshold: f64,
    pub k_folds: usize,
    pub app_holdout_frac: f64,
    pub beta: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 2000,
            patience: 50,
            learning_rate: 0.01,
            threshold: 0.5,
            k_folds: 5,
            app_holdout_frac: 0.20,
            beta: 1.0 / 3.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if self.max_epochs < 1 {
            return fail("max_epochs must be at least 1");
        }
        if self.patience < 1 {
            return fail("patience must be at least 1");
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return fail("threshold must lie strictly between 0 and 1");
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return fail("beta must be positive");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be a non-negative number");
        }
        if !(0.0..1.0).contains(&self.app_holdout_frac) {
            return fail("app_holdout_frac must lie in [0, 1)");
        }
        if self.k_folds < 2 {
            return Err(TrainError::InvalidK(self.k_folds));
        }
        Ok(())
    }
}

/// Application holdout plus `k` disjoint folds over the remaining nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub application: Vec<usize>,
    pub folds: Vec<Vec<usize>>,
}

/// Node roles for one cross-validation fold.
#[derive(Clone, Debug, PartialEq)]
pub struct FoldRoles {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    /// Test = fold `i`, validation = fold `(i + 1) mod k`, train = the rest.
    pub fn roles(&self, fold: usize) -> Result<FoldRoles> {
        let k = self.k();
        if fold >= k {
            return Err(TrainError::InvalidFold { fold, k });
        }
        let val = (fold + 1) % k;
        let mut train: Vec<usize> = (0..k)
            .filter(|&f| f != fold && f != val)
            .flat_map(|f| self.folds[f].iter().copied())
            .collect();
        train.sort_unstable();
        Ok(FoldRoles {
            train,
            validation: self.folds[val].clone(),
            test: self.folds[fold].clone(),
        })
    }
}

/// Seeded uniform sample of `round(frac * negatives)` negative nodes, sorted.
pub fn holdout_application_set(labels: &[u8], frac: f64, seed: u64) -> Result<Vec<usize>> {
    let mut negatives: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 0).collect();
    if negatives.is_empty() {
        return Err(TrainError::NoNegatives);
    }
    if !(0.0..=1.0).contains(&frac) {
        return Err(TrainError::InvalidConfig(format!(
            "holdout fraction {frac} outside [0, 1]"
        )));
    }
    let take = (frac * negatives.len() as f64).round() as usize;
    negatives.shuffle(&mut seeded_rng(seed));
    let mut held: Vec<usize> = negatives.into_iter().take(take).collect();
    held.sort_unstable();
    Ok(held)
}

/// Stratified folds over all nodes.
pub fn stratified_kfold(labels: &[u8], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let ids: Vec<usize> = (0..labels.len()).collect();
    stratified_kfold_ids(labels, &ids, k, seed)
}

/// Stratified folds over `ids`: each class is shuffled and dealt round-robin,
/// continuing the deal position across classes so fold sizes stay balanced.
pub fn stratified_kfold_ids(
    labels: &[u8],
    ids: &[usize],
    k: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(TrainError::InvalidK(k));
    }
    let mut rng = seeded_rng(seed);
    let mut folds = vec![Vec::new(); k];
    let mut position = 0usize;
    for class in [1u8, 0u8] {
        let mut members: Vec<usize> = ids
            .iter()
            .copied()
            .filter(|&i| labels[i] == class)
            .collect();
        if members.len() < k {
            return Err(TrainError::TooFewPerClass {
                class,
                count: members.len(),
                k,
            });
        }
        members.shuffle(&mut rng);
        for id in members {
            folds[position % k].push(id);
            position += 1;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Holds out the application set, then stratifies the remainder.
pub fn make_split(labels: &[u8], config: &TrainConfig) -> Result<Split> {
    let application = holdout_application_set(labels, config.app_holdout_frac, config.seed)?;
    let held: std::collections::HashSet<usize> = application.iter().copied().collect();
    let rest: Vec<usize> = (0..labels.len()).filter(|i| !held.contains(i)).collect();
    let folds = stratified_kfold_ids(labels, &rest, config.k_folds, config.seed.wrapping_add(1))?;
    Ok(Split { application, folds })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub f_beta: f64,
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
}

impl Metrics {
    /// Column-wise arithmetic mean.
    pub fn mean(items: &[Metrics]) -> Metrics {
        let n = items.len().max(1) as f64;
        let avg = |f: fn(&Metrics) -> f64| items.iter().map(f).sum::<f64>() / n;
        Metrics {
            f_beta: avg(|m| m.f_beta),
            precision: avg(|m| m.precision),
            recall: avg(|m| m.recall),
            accuracy: avg(|m| m.accuracy),
        }
    }
}

/// `(1 + β²)·P·R / (β²·P + R)`, or 0 when the denominator is 0.
pub fn f_beta(precision: f64, recall: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    let denom = b2 * precision + recall;
    if denom == 0.0 {
        0.0
    } else {
        (1.0 + b2) * precision * recall / denom
    }
}

pub fn classification_metrics(
    probs: &[f64],
    labels: &[u8],
    mask: &[usize],
    threshold: f64,
    beta: f64,
) -> Result<Metrics> {
    if mask.is_empty() {
        return Err(TrainError::EmptyMask);
    }
    if probs.len() != labels.len() {
        return Err(TrainError::ShapeMismatch(format!(
            "{} probabilities for {} labels",
            probs.len(),
            labels.len()
        )));
    }
    let (mut tp, mut fp, mut fneg, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for &i in mask {
        match (probs[i] >= threshold, labels[i] == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => tn += 1,
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fneg);
    Ok(Metrics {
        f_beta: f_beta(precision, recall, beta),
        precision,
        recall,
        accuracy: ratio(tp + tn, mask.len()),
    })
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Mean binary cross-entropy over the masked nodes.
pub fn bce_loss(probs: &[f64], labels: &[u8], mask: &[usize]) -> Result<f64> {
    if mask.is_empty() {
        return Err(TrainError::EmptyMask);
    }
    let total: f64 = mask
        .iter()
        .map(|&i| {
            let p = clamp_prob(probs[i]);
            if labels[i] == 1 {
                p.ln()
            } else {
                (1.0 - p).ln()
            }
        })
        .sum();
    Ok(-total / mask.len() as f64)
}

/// The same loss as [`bce_loss`], recorded on a tape from logits.
pub fn bce_on_tape(tape: &mut Tape, logits: Var, labels: &[u8], mask: &[usize]) -> Result<Var> {
    if mask.is_empty() {
        return Err(TrainError::EmptyMask);
    }
    let z = tape.gather_rows(logits, Arc::from(mask.to_vec()))?;
    let p = tape.sigmoid(z)?;
    let p = tape.clamp(p, PROB_CLAMP, 1.0 - PROB_CLAMP)?;
    let log_p = tape.log(p)?;
    let neg = tape.neg(p)?;
    let one_minus = tape.add_scalar(neg, 1.0)?;
    let log_q = tape.log(one_minus)?;
    let y = Tensor::from_col(mask.iter().map(|&i| f64::from(labels[i])).collect());
    let not_y = Tensor::from_col(y.data().iter().map(|v| 1.0 - v).collect());
    let y = tape.constant(y);
    let not_y = tape.constant(not_y);
    let a = tape.mul(log_p, y)?;
    let b = tape.mul(log_q, not_y)?;
    let ll = tape.add(a, b)?;
    let total = tape.sum(ll)?;
    Ok(tape.scale(total, -1.0 / mask.len() as f64)?)
}

/// First and second moment estimates for every parameter tensor.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

/// One bias-corrected adaptive-moment update.
pub fn adam_step(
    params: &mut OperatorParams,
    grads: &BTreeMap<String, Tensor>,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    for (name, g) in grads {
        let p = params.tensors.get(name).ok_or_else(|| {
            TrainError::ShapeMismatch(format!("gradient for unknown parameter {name}"))
        })?;
        if p.shape() != g.shape() {
            return Err(TrainError::ShapeMismatch(format!(
                "{name}: parameter {:?}, gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for (name, g) in grads {
        let p = params.tensors.get_mut(name).expect("checked above");
        let (rows, cols) = g.shape();
        let m = state
            .m
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(rows, cols));
        let v = state
            .v
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(rows, cols));
        for i in 0..g.len() {
            let gi = g.data()[i];
            let mi = ADAM_BETA1 * m.data()[i] + (1.0 - ADAM_BETA1) * gi;
            let vi = ADAM_BETA2 * v.data()[i] + (1.0 - ADAM_BETA2) * gi * gi;
            m.data_mut()[i] = mi;
            v.data_mut()[i] = vi;
            let update = lr * (mi / c1) / ((vi / c2).sqrt() + ADAM_EPS);
            p.data_mut()[i] -= update;
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Patience counter over validation losses.
#[derive(Clone, Debug)]
pub struct EarlyStopper {
    patience: usize,
    best: f64,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    /// An epoch improves when its loss is below the best so far by at least
    /// [`MIN_IMPROVEMENT`]; training stops once `patience` consecutive epochs
    /// fail to improve.
    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> StopDecision {
        if val_loss < self.best - MIN_IMPROVEMENT
            || (self.best.is_infinite() && val_loss.is_finite())
        {
            self.best = val_loss;
            self.best_epoch = epoch;
            self.stale = 0;
            StopDecision::Improved
        } else {
            self.stale += 1;
            if self.stale >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::Continue
            }
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub metrics: Metrics,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the best validation epoch.
    pub params: OperatorParams,
    pub metrics: FoldMetrics,
    pub history: Vec<EpochRecord>,
}

/// Trains on the fold's training nodes, early-stops on its validation nodes,
/// restores the best parameters and scores the test nodes.
pub fn train_one(
    params: OperatorParams,
    graph: &CountyGraph,
    split: &Split,
    fold: usize,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let ctx = GraphContext::new(graph)?;
    train_on_context(params, &ctx, graph.labels(), split, fold, config)
}

pub fn train_on_context(
    mut params: OperatorParams,
    ctx: &GraphContext,
    labels: &[u8],
    split: &Split,
    fold: usize,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let roles = split.roles(fold)?;
    if roles.train.is_empty() || roles.validation.is_empty() || roles.test.is_empty() {
        return Err(TrainError::EmptyMask);
    }
    let mut stopper = EarlyStopper::new(config.patience);
    let mut adam = AdamState::default();
    let mut best = params.clone();
    let mut history = Vec::new();

    for epoch in 1..=config.max_epochs {
        let mut fwd = forward_on_context(&params, ctx, ctx.node_features(), false)?;
        let probs: Vec<f64> = fwd
            .tape
            .value(fwd.logits)
            .data()
            .iter()
            .map(|&z| sigmoid(z))
            .collect();
        let val_loss = bce_loss(&probs, labels, &roles.validation)?;
        let loss = bce_on_tape(&mut fwd.tape, fwd.logits, labels, &roles.train)?;
        let train_loss = fwd.tape.value(loss).data()[0];
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        match stopper.observe(epoch, val_loss) {
            StopDecision::Improved => best.clone_from(&params),
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
        if epoch == config.max_epochs {
            break;
        }
        let grads = fwd.tape.backward(loss)?;
        let named: BTreeMap<String, Tensor> = fwd
            .params
            .iter()
            .map(|(name, &var)| (name.clone(), grads.wrt(&fwd.tape, var)))
            .collect();
        adam_step(&mut params, &named, &mut adam, config.learning_rate)?;
    }

    let fwd = forward_on_context(&best, ctx, ctx.node_features(), false)?;
    let probs: Vec<f64> = fwd.logit_values().iter().map(|&z| sigmoid(z)).collect();
    let metrics =
        classification_metrics(&probs, labels, &roles.test, config.threshold, config.beta)?;
    Ok(TrainOutcome {
        params: best,
        metrics: FoldMetrics {
            fold,
            metrics,
            epochs_run: history.len(),
            best_epoch: stopper.best_epoch(),
            best_val_loss: stopper.best(),
        },
        history,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub kind: OperatorKind,
    /// Mean of the per-fold test metrics.
    pub mean: Metrics,
    pub folds: Vec<FoldMetrics>,
}

/// Runs every fold with a fresh initialization seeded `config.seed + fold`.
pub fn cross_validate(
    kind: OperatorKind,
    graph: &CountyGraph,
    split: &Split,
    config: &TrainConfig,
) -> Result<CvResult> {
    let ctx = GraphContext::new(graph)?;
    cross_validate_on_context(kind, &ctx, graph.labels(), split, config)
}

pub fn cross_validate_on_context(
    kind: OperatorKind,
    ctx: &GraphContext,
    labels: &[u8],
    split: &Split,
    config: &TrainConfig,
) -> Result<CvResult> {
    let folds = (0..split.k())
        .map(|fold| {
            let params = OperatorParams::init(
                kind,
                ctx.node_dim(),
                ctx.edge_dim(),
                config.seed.wrapping_add(fold as u64),
            )?;
            Ok(train_on_context(params, ctx, labels, split, fold, config)?.metrics)
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = Metrics::mean(&folds.iter().map(|f| f.metrics).collect::<Vec<_>>());
    Ok(CvResult { kind, mean, folds })
}

/// The model used on the application set: the first cross-validation fold,
/// retrained with the same seed, so it equals the fold-0 model of
/// [`cross_validate`] bit for bit.
pub fn deployment_model(
    kind: OperatorKind,
    graph: &CountyGraph,
    split: &Split,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let params = OperatorParams::init(kind, graph.node_dim(), graph.edge_dim(), config.seed)?;
    train_one(params, graph, split, 0, config)
}

/// Writes `epoch,train_loss,val_loss` rows.
pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let io = |source| TrainError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(out, "epoch,train_loss,val_loss").map_err(io)?;
    for r in history {
        writeln!(out, "{},{},{}", r.epoch, r.train_loss, r.val_loss).map_err(io)?;
    }
    out.flush().map_err(io)
}
