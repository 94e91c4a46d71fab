//! Losses, the Adam optimizer, early stopping, metrics and the training loop
//! with learning-rate grid search.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::model::{Model, ModelConfig, SampleInput, Task};
use crate::tensor::{Element, Grads, ParamStore, Tape, Var};

/// Mean BCE for the binary task, mean squared error for traits. Targets must
/// lie in [0, 1].
pub fn compute_loss<T: Element>(tape: &mut Tape<'_, T>, pred: Var, target: &[T], task: &Task) -> Result<Var> {
    if let Some(t) = target.iter().find(|t| !(t.as_f64() >= 0.0 && t.as_f64() <= 1.0)) {
        return Err(Error::Input(format!("target {t} is outside [0, 1]")));
    }
    match task {
        Task::Binary { .. } => tape.bce(pred, target),
        Task::Traits { .. } => tape.mse(pred, target),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Clone, Debug)]
pub struct AdamState<T: Element = f32> {
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    step: u32,
}

impl<T: Element> AdamState<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        let zeros: Vec<Vec<T>> = store.ids().map(|id| vec![T::zero(); store.get(id).len()]).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn steps(&self) -> u32 {
        self.step
    }
}

/// One bias-corrected Adam update. Parameters without a gradient receive a
/// zero gradient, so their moments still decay.
pub fn adam_step<T: Element>(store: &mut ParamStore<T>, grads: &Grads<T>, state: &mut AdamState<T>, cfg: &AdamConfig) -> Result<()> {
    if grads.len() != store.len() || state.m.len() != store.len() {
        return Err(dim_err!(
            "adam: {} params, {} gradients, {} moment slots",
            store.len(),
            grads.len(),
            state.m.len()
        ));
    }
    if !grads.is_finite() {
        return Err(Error::Numeric("non-finite gradient in optimizer step".into()));
    }
    state.step += 1;
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let c1 = T::one() - T::lit(cfg.beta1.powi(state.step as i32));
    let c2 = T::one() - T::lit(cfg.beta2.powi(state.step as i32));
    let (lr, eps) = (T::lit(cfg.lr), T::lit(cfg.eps));
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let i = id.index();
        let g = grads.get(id);
        let param = store.get_mut(id).data_mut();
        for (k, w) in param.iter_mut().enumerate() {
            let gk = g.map_or(T::zero(), |g| g[k]);
            let m = &mut state.m[i][k];
            let v = &mut state.v[i][k];
            *m = b1 * *m + (T::one() - b1) * gk;
            *v = b2 * *v + (T::one() - b2) * gk * gk;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

/// Stop iff each of the last `patience` epoch-to-epoch changes in
/// validation loss is strictly positive.
pub fn early_stop_update(history: &[f64], patience: usize) -> StopDecision {
    if patience == 0 || history.len() <= patience {
        return StopDecision::Continue;
    }
    let tail = &history[history.len() - patience - 1..];
    if tail.windows(2).all(|w| w[1] - w[0] > 0.0) {
        StopDecision::Stop
    } else {
        StopDecision::Continue
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub accuracy: f64,
    pub f1: f64,
}

/// Accuracy and positive-class F1 with decisions `pred >= threshold`.
pub fn classification_metrics(preds: &[f64], labels: &[f64], threshold: f64) -> Result<Classification> {
    if preds.len() != labels.len() {
        return Err(dim_err!("{} predictions, {} labels", preds.len(), labels.len()));
    }
    if preds.is_empty() {
        return Err(Error::Input("no predictions to score".into()));
    }
    let (mut tp, mut fp, mut fneg, mut correct) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &y) in preds.iter().zip(labels) {
        let positive = if y == 1.0 {
            true
        } else if y == 0.0 {
            false
        } else {
            return Err(Error::Input(format!("binary label {y} is not 0 or 1")));
        };
        let decided = p >= threshold;
        match (decided, positive) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
        correct += usize::from(decided == positive);
    }
    let precision = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
    let recall = if tp + fneg > 0 { tp as f64 / (tp + fneg) as f64 } else { 0.0 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(Classification {
        accuracy: correct as f64 / preds.len() as f64,
        f1,
    })
}

/// Per-trait `1/N Σ (1 − |y − ŷ|)` over `N × T` rows.
pub fn mean_accuracy(preds: &[Vec<f64>], labels: &[Vec<f64>]) -> Result<Vec<f64>> {
    if preds.len() != labels.len() {
        return Err(dim_err!("{} prediction rows, {} label rows", preds.len(), labels.len()));
    }
    let Some(first) = preds.first() else {
        return Err(Error::Input("no predictions to score".into()));
    };
    let t = first.len();
    let mut sums = vec![0.0; t];
    for (p, y) in preds.iter().zip(labels) {
        if p.len() != t || y.len() != t {
            return Err(dim_err!("rows must all have {t} traits"));
        }
        for k in 0..t {
            sums[k] += 1.0 - (y[k] - p[k]).abs();
        }
    }
    let n = preds.len() as f64;
    Ok(sums.into_iter().map(|s| s / n).collect())
}

/// One labelled sample.
#[derive(Clone, Debug)]
pub struct Example<T: Element = f32> {
    pub id: String,
    pub input: SampleInput<T>,
    pub target: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraitScore {
    pub name: String,
    pub mean_accuracy: f64,
}

/// Task-appropriate scores for one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub samples: usize,
    pub loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f1: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub mean_accuracy: Vec<TraitScore>,
}

impl Metrics {
    /// The value model selection maximizes: accuracy, or the average of the
    /// per-trait mean accuracies.
    pub fn selection_score(&self) -> f64 {
        match self.accuracy {
            Some(a) => a,
            None => self.mean_accuracy.iter().map(|t| t.mean_accuracy).sum::<f64>() / self.mean_accuracy.len().max(1) as f64,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub predictions: Vec<Vec<f64>>,
    pub alphas: Vec<Option<Vec<f64>>>,
    pub metrics: Metrics,
}

fn target_as<T: Element>(target: &[f64]) -> Vec<T> {
    target.iter().map(|&v| T::lit(v)).collect()
}

/// Predict every example (in parallel, collected in order) and score.
pub fn evaluate<T: Element>(model: &Model<T>, examples: &[Example<T>]) -> Result<Evaluation> {
    if examples.is_empty() {
        return Err(Error::Input("cannot evaluate an empty set".into()));
    }
    let outputs = examples
        .par_iter()
        .map(|ex| {
            let mut tape = Tape::with_params(&model.store);
            let out = model.forward(&mut tape, &ex.input)?;
            let loss = compute_loss(&mut tape, out.prediction, &target_as::<T>(&ex.target), &model.config.task)?;
            let to64 = |v: Var| tape.value(v).data().iter().map(|x| x.as_f64()).collect::<Vec<f64>>();
            Ok((to64(out.prediction), out.alphas.map(to64), tape.value(loss).data()[0].as_f64()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut predictions = Vec::with_capacity(outputs.len());
    let mut alphas = Vec::with_capacity(outputs.len());
    let mut loss = 0.0;
    for (p, a, l) in outputs {
        predictions.push(p);
        alphas.push(a);
        loss += l;
    }
    loss /= examples.len() as f64;
    let labels: Vec<Vec<f64>> = examples.iter().map(|e| e.target.clone()).collect();
    let metrics = score(&model.config.task, &predictions, &labels, loss)?;
    Ok(Evaluation {
        predictions,
        alphas,
        metrics,
    })
}

pub fn score(task: &Task, predictions: &[Vec<f64>], labels: &[Vec<f64>], loss: f64) -> Result<Metrics> {
    let mut m = Metrics {
        samples: predictions.len(),
        loss,
        accuracy: None,
        f1: None,
        mean_accuracy: Vec::new(),
    };
    match task {
        Task::Binary { .. } => {
            let p: Vec<f64> = predictions.iter().map(|r| r[0]).collect();
            let y: Vec<f64> = labels.iter().map(|r| r[0]).collect();
            let c = classification_metrics(&p, &y, 0.5)?;
            m.accuracy = Some(c.accuracy);
            m.f1 = Some(c.f1);
        }
        Task::Traits { names } => {
            let values = mean_accuracy(predictions, labels)?;
            m.mean_accuracy = names
                .iter()
                .zip(values)
                .map(|(n, v)| TraitScore {
                    name: n.clone(),
                    mean_accuracy: v,
                })
                .collect();
        }
    }
    Ok(m)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub lr_grid: Vec<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 250,
            patience: 5,
            batch_size: 32,
            lr_grid: vec![1e-3],
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.lr_grid.is_empty() || self.lr_grid.iter().any(|lr| !(lr.is_finite() && *lr > 0.0)) {
            return Err(Error::Config("lr_grid needs positive finite learning rates".into()));
        }
        Ok(())
    }
}

/// A model plus its optimizer state.
pub struct Trainer<T: Element = f32> {
    pub model: Model<T>,
    pub adam: AdamState<T>,
    pub optimizer: AdamConfig,
}

impl<T: Element> Trainer<T> {
    pub fn new(model: Model<T>, optimizer: AdamConfig) -> Self {
        let adam = AdamState::new(&model.store);
        Trainer { model, adam, optimizer }
    }

    /// Mean loss and gradients over `batch`. Samples run in parallel on
    /// separate tapes; gradients are summed in batch order so the result
    /// does not depend on thread scheduling.
    pub fn batch_gradients(&self, batch: &[&Example<T>]) -> Result<(f64, Grads<T>)> {
        if batch.is_empty() {
            return Err(Error::Input("empty batch".into()));
        }
        let model = &self.model;
        let per_sample = batch
            .par_iter()
            .map(|ex| model.loss_and_grads(&ex.input, &target_as::<T>(&ex.target)))
            .collect::<Result<Vec<_>>>()?;
        let scale = T::one() / T::from_usize(batch.len());
        let mut total = Grads::empty(model.store.len());
        let mut loss = 0.0;
        for (l, g) in &per_sample {
            total.accumulate(g, scale);
            loss += l.as_f64();
        }
        Ok((loss / batch.len() as f64, total))
    }

    /// One optimizer step; returns the batch loss before the update.
    pub fn step(&mut self, batch: &[&Example<T>]) -> Result<f64> {
        let (loss, grads) = self.batch_gradients(batch)?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("training loss became {loss}")));
        }
        adam_step(&mut self.model.store, &grads, &mut self.adam, &self.optimizer)?;
        Ok(loss)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_score: f64,
    pub seconds: f64,
}

/// Result of one training run at a fixed learning rate.
#[derive(Clone, Debug)]
pub struct TrainOutcome<T: Element = f32> {
    pub lr: f64,
    /// Parameters from the epoch with the best validation score.
    pub best: Model<T>,
    pub best_epoch: usize,
    pub best_val: Metrics,
    pub history: Vec<EpochRecord>,
    pub stopped_early: bool,
}

/// Higher selection score wins; equal scores go to the lower loss. Full ties
/// keep the incumbent.
fn improves(candidate: &Metrics, incumbent: &Metrics) -> bool {
    let (a, b) = (candidate.selection_score(), incumbent.selection_score());
    a > b || (a == b && candidate.loss < incumbent.loss)
}

/// Train from a fresh initialization with the given learning rate. Epoch
/// order is shuffled by a generator seeded from `cfg.seed`; the best
/// validation score wins; ties go to the lower validation loss, then to the
/// earlier epoch.
pub fn fit<T: Element>(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    lr: f64,
    train: &[Example<T>],
    val: &[Example<T>],
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Input("training and validation sets must be non-empty".into()));
    }
    let mut trainer = Trainer::new(Model::new(model_cfg.clone(), cfg.seed)?, AdamConfig::with_lr(lr));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::new();
    let mut val_losses = Vec::new();
    let mut best: Option<(Model<T>, usize, Metrics)> = None;
    let mut stopped_early = false;
    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Example<T>> = chunk.iter().map(|&i| &train[i]).collect();
            loss_sum += trainer.step(&batch)? * batch.len() as f64;
        }
        let eval = evaluate(&trainer.model, val)?;
        let score = eval.metrics.selection_score();
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_loss: eval.metrics.loss,
            val_score: score,
            seconds: started.elapsed().as_secs_f64(),
        });
        if best.as_ref().is_none_or(|(_, _, m)| improves(&eval.metrics, m)) {
            best = Some((trainer.model.clone(), epoch, eval.metrics));
        }
        val_losses.push(history.last().map_or(0.0, |h| h.val_loss));
        if early_stop_update(&val_losses, cfg.patience) == StopDecision::Stop {
            stopped_early = true;
            break;
        }
    }
    let (best, best_epoch, best_val) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        lr,
        best,
        best_epoch,
        best_val,
        history,
        stopped_early,
    })
}

/// Exhaustive sweep over `cfg.lr_grid`. Runs are independent and may execute
/// in parallel; the winner is chosen as in [`fit`], the earliest grid entry
/// winning full ties.
pub fn grid_search<T: Element>(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    train: &[Example<T>],
    val: &[Example<T>],
) -> Result<(usize, Vec<TrainOutcome<T>>)> {
    cfg.validate()?;
    let runs = cfg
        .lr_grid
        .par_iter()
        .map(|&lr| fit(model_cfg, cfg, lr, train, val))
        .collect::<Result<Vec<_>>>()?;
    let mut winner = 0;
    for (i, r) in runs.iter().enumerate() {
        if improves(&r.best_val, &runs[winner].best_val) {
            winner = i;
        }
    }
    Ok((winner, runs))
}

/// Deterministic split of `examples` into train and validation parts: a
/// seeded shuffle, then the last `fraction` becomes validation.
pub fn split_validation<T: Element>(examples: Vec<Example<T>>, fraction: f64, seed: u64) -> Result<(Vec<Example<T>>, Vec<Example<T>>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("validation fraction {fraction} must lie in (0, 1)")));
    }
    let n = examples.len();
    let n_val = ((n as f64 * fraction).round() as usize).clamp(1, n.saturating_sub(1).max(1));
    if n < 2 {
        return Err(Error::Input("need at least two samples to hold out validation data".into()));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x7a11));
    let mut slots: Vec<Option<Example<T>>> = examples.into_iter().map(Some).collect();
    let mut train = Vec::with_capacity(n - n_val);
    let mut val = Vec::with_capacity(n_val);
    for (k, &i) in idx.iter().enumerate() {
        let ex = slots[i].take().expect("each index visited once");
        if k < n - n_val {
            train.push(ex);
        } else {
            val.push(ex);
        }
    }
    Ok((train, val))
}

/// Machine-readable training report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub variant: String,
    pub seed: u64,
    pub lr: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub validation: Metrics,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test: Option<Metrics>,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub grid: Vec<GridEntry>,
    /// Wall-clock seconds per epoch of the winning run.
    pub epoch_seconds: Vec<f64>,
    pub mean_epoch_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridEntry {
    pub lr: f64,
    pub best_epoch: usize,
    pub val_score: f64,
}

/// Keys holding wall-clock measurements, excluded when comparing reports.
pub const TIMING_FIELDS: [&str; 2] = ["epoch_seconds", "mean_epoch_seconds"];

impl MetricsReport {
    pub fn from_grid<T: Element>(model_cfg: &ModelConfig, seed: u64, winner: usize, runs: &[TrainOutcome<T>], test: Option<Metrics>) -> Self {
        let w = &runs[winner];
        let epoch_seconds: Vec<f64> = w.history.iter().map(|h| h.seconds).collect();
        MetricsReport {
            variant: model_cfg.variant.to_string(),
            seed,
            lr: w.lr,
            best_epoch: w.best_epoch,
            epochs_run: w.history.len(),
            stopped_early: w.stopped_early,
            validation: w.best_val.clone(),
            test,
            train_loss: w.history.iter().map(|h| h.train_loss).collect(),
            val_loss: w.history.iter().map(|h| h.val_loss).collect(),
            grid: runs
                .iter()
                .map(|r| GridEntry {
                    lr: r.lr,
                    best_epoch: r.best_epoch,
                    val_score: r.best_val.selection_score(),
                })
                .collect(),
            mean_epoch_seconds: epoch_seconds.iter().sum::<f64>() / epoch_seconds.len().max(1) as f64,
            epoch_seconds,
        }
    }
}

/// Per-epoch loss curve as CSV.
pub fn loss_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,train_loss,val_loss,val_score,seconds\n");
    for h in history {
        s.push_str(&format!("{},{},{},{},{}\n", h.epoch, h.train_loss, h.val_loss, h.val_score, h.seconds));
    }
    s
}
