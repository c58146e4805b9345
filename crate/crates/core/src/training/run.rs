//! Task wrappers and the generic mini-batch training loop.
//!
//! Per-sample gradients inside a batch are independent, so they are computed
//! in parallel and then reduced *in batch order*; together with per-sample
//! derived rng streams this makes training byte-identical no matter how many
//! threads run (or whether the `parallel` feature is on at all).

use crate::data::{AlignedSample, Labels};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::kernels::par_map_collect;
use crate::layers::Mode;
use crate::metrics::{auc, ccc, pearson};
use crate::models::{LateFusionModel, Prediction, SaGruModel, TemmaModel};
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::training::losses::{bce_loss, ccc_loss, mse_loss};
use crate::training::optimizer::{Optimizer, OptimizerKind};
use crate::training::schedule::{SchedulePolicy, ScheduleWatch, TrainState};

/// A model bound to its loss and dev metric, ready for the training loop.
pub trait Trainable: Sync {
    fn store(&self) -> &ParamStore;
    fn store_mut(&mut self) -> &mut ParamStore;
    /// Scalar loss node for one sample.
    fn loss(
        &self,
        g: &mut Graph,
        sample: &AlignedSample,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<NodeId>;
    fn predict(&self, sample: &AlignedSample) -> Result<Prediction>;
    /// Monitored dev metric, higher is better.
    fn dev_metric(&self, samples: &[AlignedSample]) -> Result<f64>;
    fn metric_name(&self) -> &'static str;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskLoss {
    /// Binary cross entropy on a scalar probability.
    Bce,
    /// Mean squared error on an intensity vector.
    Mse,
}

/// Transformer-encoder model with per-sample labels.
pub struct TemmaTask {
    pub model: TemmaModel,
    pub loss_kind: TaskLoss,
}

impl TemmaTask {
    fn sample_targets<'a>(&self, sample: &'a AlignedSample) -> Result<&'a [f64]> {
        match &sample.labels {
            Labels::PerSample(v) if v.len() == self.model.cfg.output_dim => Ok(v),
            Labels::PerSample(v) => Err(Error::Training(format!(
                "sample {} carries {} targets, model expects {}",
                sample.id,
                v.len(),
                self.model.cfg.output_dim
            ))),
            _ => Err(Error::Training(format!(
                "sample {} lacks per-sample labels",
                sample.id
            ))),
        }
    }
}

impl Trainable for TemmaTask {
    fn store(&self) -> &ParamStore {
        &self.model.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.model.store
    }

    fn loss(
        &self,
        g: &mut Graph,
        sample: &AlignedSample,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<NodeId> {
        let targets = self.sample_targets(sample)?.to_vec();
        let out = self.model.forward(g, sample, mode, rng)?;
        match self.loss_kind {
            TaskLoss::Bce => bce_loss(g, out, &targets),
            TaskLoss::Mse => mse_loss(g, out, &targets),
        }
    }

    fn predict(&self, sample: &AlignedSample) -> Result<Prediction> {
        self.model.predict(sample)
    }

    fn dev_metric(&self, samples: &[AlignedSample]) -> Result<f64> {
        // raw head outputs: correlation monitoring must not see a clamp
        // saturate an entire column into a constant
        let preds: Vec<Result<Vec<f64>>> =
            par_map_collect(samples, |s| self.model.raw_outputs(s));
        let mut outputs = Vec::with_capacity(samples.len());
        for p in preds {
            outputs.push(p?);
        }
        match self.loss_kind {
            TaskLoss::Bce => {
                let scores: Vec<f64> = outputs.iter().map(|o| o[0]).collect();
                let labels = samples
                    .iter()
                    .map(|s| Ok(self.sample_targets(s)?[0]))
                    .collect::<Result<Vec<f64>>>()?;
                auc(&scores, &labels)
            }
            TaskLoss::Mse => {
                // mean Pearson across the output targets
                let k = self.model.cfg.output_dim;
                let mut total = 0.0;
                for target in 0..k {
                    let pred: Vec<f64> = outputs.iter().map(|o| o[target]).collect();
                    let truth = samples
                        .iter()
                        .map(|s| Ok(self.sample_targets(s)?[target]))
                        .collect::<Result<Vec<f64>>>()?;
                    total += pearson(&pred, &truth)?;
                }
                Ok(total / k as f64)
            }
        }
    }

    fn metric_name(&self) -> &'static str {
        match self.loss_kind {
            TaskLoss::Bce => "auc",
            TaskLoss::Mse => "pearson",
        }
    }
}

/// One modality's sequence regressor trained against a named label series
/// with concordance loss.
pub struct SaGruTask {
    pub model: SaGruModel,
    pub modality: usize,
    pub target: String,
}

fn series_targets<'a>(
    sample: &'a AlignedSample,
    target: &str,
) -> Result<&'a [f64]> {
    let idx = sample.labels.series_index(target).ok_or_else(|| {
        Error::Training(format!(
            "sample {} lacks per-step series {target:?}",
            sample.id
        ))
    })?;
    match &sample.labels {
        Labels::PerStep { series, .. } => Ok(&series[idx]),
        _ => unreachable!("series_index implies per-step labels"),
    }
}

/// Builds the concordance loss over the valid (non-padded) prefix.
fn series_loss(
    g: &mut Graph,
    out: NodeId,
    sample: &AlignedSample,
    target: &str,
) -> Result<NodeId> {
    let series = series_targets(sample, target)?;
    let valid = sample.valid_len;
    let t_len = g.value(out).shape()[0];
    let out = if valid < t_len {
        g.slice(out, 0, 0, valid)?
    } else {
        out
    };
    ccc_loss(g, out, &series[..valid])
}

impl Trainable for SaGruTask {
    fn store(&self) -> &ParamStore {
        &self.model.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.model.store
    }

    fn loss(
        &self,
        g: &mut Graph,
        sample: &AlignedSample,
        _mode: Mode,
        _rng: &mut Rng,
    ) -> Result<NodeId> {
        let x = g.input(&sample.modalities[self.modality])?;
        let out = self.model.forward(g, x)?;
        series_loss(g, out, sample, &self.target)
    }

    fn predict(&self, sample: &AlignedSample) -> Result<Prediction> {
        self.model.predict(&sample.modalities[self.modality])
    }

    fn dev_metric(&self, samples: &[AlignedSample]) -> Result<f64> {
        concat_series_ccc(self, samples, &self.target)
    }

    fn metric_name(&self) -> &'static str {
        "ccc"
    }
}

/// Fusion-stage model: consumes samples whose single "modality" is the
/// [T × M] matrix of frozen per-modality predictions.
pub struct FusionTask {
    pub model: LateFusionModel,
    pub target: String,
}

impl Trainable for FusionTask {
    fn store(&self) -> &ParamStore {
        &self.model.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.model.store
    }

    fn loss(
        &self,
        g: &mut Graph,
        sample: &AlignedSample,
        _mode: Mode,
        _rng: &mut Rng,
    ) -> Result<NodeId> {
        let x = g.input(&sample.modalities[0])?;
        let out = self.model.forward(g, x)?;
        series_loss(g, out, sample, &self.target)
    }

    fn predict(&self, sample: &AlignedSample) -> Result<Prediction> {
        let mut g = Graph::new();
        let x = g.input(&sample.modalities[0])?;
        let out = self.model.forward(&mut g, x)?;
        Ok(Prediction {
            values: g.value(out).values().to_vec(),
            kind: crate::models::PredictionKind::PerStep,
        })
    }

    fn dev_metric(&self, samples: &[AlignedSample]) -> Result<f64> {
        concat_series_ccc(self, samples, &self.target)
    }

    fn metric_name(&self) -> &'static str {
        "ccc"
    }
}

/// CCC between concatenated valid-prefix predictions and targets.
fn concat_series_ccc<M: Trainable>(
    model: &M,
    samples: &[AlignedSample],
    target: &str,
) -> Result<f64> {
    let preds: Vec<Result<Vec<f64>>> = par_map_collect(samples, |s| Ok(model.predict(s)?.values));
    let mut all_pred = Vec::new();
    let mut all_true = Vec::new();
    for (s, p) in samples.iter().zip(preds) {
        let p = p?;
        let truth = series_targets(s, target)?;
        all_pred.extend_from_slice(&p[..s.valid_len]);
        all_true.extend_from_slice(&truth[..s.valid_len]);
    }
    ccc(&all_pred, &all_true)
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub lr_patience: usize,
    pub lr_factor: f64,
    pub stop_patience: Option<usize>,
    pub watch: ScheduleWatch,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_metric: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub best_dev_metric: f64,
    pub best_epoch: usize,
}

/// Mean loss and mean parameter gradients over one batch. Per-sample work
/// runs in parallel; the reduction is sequential in batch order.
fn batch_gradients<M: Trainable>(
    model: &M,
    batch: &[&AlignedSample],
    base: &Rng,
    epoch: usize,
    batch_idx: usize,
) -> Result<(f64, Vec<Option<Vec<f64>>>)> {
    let jobs: Vec<(usize, &AlignedSample)> = batch.iter().copied().enumerate().collect();
    let per_sample: Vec<Result<(f64, Vec<(ParamId, Vec<f64>)>)>> =
        par_map_collect(&jobs, |&(i, sample)| {
            let tag = ((epoch as u64) << 40) | ((batch_idx as u64) << 24) | (i as u64);
            let mut rng = base.derive(tag);
            let mut g = Graph::new();
            let loss = model.loss(&mut g, sample, Mode::Train, &mut rng)?;
            let value = g.value(loss).item();
            g.backward(loss)?;
            Ok((value, g.param_grads()))
        });

    let mut total = 0.0;
    let mut acc: Vec<Option<Vec<f64>>> = vec![None; model.store().len()];
    for result in per_sample {
        let (value, grads) = result?;
        total += value;
        for (pid, grad) in grads {
            match &mut acc[pid.index()] {
                Some(existing) => {
                    for (a, b) in existing.iter_mut().zip(&grad) {
                        *a += b;
                    }
                }
                slot @ None => *slot = Some(grad),
            }
        }
    }
    let scale = 1.0 / batch.len() as f64;
    for grad in acc.iter_mut().flatten() {
        grad.iter_mut().for_each(|v| *v *= scale);
    }
    Ok((total * scale, acc))
}

/// Mean eval-mode loss (dropout off) over a set, for dev-loss watching.
fn mean_eval_loss<M: Trainable>(model: &M, samples: &[AlignedSample]) -> Result<f64> {
    let losses: Vec<Result<f64>> = par_map_collect(samples, |s| {
        let mut g = Graph::new();
        let mut rng = Rng::new(0);
        let loss = model.loss(&mut g, s, Mode::Eval, &mut rng)?;
        Ok(g.value(loss).item())
    });
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / samples.len() as f64)
}

/// Seeded mini-batch training with lr halving and early stopping. The model
/// is left holding the best-by-dev parameters.
pub fn train<M: Trainable>(
    model: &mut M,
    train_set: &[AlignedSample],
    dev_set: &[AlignedSample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if train_set.is_empty() || dev_set.is_empty() {
        return Err(Error::Training("empty train or dev split".into()));
    }
    if cfg.batch_size == 0 || cfg.max_epochs == 0 {
        return Err(Error::Training(
            "batch_size and max_epochs must be positive".into(),
        ));
    }
    let base_rng = Rng::new(cfg.seed);
    let mut shuffle_rng = base_rng.derive(0x7368_7566);
    let mut optimizer =
        Optimizer::new(cfg.optimizer, model.store()).with_weight_decay(cfg.weight_decay);
    let mut state = TrainState::new(cfg.lr);
    let policy = SchedulePolicy {
        lr_patience: cfg.lr_patience,
        lr_factor: cfg.lr_factor,
        stop_patience: cfg.stop_patience,
    };
    let param_ids: Vec<ParamId> = model.store().ids().collect();
    let mut best_store: Option<ParamStore> = None;
    let mut best_metric = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut history = Vec::new();
    let mut lr = cfg.lr;

    for epoch in 1..=cfg.max_epochs {
        let order = shuffle_rng.shuffled_indices(train_set.len());
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&AlignedSample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let (loss, grads) = batch_gradients(model, &batch, &base_rng, epoch, batch_idx)?;
            let store = model.store_mut();
            store.zero_grads();
            for (idx, grad) in grads.into_iter().enumerate() {
                let zeros;
                let g = match &grad {
                    Some(g) => g.as_slice(),
                    None => {
                        zeros = vec![0.0; store.get(param_ids[idx]).numel()];
                        zeros.as_slice()
                    }
                };
                store.get_mut(param_ids[idx]).accumulate_grad(g);
            }
            optimizer.step(store, lr)?;
            epoch_loss += loss;
            batches += 1;
        }
        let train_loss = epoch_loss / batches as f64;
        let dev_metric = model.dev_metric(dev_set)?;
        let watched = match cfg.watch {
            ScheduleWatch::TrainLoss => train_loss,
            ScheduleWatch::DevLoss => mean_eval_loss(model, dev_set)?,
        };
        history.push(EpochRecord {
            epoch,
            train_loss,
            dev_metric,
            lr,
        });
        if dev_metric > best_metric {
            best_metric = dev_metric;
            best_epoch = epoch;
            best_store = Some(model.store().clone());
        }
        let (next_lr, stop) = state.schedule_step(&policy, watched, dev_metric);
        lr = next_lr;
        if stop {
            break;
        }
    }
    if let Some(store) = best_store {
        *model.store_mut() = store;
    }
    Ok(TrainOutcome {
        history,
        best_dev_metric: best_metric,
        best_epoch,
    })
}
