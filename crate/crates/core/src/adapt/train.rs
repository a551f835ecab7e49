use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, AdamState, Tensor};
use crate::error::{Error, Result};
use crate::sigprep::Dataset;
use crate::Task;

use super::model::{ArchSpec, PhyMdanModel};
use super::objective::{total_objective, Batches, SourceBatch};

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lambda: f64,
    /// Source weights; uniform when absent.
    pub weights: Option<Vec<f64>>,
    pub learning_rate: f64,
    /// Multiplier applied at each milestone.
    pub decay: f64,
    /// Fractions of the epoch budget at which the rate decays.
    pub milestones: Vec<f64>,
    pub epochs: usize,
    /// Samples per domain per step.
    pub batch_size: usize,
    /// Defaults to one pass over the largest source training split.
    pub steps_per_epoch: Option<usize>,
    pub seed: u64,
    pub validation_fraction: f64,
    /// `(j, k)`: hold out fold `j` of a seeded `k`-fold partition of each
    /// source instead of a random `validation_fraction` split.
    pub validation_fold: Option<(usize, usize)>,
    pub adam: AdamConfig,
    /// Defaults to the task's standard layout.
    pub arch: Option<ArchSpec>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 0.1,
            weights: None,
            learning_rate: 0.005,
            decay: 0.1,
            milestones: vec![0.5, 0.75],
            epochs: 100,
            batch_size: 32,
            steps_per_epoch: None,
            seed: 0,
            validation_fraction: 0.1,
            validation_fold: None,
            adam: AdamConfig::default(),
            arch: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, n_sources: usize) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::Config(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch size and epochs must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config(
                "validation fraction must lie in [0, 1)".into(),
            ));
        }
        if let Some((j, k)) = self.validation_fold {
            if k < 2 || j >= k {
                return Err(Error::Config(format!("invalid validation fold {j} of {k}")));
            }
        }
        if let Some(w) = &self.weights {
            if w.len() != n_sources {
                return Err(Error::dim(format!(
                    "{} weights for {n_sources} sources",
                    w.len()
                )));
            }
            let sum: f64 = w.iter().sum();
            if w.iter().any(|&x| !(x >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "weights must be nonnegative and sum to 1, got {w:?}"
                )));
            }
        }
        Ok(())
    }

    pub fn arch_for(&self, task: Task) -> ArchSpec {
        self.arch
            .clone()
            .unwrap_or_else(|| ArchSpec::for_task(task))
    }

    /// Rate in effect during `epoch` (0-based).
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let passed = self
            .milestones
            .iter()
            .filter(|&&m| epoch as f64 >= (m * self.epochs as f64).round())
            .count();
        self.learning_rate * self.decay.powi(passed as i32)
    }
}

/// Metrics recorded at the end of one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub learning_rate: f64,
    pub objective: f64,
    /// Mean over the epoch's steps, per source domain.
    pub predictor_loss: Vec<f64>,
    pub discriminator_loss: Vec<f64>,
    pub discriminator_train_accuracy: Vec<f64>,
    /// Predictor accuracy on each source's held-out split.
    pub source_val_accuracy: Vec<f64>,
    /// Discriminator accuracy on held-out source vs held-out target.
    pub discriminator_val_accuracy: Vec<f64>,
}

/// Per-epoch history of one training run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    pub fn last(&self) -> Option<&EpochLog> {
        self.epochs.last()
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for e in &self.epochs {
            writeln!(out, "{}", serde_json::to_string(e)?)?;
        }
        Ok(())
    }
}

/// Endless reshuffled pass over `0..n`.
struct Cycler {
    order: Vec<usize>,
    pos: usize,
}

impl Cycler {
    fn new(n: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        Cycler { order, pos: 0 }
    }

    fn take(&mut self, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(k);
        while out.len() < k {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

fn batch_inputs(model: &PhyMdanModel, ds: &Dataset, idx: &[usize]) -> Result<Tensor> {
    let rows: Vec<&[f64]> = idx.iter().map(|&i| ds.input(i)).collect();
    model.batch_tensor(&rows)
}

/// Builds a model for `task` with the configured architecture.
pub fn build_model(
    task: Task,
    n_domains: usize,
    l: usize,
    cfg: &TrainConfig,
) -> Result<PhyMdanModel> {
    PhyMdanModel::new(
        cfg.arch_for(task),
        task.num_classes(),
        n_domains,
        l,
        cfg.seed,
    )
}

/// Runs the gradient-reversal training loop.
///
/// Each source is split into training and validation parts; the target
/// (if any) into discriminator-training and discriminator-validation
/// parts. Target labels are never read. Every step draws one batch per
/// domain, cycling shorter datasets with reshuffling.
pub fn train(
    model: &mut PhyMdanModel,
    sources: &[Dataset],
    target: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    let n = sources.len();
    cfg.validate(n)?;
    if n == 0 {
        return Err(Error::arg("no source datasets"));
    }
    if let Some(ds) = sources.iter().find(|d| d.is_empty()) {
        return Err(Error::arg(format!("source dataset {} is empty", ds.domain)));
    }
    if target.is_some_and(Dataset::is_empty) {
        return Err(Error::arg("target dataset is empty"));
    }
    let adversarial = model.num_domains > 0 && target.is_some();
    if adversarial && model.num_domains != n {
        return Err(Error::dim(format!(
            "model has {} discriminators for {n} sources",
            model.num_domains
        )));
    }
    let weights = cfg
        .weights
        .clone()
        .unwrap_or_else(|| vec![1.0 / n as f64; n]);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_da7a);
    let held_out = |ds: &Dataset, rng: &mut ChaCha8Rng| {
        if let Some((j, k)) = cfg.validation_fold {
            let mut order: Vec<usize> = (0..ds.len()).collect();
            order.shuffle(rng);
            let (val, tr): (Vec<_>, Vec<_>) = order
                .into_iter()
                .enumerate()
                .partition(|&(pos, _)| pos % k == j);
            let val: Vec<usize> = val.into_iter().map(|(_, i)| i).collect();
            let tr: Vec<usize> = tr.into_iter().map(|(_, i)| i).collect();
            (ds.subset(&tr), Some(ds.subset(&val)))
        } else if cfg.validation_fraction > 0.0 && ds.len() >= 2 {
            let (val, tr) = ds.split(cfg.validation_fraction, rng);
            (tr, Some(val))
        } else {
            (ds.clone(), None)
        }
    };
    let mut src_train = Vec::with_capacity(n);
    let mut src_val = Vec::with_capacity(n);
    for ds in sources {
        let (tr, val) = held_out(ds, &mut rng);
        src_train.push(tr);
        src_val.push(val);
    }
    let (tgt_train, tgt_val) = match target.filter(|_| adversarial) {
        Some(t) => {
            let (tr, val) = held_out(t, &mut rng);
            (Some(tr), val)
        }
        None => (None, None),
    };
    let train_labels: Vec<Vec<usize>> = src_train.iter().map(Dataset::labels).collect();
    let mut cyclers: Vec<Cycler> = src_train
        .iter()
        .map(|d| Cycler::new(d.len(), &mut rng))
        .collect();
    let mut tgt_cycler = tgt_train.as_ref().map(|d| Cycler::new(d.len(), &mut rng));
    let steps = cfg.steps_per_epoch.unwrap_or_else(|| {
        let largest = src_train.iter().map(Dataset::len).max().unwrap_or(1);
        largest.div_ceil(cfg.batch_size).max(1)
    });
    let mut adam = AdamState::new(&model.store, cfg.adam);
    let mut log = TrainLog::default();
    let n_disc = if adversarial { n } else { 0 };
    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate_at(epoch);
        let mut objective = 0.0;
        let mut pred_loss = vec![0.0; n];
        let mut disc_loss = vec![0.0; n_disc];
        let mut disc_correct = vec![0usize; n_disc];
        let mut disc_total = vec![0usize; n_disc];
        for step in 0..steps {
            let mut sb = Vec::with_capacity(n);
            for (d, cyc) in cyclers.iter_mut().enumerate() {
                let idx = cyc.take(cfg.batch_size, &mut rng);
                sb.push(SourceBatch {
                    inputs: batch_inputs(model, &src_train[d], &idx)?,
                    labels: idx.iter().map(|&i| train_labels[d][i]).collect(),
                });
            }
            let tb = match (&mut tgt_cycler, &tgt_train) {
                (Some(c), Some(t)) => {
                    Some(batch_inputs(model, t, &c.take(cfg.batch_size, &mut rng))?)
                }
                _ => None,
            };
            let batches = Batches {
                sources: sb,
                target: tb,
            };
            let obj = total_objective(model, &batches, &weights, cfg.lambda)?;
            if !obj.value.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite loss at epoch {epoch}, step {step}"
                )));
            }
            adam.step(&mut model.store, &obj.grads, lr)
                .map_err(|e| Error::Training(format!("epoch {epoch}, step {step}: {e}")))?;
            objective += obj.value;
            for (acc, v) in pred_loss.iter_mut().zip(&obj.predictor_losses) {
                *acc += v;
            }
            for i in 0..obj.discriminator_losses.len() {
                disc_loss[i] += obj.discriminator_losses[i];
                disc_correct[i] += obj.discriminator_correct[i];
                disc_total[i] += obj.discriminator_total[i];
            }
        }
        let s = steps as f64;
        let mut source_val_accuracy = Vec::with_capacity(n);
        for val in &src_val {
            source_val_accuracy.push(match val {
                Some(v) => accuracy_on(model, v)?,
                None => f64::NAN,
            });
        }
        let mut discriminator_val_accuracy = Vec::with_capacity(n_disc);
        for (i, sv) in src_val.iter().enumerate().take(n_disc) {
            discriminator_val_accuracy.push(match (sv, &tgt_val) {
                (Some(sv), Some(tv)) => discriminator_accuracy(model, i, sv, tv)?,
                _ => f64::NAN,
            });
        }
        log.epochs.push(EpochLog {
            epoch,
            learning_rate: lr,
            objective: objective / s,
            predictor_loss: pred_loss.iter().map(|v| v / s).collect(),
            discriminator_loss: disc_loss.iter().map(|v| v / s).collect(),
            discriminator_train_accuracy: disc_correct
                .iter()
                .zip(&disc_total)
                .map(|(&c, &t)| c as f64 / t.max(1) as f64)
                .collect(),
            source_val_accuracy,
            discriminator_val_accuracy,
        });
    }
    Ok(log)
}

/// Predicted classes (ties go to the lower index) and class
/// probabilities.
pub fn predict(model: &PhyMdanModel, inputs: &[&[f64]]) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
    let probs = model.predict_proba(inputs)?;
    let classes = probs.iter().map(|p| argmax(p)).collect();
    Ok((classes, probs))
}

/// Predictions for every sample of `ds`; reads no labels.
pub fn predict_dataset(model: &PhyMdanModel, ds: &Dataset) -> Result<Vec<usize>> {
    Ok(predict(model, &ds.inputs())?.0)
}

pub(crate) fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

fn accuracy_on(model: &PhyMdanModel, ds: &Dataset) -> Result<f64> {
    let preds = predict_dataset(model, ds)?;
    let labels = ds.labels();
    Ok(preds.iter().zip(&labels).filter(|(p, y)| p == y).count() as f64 / labels.len() as f64)
}

fn discriminator_accuracy(
    model: &PhyMdanModel,
    i: usize,
    source: &Dataset,
    target: &Dataset,
) -> Result<f64> {
    let ps = model.discriminator_proba(&source.inputs(), i)?;
    let pt = model.discriminator_proba(&target.inputs(), i)?;
    let correct =
        ps.iter().filter(|&&p| p > 0.5).count() + pt.iter().filter(|&&p| p <= 0.5).count();
    Ok(correct as f64 / (ps.len() + pt.len()) as f64)
}
