//! Mini-batch Adam training with per-epoch validation, metrics and checkpoints.

use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{assemble_batch, epoch_batches, SampleSource, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::eval::{argmax, evaluate, Evaluation};
use crate::graph::Graph;
use crate::model::checkpoint::{save_checkpoint, Checkpoint};
use crate::model::config::Profile;
use crate::optim::{adam_step, AdamHyper, AdamState};
use crate::tensor::Tensor;

pub const METRICS_FILE: &str = "metrics.csv";
pub const CONFUSION_FILE: &str = "confusion.txt";
pub const LAST_CHECKPOINT: &str = "last.wdnt";
pub const BEST_CHECKPOINT: &str = "best.wdnt";
pub const METRICS_HEADER: &str = "epoch,train_loss,train_acc,val_loss,val_acc,seconds";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub profile: Profile,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed_init: u64,
    pub seed_split: u64,
    pub seed_shuffle: u64,
    pub train_fraction: f64,
    /// Batch size for validation passes; only affects speed and memory.
    pub eval_batch_size: usize,
    /// Writes 0 for wall time so metrics files are reproducible byte for byte.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            profile: Profile::Paper,
            epochs: 15,
            batch_size: 2,
            learning_rate: 1e-4,
            seed_init: 1,
            seed_split: 101,
            seed_shuffle: 2,
            train_fraction: 0.7,
            eval_batch_size: 8,
            deterministic: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.eval_batch_size == 0 {
            return Err(Error::Config("epochs and batch sizes must be positive".into()));
        }
        AdamHyper::with_learning_rate(self.learning_rate).validate()
    }
}

/// One row of `metrics.csv`. Epochs are numbered from 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Running mean over the epoch's batches, as seen during training.
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        if self.records.is_empty() {
            w.write_record(METRICS_HEADER.split(','))?;
        }
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
        if header.join(",") != METRICS_HEADER {
            return Err(Error::Format(format!("unexpected metrics header {header:?}")));
        }
        let records = r.deserialize().collect::<std::result::Result<_, _>>()?;
        Ok(Self { records })
    }

    /// The record with the highest validation accuracy; earliest wins ties.
    pub fn best(&self) -> Option<&EpochRecord> {
        self.records.iter().fold(None, |best: Option<&EpochRecord>, r| match best {
            Some(b) if b.val_acc >= r.val_acc => Some(b),
            _ => Some(r),
        })
    }
}

/// Outcome of a single optimizer step.
#[derive(Clone, Copy, Debug)]
pub struct StepOutcome {
    pub loss: f64,
    pub correct: usize,
}

/// A graph together with its optimizer state.
pub struct Trainer {
    pub graph: Graph<f32>,
    pub adam: AdamState<f32>,
    pub hyper: AdamHyper,
    /// Optimizer steps taken so far.
    pub step: u64,
}

impl Trainer {
    pub fn new(graph: Graph<f32>, hyper: AdamHyper) -> Result<Self> {
        hyper.validate()?;
        let adam = AdamState::new(graph.parameters());
        Ok(Self { graph, adam, hyper, step: 0 })
    }

    /// Resumes from a checkpoint. A checkpoint without optimizer state starts
    /// Adam from zero moments.
    pub fn from_checkpoint(ckpt: Checkpoint, hyper: AdamHyper) -> Result<Self> {
        hyper.validate()?;
        let adam = match ckpt.adam {
            Some(a) => a,
            None => AdamState::new(ckpt.graph.parameters()),
        };
        Ok(Self { graph: ckpt.graph, adam, hyper, step: ckpt.step })
    }

    /// forward → cross-entropy → backward → Adam on one batch. `epoch` is only
    /// used to label a divergence error.
    pub fn train_step(&mut self, images: &Tensor<f32>, onehot: &Tensor<f32>, epoch: usize) -> Result<StepOutcome> {
        let step = self.step as usize + 1;
        // Checked up front: debug builds assert finiteness inside every op.
        if !self.graph.parameters().iter().all(|p| p.value.all_finite()) {
            return Err(Error::Divergence { epoch, step });
        }
        let probs = self.graph.forward(images)?;
        let loss = self.graph.backward(onehot)?;
        if !loss.is_finite() || !self.graph.parameters().iter().all(|p| p.grad.all_finite()) {
            return Err(Error::Divergence { epoch, step });
        }
        adam_step(self.graph.parameters_mut(), &mut self.adam, &self.hyper)?;
        self.step += 1;
        let correct = probs
            .data()
            .chunks_exact(NUM_CLASSES)
            .zip(onehot.data().chunks_exact(NUM_CLASSES))
            .filter(|(p, y)| argmax(p) == argmax(y))
            .count();
        Ok(StepOutcome { loss, correct })
    }

    /// Trains on each batch in order. Returns the sample-weighted mean loss and
    /// the fraction of samples classified correctly before their update.
    pub fn run_epoch(&mut self, source: &dyn SampleSource, batches: &[Vec<usize>], epoch: usize) -> Result<(f64, f64)> {
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0, 0);
        for batch in batches {
            let (x, y) = assemble_batch(source, batch)?;
            let out = self.train_step(&x, &y, epoch)?;
            loss_sum += out.loss * batch.len() as f64;
            correct += out.correct;
            seen += batch.len();
        }
        if seen == 0 {
            return Err(Error::Config("epoch has no training samples".into()));
        }
        Ok((loss_sum / seen as f64, correct as f64 / seen as f64))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_checkpoint(&self.graph, Some(&self.adam), self.step, path)
    }
}

/// Runs `config.epochs` epochs over `train`, validating on `val` after each.
///
/// With `out_dir` set, rewrites `metrics.csv`, `confusion.txt` and
/// `last.wdnt` after every epoch and `best.wdnt` whenever validation accuracy
/// improves. A trainer restored from a checkpoint continues at the epoch its
/// step count implies; earlier rows of an existing `metrics.csv` are kept.
pub fn run_training(
    trainer: &mut Trainer,
    source: &dyn SampleSource,
    train: &[usize],
    val: &[usize],
    config: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<(TrainHistory, Evaluation)> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    if val.is_empty() {
        return Err(Error::Config("validation split is empty".into()));
    }
    let steps_per_epoch = train.len().div_ceil(config.batch_size) as u64;
    if trainer.step % steps_per_epoch != 0 {
        return Err(Error::State(format!(
            "checkpoint step {} is not an epoch boundary ({steps_per_epoch} steps per epoch)",
            trainer.step
        )));
    }
    let start = (trainer.step / steps_per_epoch) as usize;

    let mut history = TrainHistory::default();
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        let metrics = dir.join(METRICS_FILE);
        if start > 0 && metrics.exists() {
            history = TrainHistory::read_csv(&metrics)?;
            history.records.retain(|r| r.epoch <= start);
        }
    }
    let mut best_acc = history.best().map_or(f64::NEG_INFINITY, |r| r.val_acc);

    let mut last_eval = None;
    for epoch in start..config.epochs {
        let clock = Instant::now();
        let batches = epoch_batches(train, config.batch_size, config.seed_shuffle, epoch);
        let (train_loss, train_acc) = trainer.run_epoch(source, &batches, epoch + 1)?;
        let ev = evaluate(&trainer.graph, source, val, config.eval_batch_size)?;
        let seconds = if config.deterministic { 0.0 } else { clock.elapsed().as_secs_f64() };
        let record = EpochRecord {
            epoch: epoch + 1,
            train_loss,
            train_acc,
            val_loss: ev.loss,
            val_acc: ev.accuracy,
            seconds,
        };
        log::info!(
            "epoch {}/{}: train loss {:.4} acc {:.4}, val loss {:.4} acc {:.4} ({:.1}s)",
            record.epoch,
            config.epochs,
            train_loss,
            train_acc,
            ev.loss,
            ev.accuracy,
            clock.elapsed().as_secs_f64()
        );
        history.records.push(record);

        if let Some(dir) = out_dir {
            history.write_csv(dir.join(METRICS_FILE))?;
            fs::write(dir.join(CONFUSION_FILE), ev.confusion.to_string())?;
            trainer.save(dir.join(LAST_CHECKPOINT))?;
            if ev.accuracy > best_acc {
                trainer.save(dir.join(BEST_CHECKPOINT))?;
            }
        }
        best_acc = best_acc.max(ev.accuracy);
        last_eval = Some(ev);
    }
    let last_eval = match last_eval {
        Some(ev) => ev,
        // Resumed at or past the final epoch: report the current state.
        None => evaluate(&trainer.graph, source, val, config.eval_batch_size)?,
    };
    Ok((history, last_eval))
}
