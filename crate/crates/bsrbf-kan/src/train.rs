//! The training loop: AdamW with a per-epoch exponential learning-rate
//! decay, shuffled mini-batches, and per-run metric collection.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{evaluate, Confusion};
use crate::model::{softmax_cross_entropy, ModelConfig, Network};
use crate::num::{to_f64, Real};
use crate::optim::{AdamW, AdamWOptions, LrSchedule};
use crate::rng::{streams, SeededRng};

/// Rows per forward pass during evaluation; results are independent of this.
const EVAL_BATCH: usize = 256;

/// Hyperparameters of one training run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    /// Base learning rate; epoch `e` uses `lr * gamma^e`.
    pub lr: f64,
    pub weight_decay: f64,
    /// Per-epoch learning-rate decay factor.
    pub gamma: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 15,
            batch_size: 64,
            lr: 1e-3,
            weight_decay: 1e-4,
            gamma: 0.8,
        }
    }
}

impl TrainOptions {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        // lr/gamma bounds are enforced by the schedule, weight decay by the
        // optimizer; surface those errors before any work happens.
        LrSchedule::new(self.lr, self.gamma)?;
        AdamWOptions {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..Default::default()
        }
        .validate()
    }
}

/// Everything measured during one run. All accuracies are fractions in
/// `[0, 1]`; `wall_seconds` is the only field that varies between repeats of
/// the same seed (see [`RunMetrics::without_timing`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub model: String,
    pub dataset: String,
    pub seed: u64,
    pub widths: Vec<usize>,
    pub param_count: usize,
    /// Mean cross-entropy over the batches of each epoch.
    pub epoch_train_loss: Vec<f64>,
    /// Running accuracy over each epoch's batches (measured before the
    /// weight update for that batch).
    pub epoch_train_accuracy: Vec<f64>,
    /// Training accuracy of the last epoch.
    pub final_train_accuracy: f64,
    /// Accuracy on the held-out split.
    pub val_accuracy: f64,
    /// Macro-averaged F1 on the held-out split.
    pub macro_f1: f64,
    pub confusion: Confusion,
    pub wall_seconds: f64,
    pub config: ModelConfig,
    pub options: TrainOptions,
}

impl RunMetrics {
    /// Copy with the wall-clock time zeroed, so two runs of the same seed
    /// serialize to identical bytes.
    pub fn without_timing(&self) -> Self {
        RunMetrics {
            wall_seconds: 0.0,
            ..self.clone()
        }
    }
}

/// A trained network together with its measurements.
#[derive(Debug)]
pub struct TrainOutcome<F> {
    pub network: Network<F>,
    pub metrics: RunMetrics,
}

/// Snapshot handed to the progress callback after each epoch.
#[derive(Debug, Clone, Copy)]
pub struct EpochProgress {
    /// Zero-based epoch that just finished.
    pub epoch: usize,
    pub total_epochs: usize,
    pub lr: f64,
    pub mean_loss: f64,
    pub train_accuracy: f64,
}

/// Train a freshly built network on `train`, then evaluate on `val`.
///
/// Batch order comes from the `SHUFFLE` stream of `config.seed` and is
/// independent of the initialization draws, so the whole run is a pure
/// function of `(config, options, data)`.
pub fn train_run<F: Real>(
    config: &ModelConfig,
    dataset_name: &str,
    train: &Dataset<F>,
    val: &Dataset<F>,
    options: &TrainOptions,
) -> Result<TrainOutcome<F>> {
    train_run_with(config, dataset_name, train, val, options, |_| {})
}

/// [`train_run`] with a per-epoch progress callback (used by the CLI to
/// stream status lines during long runs).
pub fn train_run_with<F: Real>(
    config: &ModelConfig,
    dataset_name: &str,
    train: &Dataset<F>,
    val: &Dataset<F>,
    options: &TrainOptions,
    mut on_epoch: impl FnMut(&EpochProgress),
) -> Result<TrainOutcome<F>> {
    options.validate()?;
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Data("cannot train on an empty dataset".into()));
    }
    let widths = &config.widths;
    if train.feature_dim() != widths[0] {
        return Err(Error::Config(format!(
            "model expects {} input features but the dataset has {}",
            widths[0],
            train.feature_dim()
        )));
    }
    if train.num_classes() != *widths.last().unwrap() {
        return Err(Error::Config(format!(
            "model emits {} logits but the dataset has {} classes",
            widths.last().unwrap(),
            train.num_classes()
        )));
    }

    let mut net = Network::build(config)?;
    let schedule = LrSchedule::new(options.lr, options.gamma)?;
    let mut opt = AdamW::new(AdamWOptions {
        lr: options.lr,
        weight_decay: options.weight_decay,
        ..Default::default()
    })?;
    let mut shuffle_rng = SeededRng::with_stream(config.seed, streams::SHUFFLE);

    let started = Instant::now();
    let mut epoch_train_loss = Vec::with_capacity(options.epochs);
    let mut epoch_train_accuracy = Vec::with_capacity(options.epochs);
    for epoch in 0..options.epochs {
        opt.set_lr(schedule.lr_at(epoch))?;
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        let mut correct = 0usize;
        let mut seen = 0usize;
        for (batch_idx, (x, y)) in train
            .iter_shuffled_batches(options.batch_size, &mut shuffle_rng)
            .enumerate()
        {
            net.zero_grads();
            let logits = net.forward(&x, true)?;
            let (loss, dlogits) = softmax_cross_entropy(&logits, &y)?;
            let loss = to_f64(loss);
            if !loss.is_finite() {
                return Err(Error::Numeric {
                    epoch,
                    batch: batch_idx,
                    reason: format!("training loss became {loss}"),
                });
            }
            for (&pred, &label) in logits.row_argmax().iter().zip(&y) {
                if pred == label as usize {
                    correct += 1;
                }
            }
            seen += y.len();
            net.backward(&dlogits)?;
            opt.step(&mut net).map_err(|e| match e {
                Error::NonFinite { context } => Error::Numeric {
                    epoch,
                    batch: batch_idx,
                    reason: format!("non-finite values in {context}"),
                },
                other => other,
            })?;
            loss_sum += loss;
            batches += 1;
        }
        epoch_train_loss.push(loss_sum / batches as f64);
        epoch_train_accuracy.push(correct as f64 / seen as f64);
        on_epoch(&EpochProgress {
            epoch,
            total_epochs: options.epochs,
            lr: schedule.lr_at(epoch),
            mean_loss: epoch_train_loss[epoch],
            train_accuracy: epoch_train_accuracy[epoch],
        });
    }
    let wall_seconds = started.elapsed().as_secs_f64();

    let eval = evaluate(&mut net, val, EVAL_BATCH)?;
    let metrics = RunMetrics {
        model: config.kind.name().to_string(),
        dataset: dataset_name.to_string(),
        seed: config.seed,
        widths: widths.clone(),
        param_count: net.param_count(),
        final_train_accuracy: *epoch_train_accuracy.last().unwrap(),
        epoch_train_loss,
        epoch_train_accuracy,
        val_accuracy: eval.accuracy,
        macro_f1: eval.macro_f1,
        confusion: eval.confusion,
        wall_seconds,
        config: config.clone(),
        options: *options,
    };
    Ok(TrainOutcome {
        network: net,
        metrics,
    })
}
