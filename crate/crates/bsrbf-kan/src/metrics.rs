//! Classification metrics: confusion matrix, accuracy, macro-averaged F1,
//! and batched model evaluation.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::Network;
use crate::num::Real;

/// Confusion matrix; `counts[t][p]` is how many examples of true class `t`
/// were predicted as class `p`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    counts: Vec<Vec<usize>>,
}

impl Confusion {
    pub fn new(classes: usize) -> Self {
        Confusion {
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn record(&mut self, true_label: usize, predicted: usize) {
        self.counts[true_label][predicted] += 1;
    }

    pub fn count(&self, true_label: usize, predicted: usize) -> usize {
        self.counts[true_label][predicted]
    }

    /// The full matrix, rows indexed by true class.
    pub fn rows(&self) -> &[Vec<usize>] {
        &self.counts
    }

    pub fn total(&self) -> usize {
        self.counts.iter().map(|r| r.iter().sum::<usize>()).sum()
    }

    /// Number of examples whose true class is `c`.
    pub fn support(&self, c: usize) -> usize {
        self.counts[c].iter().sum()
    }

    /// Examples of true class `c` predicted as anything else.
    pub fn misclassified(&self, c: usize) -> usize {
        self.support(c) - self.counts[c][c]
    }

    /// Fraction of examples on the diagonal; 0 for an empty matrix.
    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let trace: usize = (0..self.classes()).map(|c| self.counts[c][c]).sum();
        trace as f64 / total as f64
    }

    /// Per-class F1 scores. A class with zero precision+recall denominator
    /// scores 0 rather than NaN, matching the usual zero-division convention.
    pub fn per_class_f1(&self) -> Vec<f64> {
        let classes = self.classes();
        (0..classes)
            .map(|c| {
                let tp = self.counts[c][c];
                let fp: usize = (0..classes).map(|t| self.counts[t][c]).sum::<usize>() - tp;
                let fals_neg = self.support(c) - tp;
                let precision = if tp + fp > 0 {
                    tp as f64 / (tp + fp) as f64
                } else {
                    0.0
                };
                let recall = if tp + fals_neg > 0 {
                    tp as f64 / (tp + fals_neg) as f64
                } else {
                    0.0
                };
                if precision + recall > 0.0 {
                    2.0 * precision * recall / (precision + recall)
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// Unweighted mean of the per-class F1 scores over all classes.
    pub fn macro_f1(&self) -> f64 {
        let classes = self.classes();
        if classes == 0 {
            return 0.0;
        }
        self.per_class_f1().iter().sum::<f64>() / classes as f64
    }
}

/// Result of evaluating a model on a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Fraction correct in `[0, 1]`.
    pub accuracy: f64,
    /// Macro-averaged F1 in `[0, 1]`.
    pub macro_f1: f64,
    pub confusion: Confusion,
}

/// Run the model over the dataset in inference mode, `batch_size` rows at a
/// time, taking each row's argmax as the prediction.
pub fn evaluate<F: Real>(
    net: &mut Network<F>,
    dataset: &Dataset<F>,
    batch_size: usize,
) -> Result<Evaluation> {
    if dataset.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty dataset".into()));
    }
    if net.output_dim() != dataset.num_classes() {
        return Err(Error::Config(format!(
            "model emits {} logits but the dataset has {} classes",
            net.output_dim(),
            dataset.num_classes()
        )));
    }
    let mut confusion = Confusion::new(dataset.num_classes());
    for (images, labels) in dataset.iter_batches(batch_size) {
        let logits = net.predict(&images)?;
        let predicted = logits.row_argmax();
        for (&pred, &label) in predicted.iter().zip(&labels) {
            confusion.record(label as usize, pred);
        }
    }
    Ok(Evaluation {
        accuracy: confusion.accuracy(),
        macro_f1: confusion.macro_f1(),
        confusion,
    })
}
