//! Aggregation of runs into experiment reports, report emission (JSON +
//! CSV), and the BSRBF ablation suite.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, DatasetName};
use crate::error::{Error, Result};
use crate::layers::AblationFlags;
use crate::model::{ModelConfig, ModelKind};
use crate::num::Real;
use crate::train::{train_run, RunMetrics, TrainOptions};

/// Best / mean / population standard deviation of a set of values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub best: f64,
    pub mean: f64,
    pub std: f64,
}

impl Stats {
    /// `best` is the maximum; `std` is the population standard deviation
    /// (divide by `n`, not `n - 1`), which is 0 for a single value.
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidParameter {
                what: "Stats values",
                details: "cannot summarize zero values".into(),
            });
        }
        let n = values.len() as f64;
        let mut sum = 0.0;
        for &v in values {
            sum += v;
        }
        let mean = sum / n;
        let mut q = 0.0;
        for &v in values {
            q += (v - mean) * (v - mean);
        }
        let std = (q / n).sqrt();
        let mut best = values[0];
        for &v in &values[1..] {
            if v > best {
                best = v;
            }
        }
        Ok(Stats { best, mean, std })
    }
}

/// One model's runs over several seeds, with aggregate statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub model: String,
    pub param_count: usize,
    pub seeds: Vec<u64>,
    pub val_accuracy: Stats,
    pub final_train_accuracy: Stats,
    pub macro_f1: Stats,
    pub wall_seconds: Stats,
    pub runs: Vec<RunMetrics>,
}

/// Combine runs of the same model on the same dataset.
pub fn summarize_runs(runs: Vec<RunMetrics>) -> Result<ModelSummary> {
    let first = runs.first().ok_or_else(|| Error::InvalidParameter {
        what: "summarize_runs",
        details: "need at least one run".into(),
    })?;
    let (model, dataset) = (first.model.clone(), first.dataset.clone());
    if let Some(bad) = runs
        .iter()
        .find(|r| r.model != model || r.dataset != dataset)
    {
        return Err(Error::InvalidParameter {
            what: "summarize_runs",
            details: format!(
                "cannot mix {}/{} with {}/{}",
                model, dataset, bad.model, bad.dataset
            ),
        });
    }
    let pick = |f: fn(&RunMetrics) -> f64| -> Result<Stats> {
        let vals: Vec<f64> = runs.iter().map(f).collect();
        Stats::from_values(&vals)
    };
    Ok(ModelSummary {
        model,
        param_count: first.param_count,
        seeds: runs.iter().map(|r| r.seed).collect(),
        val_accuracy: pick(|r| r.val_accuracy)?,
        final_train_accuracy: pick(|r| r.final_train_accuracy)?,
        macro_f1: pick(|r| r.macro_f1)?,
        wall_seconds: pick(|r| r.wall_seconds)?,
        runs,
    })
}

/// Full comparison of several models on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub dataset: String,
    pub models: Vec<ModelSummary>,
}

impl ExperimentReport {
    pub fn new(dataset: impl Into<String>, models: Vec<ModelSummary>) -> Self {
        ExperimentReport {
            dataset: dataset.into(),
            models,
        }
    }

    /// Copy with every wall-clock field zeroed; two runs of the same seeds
    /// then serialize to identical bytes.
    pub fn without_timing(&self) -> Self {
        let mut out = self.clone();
        for m in &mut out.models {
            m.wall_seconds = Stats {
                best: 0.0,
                mean: 0.0,
                std: 0.0,
            };
            for r in &mut m.runs {
                *r = r.without_timing();
            }
        }
        out
    }
}

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Class display names for a dataset string, falling back to indices for
/// datasets without a known name table.
fn class_label(dataset: &str, class: usize) -> String {
    match DatasetName::parse(dataset) {
        Ok(name) => name.class_names()[class].to_string(),
        Err(_) => class.to_string(),
    }
}

/// Write `report.json` plus the CSV side tables into `dir` (created if
/// needed).
///
/// With `strip_timing` the wall-clock fields are zeroed first, making the
/// entire output a deterministic function of the runs — byte-identical
/// across repeats of the same seeds.
pub fn emit_report(dir: impl AsRef<Path>, report: &ExperimentReport, strip_timing: bool) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let report = if strip_timing {
        report.without_timing()
    } else {
        report.clone()
    };

    write_file(dir, "report.json", &serde_json::to_vec_pretty(&report)?)?;

    // Aggregate table, one row per model. Accuracies are percentages here
    // for readability; the JSON keeps fractions.
    let mut summary = String::from(
        "model,params,val_acc_best_pct,val_acc_mean_pct,val_acc_std_pct,\
         train_acc_best_pct,macro_f1_mean,wall_seconds_mean\n",
    );
    for m in &report.models {
        let _ = writeln!(
            summary,
            "{},{},{},{},{},{},{},{}",
            m.model,
            m.param_count,
            100.0 * m.val_accuracy.best,
            100.0 * m.val_accuracy.mean,
            100.0 * m.val_accuracy.std,
            100.0 * m.final_train_accuracy.best,
            m.macro_f1.mean,
            m.wall_seconds.mean,
        );
    }
    write_file(dir, "summary.csv", summary.as_bytes())?;

    // Per-epoch training curves (log10 loss included for convergence plots).
    let mut losses = String::from("model,seed,epoch,train_loss,log10_train_loss,train_accuracy\n");
    for m in &report.models {
        for r in &m.runs {
            for (e, (&loss, &acc)) in r
                .epoch_train_loss
                .iter()
                .zip(&r.epoch_train_accuracy)
                .enumerate()
            {
                let _ = writeln!(
                    losses,
                    "{},{},{},{},{},{}",
                    m.model,
                    r.seed,
                    e,
                    loss,
                    loss.log10(),
                    acc
                );
            }
        }
    }
    write_file(dir, "losses.csv", losses.as_bytes())?;

    // Confusion matrices in long form.
    let mut confusion = String::from("model,seed,true_class,predicted_class,count\n");
    for m in &report.models {
        for r in &m.runs {
            for (t, row) in r.confusion.rows().iter().enumerate() {
                for (p, &count) in row.iter().enumerate() {
                    let _ = writeln!(confusion, "{},{},{},{},{}", m.model, r.seed, t, p, count);
                }
            }
        }
    }
    write_file(dir, "confusion.csv", confusion.as_bytes())?;

    // How many of each class every model gets wrong.
    let mut mis = String::from("model,seed,class,class_name,support,misclassified\n");
    for m in &report.models {
        for r in &m.runs {
            for c in 0..r.confusion.classes() {
                let _ = writeln!(
                    mis,
                    "{},{},{},{},{},{}",
                    m.model,
                    r.seed,
                    c,
                    class_label(&report.dataset, c),
                    r.confusion.support(c),
                    r.confusion.misclassified(c)
                );
            }
        }
    }
    write_file(dir, "misclassified.csv", mis.as_bytes())
}

// ---------------------------------------------------------------------------
// Ablations
// ---------------------------------------------------------------------------

/// The BSRBF branch-removal variants, in presentation order. Labels follow
/// [`AblationFlags::label`]: `bs` = B-spline expansion, `rbf` = radial
/// expansion, `bo` = base (residual) branch, `ln` = layer normalization.
pub fn ablation_variants() -> [AblationFlags; 7] {
    let full = AblationFlags::default();
    [
        full,
        AblationFlags {
            use_bspline: false,
            ..full
        },
        AblationFlags {
            use_rbf: false,
            ..full
        },
        AblationFlags {
            use_bspline: false,
            use_rbf: false,
            ..full
        },
        AblationFlags {
            use_base: false,
            ..full
        },
        AblationFlags {
            use_layer_norm: false,
            ..full
        },
        AblationFlags {
            use_base: false,
            use_layer_norm: false,
            ..full
        },
    ]
}

/// One ablation variant's outcome; deltas are against the full model, in
/// accuracy fraction (negative = worse than full).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationEntry {
    pub label: String,
    pub flags: AblationFlags,
    pub delta_val_accuracy: f64,
    pub metrics: RunMetrics,
}

/// Outcome of [`ablation_suite`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub dataset: String,
    pub entries: Vec<AblationEntry>,
}

impl AblationReport {
    /// Copy with wall-clock fields zeroed (see [`ExperimentReport::without_timing`]).
    pub fn without_timing(&self) -> Self {
        let mut out = self.clone();
        for e in &mut out.entries {
            e.metrics = e.metrics.without_timing();
        }
        out
    }
}

/// Train every branch-removal variant of the BSRBF model from the same seed
/// and dataset, reporting each variant's accuracy delta against the full
/// model.
pub fn ablation_suite<F: Real>(
    base: &ModelConfig,
    dataset_name: &str,
    train: &Dataset<F>,
    val: &Dataset<F>,
    options: &TrainOptions,
) -> Result<AblationReport> {
    if base.kind != ModelKind::Bsrbf {
        return Err(Error::Config(format!(
            "ablations remove BSRBF branches; got model {}",
            base.kind.name()
        )));
    }
    let mut entries = Vec::with_capacity(7);
    let mut full_accuracy = 0.0;
    for (i, flags) in ablation_variants().into_iter().enumerate() {
        let cfg = base.clone().with_flags(flags);
        let outcome = train_run(&cfg, dataset_name, train, val, options)?;
        if i == 0 {
            full_accuracy = outcome.metrics.val_accuracy;
        }
        entries.push(AblationEntry {
            label: flags.label(),
            flags,
            delta_val_accuracy: outcome.metrics.val_accuracy - full_accuracy,
            metrics: outcome.metrics,
        });
    }
    Ok(AblationReport {
        dataset: dataset_name.to_string(),
        entries,
    })
}

/// Write `ablation.json` and `ablation.csv` into `dir`.
pub fn emit_ablation(dir: impl AsRef<Path>, report: &AblationReport, strip_timing: bool) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let report = if strip_timing {
        report.without_timing()
    } else {
        report.clone()
    };
    write_file(dir, "ablation.json", &serde_json::to_vec_pretty(&report)?)?;
    let mut csv = String::from(
        "variant,params,val_acc_pct,delta_val_acc_pct,train_acc_pct,macro_f1,wall_seconds\n",
    );
    for e in &report.entries {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            e.label,
            e.metrics.param_count,
            100.0 * e.metrics.val_accuracy,
            100.0 * e.delta_val_accuracy,
            100.0 * e.metrics.final_train_accuracy,
            e.metrics.macro_f1,
            e.metrics.wall_seconds,
        );
    }
    write_file(dir, "ablation.csv", csv.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use crate::rng::SeededRng;

    #[test]
    fn stats_match_hand_computation() {
        let s = Stats::from_values(&[0.1, 0.2, 0.4]).unwrap();
        assert_eq!(s.best, 0.4);
        assert_eq!(s.mean, 0.23333333333333336);
        assert_eq!(s.std, 0.12472191289246473);
        let one = Stats::from_values(&[0.7]).unwrap();
        assert_eq!(one.best, 0.7);
        assert_eq!(one.mean, 0.7);
        assert_eq!(one.std, 0.0);
        assert!(Stats::from_values(&[]).is_err());
    }

    fn blobs(n_per_class: usize, seed: u64) -> Dataset<f64> {
        let n = n_per_class * 3;
        let mut rng = SeededRng::new(seed);
        let mut images = Matrix::zeros(n, 8);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let c = i % 3;
            let row = images.row_mut(i);
            for v in row.iter_mut() {
                *v = rng.uniform(-0.3, 0.3);
            }
            row[2 * c] += 3.0;
            labels.push(c as u8);
        }
        Dataset::new(images, labels, 3).unwrap()
    }

    fn tiny_options() -> TrainOptions {
        TrainOptions {
            epochs: 2,
            batch_size: 16,
            lr: 5e-3,
            ..Default::default()
        }
    }

    fn tiny_runs(seeds: &[u64]) -> Vec<RunMetrics> {
        let train = blobs(12, 110);
        let val = blobs(5, 111);
        seeds
            .iter()
            .map(|&s| {
                let cfg = ModelConfig::new(ModelKind::Bsrbf)
                    .with_widths(vec![8, 6, 3])
                    .with_seed(s);
                train_run(&cfg, "blobs", &train, &val, &tiny_options())
                    .unwrap()
                    .metrics
            })
            .collect()
    }

    #[test]
    fn summaries_aggregate_across_seeds() {
        let runs = tiny_runs(&[0, 1, 2]);
        let accs: Vec<f64> = runs.iter().map(|r| r.val_accuracy).collect();
        let summary = summarize_runs(runs).unwrap();
        assert_eq!(summary.seeds, vec![0, 1, 2]);
        assert_eq!(summary.val_accuracy, Stats::from_values(&accs).unwrap());
        assert_eq!(summary.runs.len(), 3);
        assert_eq!(summary.model, "bsrbf_kan");
    }

    #[test]
    fn mixed_runs_are_rejected() {
        let mut runs = tiny_runs(&[0]);
        let mut other = runs[0].clone();
        other.model = "mlp".into();
        runs.push(other);
        assert!(summarize_runs(runs).is_err());
        assert!(summarize_runs(Vec::new()).is_err());
    }

    #[test]
    fn emitted_reports_are_deterministic_after_timing_strip() {
        let make = || {
            let summary = summarize_runs(tiny_runs(&[0, 1])).unwrap();
            ExperimentReport::new("blobs", vec![summary])
        };
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        emit_report(&a, &make(), true).unwrap();
        emit_report(&b, &make(), true).unwrap();
        for name in [
            "report.json",
            "summary.csv",
            "losses.csv",
            "confusion.csv",
            "misclassified.csv",
        ] {
            let fa = std::fs::read(a.join(name)).unwrap();
            let fb = std::fs::read(b.join(name)).unwrap();
            assert!(!fa.is_empty());
            assert_eq!(fa, fb, "{name} differs between identical runs");
        }
        // Without the strip, the JSON usually differs (timing noise), but
        // the loss curves are still identical.
        let c = dir.path().join("c");
        emit_report(&c, &make(), false).unwrap();
        assert_eq!(
            std::fs::read(a.join("losses.csv")).unwrap(),
            std::fs::read(c.join("losses.csv")).unwrap()
        );
    }

    #[test]
    fn csv_layouts_are_stable() {
        let summary = summarize_runs(tiny_runs(&[0])).unwrap();
        let report = ExperimentReport::new("blobs", vec![summary]);
        let dir = tempfile::tempdir().unwrap();
        emit_report(dir.path(), &report, true).unwrap();
        let losses = std::fs::read_to_string(dir.path().join("losses.csv")).unwrap();
        let mut lines = losses.lines();
        assert_eq!(
            lines.next().unwrap(),
            "model,seed,epoch,train_loss,log10_train_loss,train_accuracy"
        );
        // Two epochs for one seed -> exactly two data rows.
        assert_eq!(lines.count(), 2);
        let mis = std::fs::read_to_string(dir.path().join("misclassified.csv")).unwrap();
        // Unknown dataset names fall back to class indices.
        assert!(mis.lines().nth(1).unwrap().starts_with("bsrbf_kan,0,0,0,"));
        let confusion = std::fs::read_to_string(dir.path().join("confusion.csv")).unwrap();
        assert_eq!(confusion.lines().count(), 1 + 9, "3x3 matrix in long form");
    }

    #[test]
    fn class_names_appear_for_known_datasets() {
        assert_eq!(class_label("fashion", 9), "Ankle boot");
        assert_eq!(class_label("mnist", 3), "3");
        assert_eq!(class_label("blobs", 2), "2");
    }

    #[test]
    fn ablation_variant_labels_are_ordered() {
        let labels: Vec<String> = ablation_variants().iter().map(|f| f.label()).collect();
        assert_eq!(
            labels,
            vec![
                "full",
                "no_bs",
                "no_rbf",
                "no_bs_no_rbf",
                "no_bo",
                "no_ln",
                "no_bo_no_ln"
            ]
        );
    }

    #[test]
    fn ablation_suite_trains_all_variants() {
        let train = blobs(12, 112);
        let val = blobs(5, 113);
        let base = ModelConfig::new(ModelKind::Bsrbf).with_widths(vec![8, 6, 3]);
        let report = ablation_suite(&base, "blobs", &train, &val, &tiny_options()).unwrap();
        assert_eq!(report.entries.len(), 7);
        assert_eq!(report.entries[0].label, "full");
        assert_eq!(report.entries[0].delta_val_accuracy, 0.0);
        let full_acc = report.entries[0].metrics.val_accuracy;
        for e in &report.entries[1..] {
            assert_eq!(e.delta_val_accuracy, e.metrics.val_accuracy - full_acc);
            assert_eq!(e.metrics.config.flags, e.flags);
        }
        // The no-spline/no-rbf variant has the fewest parameters.
        let params: Vec<usize> = report.entries.iter().map(|e| e.metrics.param_count).collect();
        let min = params.iter().min().unwrap();
        assert_eq!(params[3], *min);
        // Emission works and is deterministic under strip.
        let dir = tempfile::tempdir().unwrap();
        emit_ablation(dir.path(), &report, true).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("ablation.csv")).unwrap();
        assert_eq!(csv.lines().count(), 8);
        assert!(csv.lines().nth(1).unwrap().starts_with("full,"));
        // Non-BSRBF base is rejected.
        let bad = ModelConfig::new(ModelKind::Mlp).with_widths(vec![8, 6, 3]);
        assert!(ablation_suite(&bad, "blobs", &train, &val, &tiny_options()).is_err());
    }
}
