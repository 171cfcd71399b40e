//! Command-line experiment harness: train single models, compare all
//! architectures, run the BSRBF ablation suite, evaluate saved models, and
//! assemble reports from saved run metrics.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bsrbf_kan::data::{Dataset, DatasetName, Normalization, Split};
use bsrbf_kan::error::{Error, Result};
use bsrbf_kan::metrics::evaluate;
use bsrbf_kan::model::{ModelConfig, ModelKind, Network};
use bsrbf_kan::report::{
    ablation_suite, emit_ablation, emit_report, summarize_runs, ExperimentReport, ModelSummary,
};
use bsrbf_kan::train::{train_run_with, EpochProgress, RunMetrics, TrainOptions};

#[derive(Parser)]
#[command(
    name = "bsrbf-kan",
    version,
    about = "Train and evaluate BSRBF-KAN and baseline models on MNIST-style datasets"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and report its test accuracy
    Train(TrainArgs),
    /// Train several models over several seeds and emit a comparison report
    Compare(CompareArgs),
    /// Train every BSRBF branch-removal variant and compare them
    Ablate(AblateArgs),
    /// Evaluate a saved model file on a dataset split
    Evaluate(EvaluateArgs),
    /// Assemble report files from saved per-run metrics JSONs
    Report(ReportArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Dataset: mnist or fashion
    #[arg(long)]
    dataset: String,
    /// Directory containing one folder per dataset (default: $BSRBF_DATA_DIR
    /// or ./data)
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Normalization mean applied after scaling pixels to [0, 1]
    #[arg(long, default_value_t = 0.5)]
    mean: f64,
    /// Normalization standard deviation
    #[arg(long, default_value_t = 0.5)]
    std: f64,
    /// Use only the first N training examples
    #[arg(long)]
    train_limit: Option<usize>,
    /// Use only the first N test examples
    #[arg(long)]
    test_limit: Option<usize>,
}

impl DataArgs {
    fn dataset_name(&self) -> Result<DatasetName> {
        DatasetName::parse(&self.dataset)
    }

    fn dataset_dir(&self) -> Result<PathBuf> {
        let name = self.dataset_name()?;
        let base = self
            .data_dir
            .clone()
            .or_else(|| std::env::var_os("BSRBF_DATA_DIR").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("data"));
        Ok(base.join(name.name()))
    }

    fn load(&self) -> Result<(Dataset<f64>, Dataset<f64>)> {
        let dir = self.dataset_dir()?;
        let norm = Normalization::new(self.mean, self.std)?;
        let mut train = Dataset::load(&dir, Split::Train, norm)?;
        let mut test = Dataset::load(&dir, Split::Test, norm)?;
        if let Some(n) = self.train_limit {
            train = train.subset(n);
        }
        if let Some(n) = self.test_limit {
            test = test.subset(n);
        }
        Ok((train, test))
    }
}

#[derive(Args)]
struct HyperArgs {
    /// Training epochs (default: 15 for mnist, 25 for fashion)
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    /// Base learning rate; epoch e uses lr * gamma^e
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 1e-4)]
    weight_decay: f64,
    /// Per-epoch learning-rate decay factor
    #[arg(long, default_value_t = 0.8)]
    gamma: f64,
}

impl HyperArgs {
    fn options(&self, dataset: DatasetName) -> TrainOptions {
        let epochs = self.epochs.unwrap_or(match dataset {
            DatasetName::Mnist => 15,
            DatasetName::Fashion => 25,
        });
        TrainOptions {
            epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            weight_decay: self.weight_decay,
            gamma: self.gamma,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    hyper: HyperArgs,
    /// Model: bsrbf_kan, fast_kan, faster_kan, efficient_kan, gottlieb_kan,
    /// or mlp
    #[arg(long, default_value = "bsrbf_kan")]
    model: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Layer widths, comma separated (default: 784,64,10; gottlieb_kan uses
    /// 784,64,64,10)
    #[arg(long)]
    widths: Option<String>,
    /// Directory receiving model.json and metrics.json for this run
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the trained model to this JSON file
    #[arg(long)]
    save_model: Option<PathBuf>,
    /// Write this run's metrics to this JSON file
    #[arg(long)]
    save_metrics: Option<PathBuf>,
    /// Print metrics as JSON on stdout instead of text
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    hyper: HyperArgs,
    /// Models to train, comma separated (default: all six)
    #[arg(long)]
    models: Option<String>,
    /// Number of runs per model, using seeds 0..N
    #[arg(long, conflicts_with = "seeds")]
    runs: Option<u64>,
    /// Seeds to train each model with, comma separated
    #[arg(long, default_value = "0")]
    seeds: String,
    /// Directory for report.json and the CSV side tables
    #[arg(long)]
    out: Option<PathBuf>,
    /// Zero wall-clock fields so emitted files are byte-reproducible
    #[arg(long)]
    strip_timing: bool,
    /// Print the report as JSON on stdout instead of text
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    hyper: HyperArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for ablation.json and ablation.csv
    #[arg(long)]
    out: Option<PathBuf>,
    /// Zero wall-clock fields so emitted files are byte-reproducible
    #[arg(long)]
    strip_timing: bool,
    /// Print the report as JSON on stdout instead of text
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Saved model JSON produced by `train --save-model`
    #[arg(long)]
    model_file: PathBuf,
    /// Split to evaluate: test or train
    #[arg(long, default_value = "test")]
    split: String,
    /// Print metrics as JSON on stdout instead of text
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory containing per-run metrics JSONs (from `train --out` or
    /// `--save-metrics`)
    #[arg(long = "in")]
    input: PathBuf,
    /// Stdout format: json (full report) or csv (summary table)
    #[arg(long, default_value = "json")]
    format: String,
    /// Also write report.json and the CSV side tables to this directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Zero wall-clock fields so emitted files are byte-reproducible
    #[arg(long)]
    strip_timing: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Ablate(args) => cmd_ablate(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Report(args) => cmd_report(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn parse_widths(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("bad width {t:?} in {s:?}")))
        })
        .collect()
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<u64>()
                .map_err(|_| Error::Config(format!("bad seed {t:?} in {s:?}")))
        })
        .collect()
}

fn percent(frac: f64) -> String {
    format!("{:.2}%", 100.0 * frac)
}

fn progress_line(model: &str, seed: u64, p: &EpochProgress) {
    eprintln!(
        "[{model} seed {seed}] epoch {:>2}/{} lr {:.3e} loss {:.4} train acc {}",
        p.epoch + 1,
        p.total_epochs,
        p.lr,
        p.mean_loss,
        percent(p.train_accuracy)
    );
}

fn run_one(
    kind: ModelKind,
    widths: Option<&Vec<usize>>,
    seed: u64,
    dataset: DatasetName,
    train: &Dataset<f64>,
    test: &Dataset<f64>,
    options: &TrainOptions,
) -> Result<(Network<f64>, RunMetrics)> {
    let mut config = ModelConfig::new(kind).with_seed(seed);
    if let Some(w) = widths {
        config = config.with_widths(w.clone());
    }
    let name = kind.name().to_string();
    let outcome = train_run_with(&config, dataset.name(), train, test, options, |p| {
        progress_line(&name, seed, p)
    })?;
    Ok((outcome.network, outcome.metrics))
}

fn print_confusion(metrics: &RunMetrics) {
    println!("confusion matrix (rows = true class, columns = predicted):");
    let classes = metrics.confusion.classes();
    print!("      ");
    for p in 0..classes {
        print!("{p:>6}");
    }
    println!();
    for t in 0..classes {
        print!("{t:>6}");
        for p in 0..classes {
            print!("{:>6}", metrics.confusion.count(t, p));
        }
        println!();
    }
}

fn print_run(metrics: &RunMetrics) {
    println!(
        "{} on {} (seed {}): {} parameters",
        metrics.model, metrics.dataset, metrics.seed, metrics.param_count
    );
    println!(
        "  final train accuracy {}  test accuracy {}  macro F1 {:.4}  ({:.1}s)",
        percent(metrics.final_train_accuracy),
        percent(metrics.val_accuracy),
        metrics.macro_f1,
        metrics.wall_seconds
    );
    print_confusion(metrics);
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let dataset = args.data.dataset_name()?;
    let kind = ModelKind::parse(&args.model)?;
    let widths = args.widths.as_deref().map(parse_widths).transpose()?;
    let options = args.hyper.options(dataset);
    let (train, test) = args.data.load()?;
    let (network, metrics) = run_one(
        kind,
        widths.as_ref(),
        args.seed,
        dataset,
        &train,
        &test,
        &options,
    )?;
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        network.save_json(dir.join("model.json"))?;
        write_json(&dir.join("metrics.json"), &metrics)?;
        eprintln!("model and metrics written to {}", dir.display());
    }
    if let Some(path) = &args.save_model {
        network.save_json(path)?;
        eprintln!("model written to {}", path.display());
    }
    if let Some(path) = &args.save_metrics {
        write_json(path, &metrics)?;
        eprintln!("metrics written to {}", path.display());
    }
    if args.json {
        println!("{}", serde_json::to_string_pretty(&metrics).map_err(Error::from)?);
    } else {
        print_run(&metrics);
    }
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> Result<()> {
    let dataset = args.data.dataset_name()?;
    let options = args.hyper.options(dataset);
    let kinds: Vec<ModelKind> = match &args.models {
        Some(list) => list
            .split(',')
            .map(|t| ModelKind::parse(t.trim()))
            .collect::<Result<_>>()?,
        None => ModelKind::all().to_vec(),
    };
    let seeds = match args.runs {
        Some(n) if n == 0 => return Err(Error::Config("need at least one run".into())),
        Some(n) => (0..n).collect(),
        None => parse_seeds(&args.seeds)?,
    };
    if seeds.is_empty() {
        return Err(Error::Config("need at least one seed".into()));
    }
    let (train, test) = args.data.load()?;
    let mut summaries: Vec<ModelSummary> = Vec::new();
    for kind in kinds {
        let mut runs = Vec::new();
        for &seed in &seeds {
            let (_, metrics) = run_one(kind, None, seed, dataset, &train, &test, &options)?;
            runs.push(metrics);
        }
        summaries.push(summarize_runs(runs)?);
    }
    let report = ExperimentReport::new(dataset.name(), summaries);
    if let Some(out) = &args.out {
        emit_report(out, &report, args.strip_timing)?;
        eprintln!("report written to {}", out.display());
    }
    if args.json {
        let shown = if args.strip_timing {
            report.without_timing()
        } else {
            report.clone()
        };
        println!("{}", serde_json::to_string_pretty(&shown).map_err(Error::from)?);
    } else {
        println!("results on {} over seeds {:?}:", report.dataset, seeds);
        println!(
            "{:<14} {:>9} {:>10} {:>18} {:>10}",
            "model", "params", "best acc", "mean acc (std)", "mean F1"
        );
        for m in &report.models {
            println!(
                "{:<14} {:>9} {:>10} {:>10} ({:.2}) {:>10.4}",
                m.model,
                m.param_count,
                percent(m.val_accuracy.best),
                percent(m.val_accuracy.mean),
                100.0 * m.val_accuracy.std,
                m.macro_f1.mean
            );
        }
    }
    Ok(())
}

fn cmd_ablate(args: AblateArgs) -> Result<()> {
    let dataset = args.data.dataset_name()?;
    let options = args.hyper.options(dataset);
    let (train, test) = args.data.load()?;
    let base = ModelConfig::new(ModelKind::Bsrbf).with_seed(args.seed);
    eprintln!(
        "training 7 BSRBF variants on {} (seed {})...",
        dataset.name(),
        args.seed
    );
    let report = ablation_suite(&base, dataset.name(), &train, &test, &options)?;
    if let Some(out) = &args.out {
        emit_ablation(out, &report, args.strip_timing)?;
        eprintln!("ablation report written to {}", out.display());
    }
    if args.json {
        let shown = if args.strip_timing {
            report.without_timing()
        } else {
            report.clone()
        };
        println!("{}", serde_json::to_string_pretty(&shown).map_err(Error::from)?);
    } else {
        println!("BSRBF ablations on {} (seed {}):", report.dataset, args.seed);
        println!(
            "{:<14} {:>9} {:>10} {:>10} {:>10}",
            "variant", "params", "test acc", "delta", "F1"
        );
        for e in &report.entries {
            println!(
                "{:<14} {:>9} {:>10} {:>+9.2}pp {:>10.4}",
                e.label,
                e.metrics.param_count,
                percent(e.metrics.val_accuracy),
                100.0 * e.delta_val_accuracy,
                e.metrics.macro_f1
            );
        }
    }
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let split = match args.split.to_ascii_lowercase().as_str() {
        "test" => Split::Test,
        "train" => Split::Train,
        other => return Err(Error::Config(format!("unknown split: {other}"))),
    };
    let dir = args.data.dataset_dir()?;
    let norm = Normalization::new(args.data.mean, args.data.std)?;
    let mut dataset = Dataset::load(&dir, split, norm)?;
    if let Some(n) = args.data.test_limit {
        dataset = dataset.subset(n);
    }
    let mut network = Network::<f64>::load_json(&args.model_file)?;
    let eval = evaluate(&mut network, &dataset, 256)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&eval).map_err(Error::from)?);
    } else {
        println!(
            "{} on {} {}: accuracy {}  macro F1 {:.4}  ({} examples)",
            network.config().kind.name(),
            args.data.dataset,
            args.split,
            percent(eval.accuracy),
            eval.macro_f1,
            dataset.len()
        );
    }
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    // Collect every *.json in the input directory that parses as RunMetrics,
    // in sorted order for stable grouping.
    let dir = &args.input;
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut by_model: Vec<(String, Vec<RunMetrics>)> = Vec::new();
    let mut dataset: Option<String> = None;
    for path in &paths {
        let bytes = read_file(path)?;
        let Ok(run) = serde_json::from_slice::<RunMetrics>(&bytes) else {
            continue; // not a run-metrics file (e.g. a saved model)
        };
        match &dataset {
            None => dataset = Some(run.dataset.clone()),
            Some(d) if *d != run.dataset => {
                return Err(Error::Config(format!(
                    "cannot mix datasets {d} and {} in one report",
                    run.dataset
                )));
            }
            Some(_) => {}
        }
        match by_model.iter_mut().find(|(m, _)| *m == run.model) {
            Some((_, runs)) => runs.push(run),
            None => by_model.push((run.model.clone(), vec![run])),
        }
    }
    let dataset = dataset.ok_or_else(|| {
        Error::Config(format!("no run metrics found under {}", dir.display()))
    })?;
    let summaries = by_model
        .into_iter()
        .map(|(_, runs)| summarize_runs(runs))
        .collect::<Result<Vec<_>>>()?;
    let mut report = ExperimentReport::new(dataset, summaries);
    if args.strip_timing {
        report = report.without_timing();
    }
    if let Some(out) = &args.out {
        emit_report(out, &report, args.strip_timing)?;
        eprintln!("report written to {}", out.display());
    }
    match args.format.to_ascii_lowercase().as_str() {
        "json" => println!("{}", serde_json::to_string_pretty(&report).map_err(Error::from)?),
        "csv" => {
            println!("model,params,val_acc_best,val_acc_mean,val_acc_std,macro_f1_mean");
            for m in &report.models {
                println!(
                    "{},{},{},{},{},{}",
                    m.model,
                    m.param_count,
                    m.val_accuracy.best,
                    m.val_accuracy.mean,
                    m.val_accuracy.std,
                    m.macro_f1.mean
                );
            }
        }
        other => return Err(Error::Config(format!("unknown format: {other}"))),
    }
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let bytes = serde_json::to_vec_pretty(value).map_err(Error::from)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))
}
