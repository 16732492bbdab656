//! Experiment runner: `run` executes one continual-learning experiment,
//! `grid` sweeps hyperparameter lists, `report` assembles a comparison
//! table from persisted records, and `check` runs the fast numeric
//! verification suites.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use vdp_core::continual::{run_continual, Architecture, ContinualConfig, Regime};
use vdp_core::data::{
    load_cifar10, load_mnist_idx, make_permuted_tasks, make_split_tasks, LabeledDataset,
    SplitKind, TaskDataset,
};
use vdp_core::results::{ConfigEcho, ExperimentRecord, CSV_HEADER};

const DATA_DIR_ENV: &str = "VDP_DATA_DIR";

#[derive(Parser)]
#[command(name = "vdp", version, about = "Continual learning with variational density propagation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its record and checkpoints.
    Run(RunArgs),
    /// Run every cell of a hyperparameter grid.
    Grid(GridArgs),
    /// Assemble a comparison table from record files.
    Report(ReportArgs),
    /// Run the fast gradient and oracle verification suites.
    Check,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// One of: split-mnist-2, split-mnist-5, permuted-mnist,
    /// split-cifar10-2, split-cifar10-5.
    #[arg(long)]
    dataset: Option<String>,
    /// One of: vdp-pc, vdp-ft, vdp-fe, vdp-jt, det-sh, det-ft, det-fe, det-jt.
    #[arg(long)]
    regime: Option<String>,
    /// KL weight for the first task.
    #[arg(long)]
    tau0: Option<f64>,
    /// KL weight for subsequent tasks.
    #[arg(long)]
    tau1: Option<f64>,
    /// Mean of the rho initialization distribution.
    #[arg(long)]
    pi: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Epochs per task (default 10 for MNIST, 20 for CIFAR-10).
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    /// Initial learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Dataset directory (default: $VDP_DATA_DIR, then ./data).
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// TOML config file; its values win over flags, with a warning.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct GridArgs {
    #[command(flatten)]
    base: RunArgs,
    /// Comma-separated tau1 values, one grid cell each.
    #[arg(long, value_delimiter = ',')]
    tau1_grid: Option<Vec<f64>>,
    /// Comma-separated seeds, one grid cell each.
    #[arg(long, value_delimiter = ',')]
    seed_grid: Option<Vec<u64>>,
    /// Comma-separated regimes, one grid cell each.
    #[arg(long, value_delimiter = ',')]
    regime_grid: Option<Vec<String>>,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory of record files (defaults to ./results).
    #[arg(long)]
    records: Option<PathBuf>,
    /// Optional path for a flat CSV copy of the table.
    #[arg(long)]
    csv: Option<PathBuf>,
}

/// TOML mirror of the run flags. Unknown keys are rejected.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    dataset: Option<String>,
    regime: Option<String>,
    tau0: Option<f64>,
    tau1: Option<f64>,
    pi: Option<f64>,
    seed: Option<u64>,
    epochs: Option<usize>,
    batch: Option<usize>,
    lr: Option<f64>,
    data_dir: Option<PathBuf>,
    out_dir: Option<PathBuf>,
}

/// Fully resolved settings for one run.
#[derive(Debug, Clone)]
struct Settings {
    dataset: String,
    regime: Regime,
    tau0: f64,
    tau1: f64,
    pi: f64,
    seed: u64,
    epochs: usize,
    batch: usize,
    lr: f64,
    data_dir: PathBuf,
    out_dir: PathBuf,
}

fn merge<T: Clone + std::fmt::Debug>(
    name: &str,
    flag: &Option<T>,
    file: &Option<T>,
) -> Option<T> {
    match (flag, file) {
        (Some(f), Some(c)) => {
            eprintln!("warning: --{name} {f:?} overridden by config value {c:?}");
            Some(c.clone())
        }
        (None, Some(c)) => Some(c.clone()),
        (Some(f), None) => Some(f.clone()),
        (None, None) => None,
    }
}

fn resolve(args: &RunArgs) -> Result<Settings, String> {
    let file: FileConfig = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
            toml::from_str(&text).map_err(|e| format!("bad config {}: {e}", path.display()))?
        }
        None => FileConfig::default(),
    };
    let dataset = merge("dataset", &args.dataset, &file.dataset)
        .ok_or("dataset is required (flag --dataset or config key)")?;
    if !matches!(
        dataset.as_str(),
        "split-mnist-2" | "split-mnist-5" | "permuted-mnist" | "split-cifar10-2" | "split-cifar10-5"
    ) {
        return Err(format!("unknown dataset '{dataset}'"));
    }
    let regime_name = merge("regime", &args.regime, &file.regime).unwrap_or_else(|| "vdp-pc".into());
    let regime = Regime::parse(&regime_name).map_err(|e| e.to_string())?;
    let default_epochs = if dataset.starts_with("split-cifar10") { 20 } else { 10 };
    let data_dir = merge("data-dir", &args.data_dir, &file.data_dir)
        .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("data"));
    Ok(Settings {
        dataset,
        regime,
        tau0: merge("tau0", &args.tau0, &file.tau0).unwrap_or(1e-4),
        tau1: merge("tau1", &args.tau1, &file.tau1).unwrap_or(1e-2),
        pi: merge("pi", &args.pi, &file.pi).unwrap_or(-12.0),
        seed: merge("seed", &args.seed, &file.seed).unwrap_or(1),
        epochs: merge("epochs", &args.epochs, &file.epochs).unwrap_or(default_epochs),
        batch: merge("batch", &args.batch, &file.batch).unwrap_or(128),
        lr: merge("lr", &args.lr, &file.lr).unwrap_or(1e-3),
        data_dir,
        out_dir: merge("out-dir", &args.out_dir, &file.out_dir)
            .unwrap_or_else(|| PathBuf::from("results")),
    })
}

fn load_tasks(s: &Settings) -> Result<Vec<TaskDataset>, String> {
    let dir = &s.data_dir;
    let mnist = |split: SplitKind| -> Result<Arc<LabeledDataset>, String> {
        let (img, lbl) = match split {
            SplitKind::Train => ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
            SplitKind::Test => ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
        };
        load_mnist_idx(&dir.join(img), &dir.join(lbl), split)
            .map(Arc::new)
            .map_err(|e| format!("loading MNIST from {}: {e}", dir.display()))
    };
    match s.dataset.as_str() {
        "split-mnist-2" => make_split_tasks(mnist(SplitKind::Train)?, mnist(SplitKind::Test)?, 2)
            .map_err(|e| e.to_string()),
        "split-mnist-5" => make_split_tasks(mnist(SplitKind::Train)?, mnist(SplitKind::Test)?, 5)
            .map_err(|e| e.to_string()),
        "permuted-mnist" => Ok(make_permuted_tasks(
            mnist(SplitKind::Train)?,
            mnist(SplitKind::Test)?,
            10,
            s.seed,
        )),
        "split-cifar10-2" | "split-cifar10-5" => {
            let sub = dir.join("cifar-10-batches-bin");
            let train_paths: Vec<PathBuf> =
                (1..=5).map(|i| sub.join(format!("data_batch_{i}.bin"))).collect();
            let train_refs: Vec<&Path> = train_paths.iter().map(|p| p.as_path()).collect();
            let train = load_cifar10(&train_refs, true, SplitKind::Train)
                .map_err(|e| format!("loading CIFAR-10 from {}: {e}", sub.display()))?;
            let test_path = sub.join("test_batch.bin");
            let test = load_cifar10(&[test_path.as_path()], true, SplitKind::Test)
                .map_err(|e| format!("loading CIFAR-10 from {}: {e}", sub.display()))?;
            let n = if s.dataset.ends_with('2') { 2 } else { 5 };
            make_split_tasks(Arc::new(train), Arc::new(test), n).map_err(|e| e.to_string())
        }
        other => Err(format!("unknown dataset '{other}'")),
    }
}

fn architecture(dataset: &str) -> Architecture {
    if dataset.starts_with("split-cifar10") {
        Architecture::Conv32
    } else {
        Architecture::Mlp { input: 784, hidden: vec![1200] }
    }
}

fn run_stem(s: &Settings) -> String {
    format!("{}-{}-seed{}", s.dataset, s.regime.name(), s.seed)
}

fn execute_run(s: &Settings) -> Result<(), String> {
    let tasks = load_tasks(s)?;
    let cfg = ContinualConfig {
        regime: s.regime,
        arch: architecture(&s.dataset),
        tau0: s.tau0,
        tau1: s.tau1,
        pi: s.pi,
        seed: s.seed,
        epochs: s.epochs,
        batch_size: s.batch,
        lr0: s.lr,
    };
    let started = Instant::now();
    let out = run_continual(&cfg, &tasks).map_err(|e| e.to_string())?;
    let record = ExperimentRecord::new(
        ConfigEcho {
            dataset: s.dataset.clone(),
            regime: s.regime.name().into(),
            tau0: s.tau0,
            tau1: s.tau1,
            pi: s.pi,
            seed: s.seed,
            epochs: s.epochs,
            batch_size: s.batch,
            lr0: s.lr,
        },
        &out.results,
        out.loss_histories,
        started.elapsed().as_secs_f64(),
    )
    .map_err(|e| e.to_string())?;

    std::fs::create_dir_all(&s.out_dir)
        .map_err(|e| format!("cannot create {}: {e}", s.out_dir.display()))?;
    let stem = run_stem(s);
    let record_path = s.out_dir.join(format!("{stem}.json"));
    record.save(&record_path).map_err(|e| e.to_string())?;
    for (t, bytes) in out.checkpoints.iter().enumerate() {
        std::fs::write(s.out_dir.join(format!("{stem}-task{t}.ckpt")), bytes)
            .map_err(|e| format!("writing checkpoint: {e}"))?;
    }
    println!(
        "{stem}: ACC {:.2}%  BWT {:+.2} pp  ({:.1}s)  -> {}",
        record.acc,
        record.bwt,
        record.wall_clock_secs,
        record_path.display()
    );
    Ok(())
}

fn execute_grid(args: &GridArgs) -> Result<(), String> {
    let base = resolve(&args.base)?;
    let tau1s = args.tau1_grid.clone().unwrap_or_else(|| vec![base.tau1]);
    let seeds = args.seed_grid.clone().unwrap_or_else(|| vec![base.seed]);
    let regimes: Vec<Regime> = match &args.regime_grid {
        Some(names) => names
            .iter()
            .map(|n| Regime::parse(n).map_err(|e| e.to_string()))
            .collect::<Result<_, _>>()?,
        None => vec![base.regime],
    };
    let mut failures = Vec::new();
    for &tau1 in &tau1s {
        for &seed in &seeds {
            for &regime in &regimes {
                let cell = Settings { tau1, seed, regime, ..base.clone() };
                if let Err(e) = execute_run(&cell) {
                    eprintln!("grid cell {}: {e}", run_stem(&cell));
                    failures.push(run_stem(&cell));
                }
            }
        }
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(format!("{} grid cell(s) failed", failures.len()))
    }
}

fn execute_report(args: &ReportArgs) -> Result<(), String> {
    let dir = args.records.clone().unwrap_or_else(|| PathBuf::from("results"));
    let mut records = Vec::new();
    let entries =
        std::fs::read_dir(&dir).map_err(|e| format!("cannot read {}: {e}", dir.display()))?;
    for entry in entries {
        let path = entry.map_err(|e| e.to_string())?.path();
        if path.extension().map(|e| e == "json").unwrap_or(false) {
            records.push(
                ExperimentRecord::load(&path).map_err(|e| format!("{}: {e}", path.display()))?,
            );
        }
    }
    if records.is_empty() {
        return Err(format!("no record files in {}", dir.display()));
    }
    records.sort_by(|a, b| {
        (&a.config.dataset, &a.config.regime, a.config.seed)
            .cmp(&(&b.config.dataset, &b.config.regime, b.config.seed))
    });
    println!("{:<18} {:<8} {:>5} {:>8} {:>8}", "dataset", "regime", "seed", "ACC%", "BWT pp");
    for r in &records {
        println!(
            "{:<18} {:<8} {:>5} {:>8.2} {:>+8.2}",
            r.config.dataset, r.config.regime, r.config.seed, r.acc, r.bwt
        );
    }
    if let Some(csv_path) = &args.csv {
        let mut csv = String::from(CSV_HEADER);
        csv.push('\n');
        for r in &records {
            csv.push_str(&r.csv_line());
            csv.push('\n');
        }
        std::fs::write(csv_path, csv).map_err(|e| format!("writing {}: {e}", csv_path.display()))?;
        println!("csv written to {}", csv_path.display());
    }
    Ok(())
}

mod check;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => resolve(args).and_then(|s| execute_run(&s)),
        Command::Grid(args) => execute_grid(args),
        Command::Report(args) => execute_report(args),
        Command::Check => check::execute(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
