//! `veritas` command-line front end.
//!
//! Exit codes: 0 success, 1 per-item failures under `--strict` (or invalid
//! reports for `report-validate`) and fatal runtime errors, 2 configuration
//! and usage errors.

mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use veritas_core::backends::{self, build_backends, BackendFamily, BackendSet};
use veritas_core::dataset::{ingest_cifake, DatasetEntry};
use veritas_core::ensemble::{search_weights, ValidationTable};
use veritas_core::explainer::{parse_report, run_batch, BatchItem, BatchOptions};
use veritas_core::robustness::{evaluate_robustness, write_robustness_csv, LabeledImage};
use veritas_core::{Image, Label};

use config::RunConfig;

#[derive(Debug, Parser)]
#[command(
    name = "veritas",
    version,
    about = "Explainable synthetic-image forensics"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Single input image.
    #[arg(long, global = true, conflicts_with = "dataset")]
    image: Option<PathBuf>,
    /// CIFAKE-layout dataset root ({train,test}/{REAL,FAKE}).
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    /// Output directory (analyze) or file (other commands; stdout if omitted).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Backend family.
    #[arg(long, global = true, value_parser = ["mock", "real"])]
    backends: Option<String>,
    /// Process at most this many dataset entries.
    #[arg(long, global = true)]
    limit: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    threshold: Option<f64>,
    #[arg(long, global = true)]
    patch_size: Option<usize>,
    #[arg(long, global = true)]
    sr_factor: Option<usize>,
    /// Attack budget(s), comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    epsilon: Option<Vec<f64>>,
    #[arg(long, global = true)]
    iterations: Option<usize>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// fgsm, pgd, wavelet, autoattack or autoattack:<a>+<b>...
    #[arg(long, global = true)]
    attack: Option<String>,
    /// Exit with status 1 if any item fails.
    #[arg(long, global = true)]
    strict: bool,
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Per-image verdict CSV.
    Classify,
    /// Full artifact analysis; one report per image plus an index.
    Analyze {
        /// Also write heatmap overlay PNGs.
        #[arg(long)]
        overlays: bool,
    },
    /// Accuracy under attack as CSV.
    Attack {
        /// Label of a single `--image`.
        #[arg(long)]
        label: Option<Label>,
    },
    /// Search ensemble weights on a member-probability table.
    TuneEnsemble {
        /// CSV with header sample_id,label,<member>...
        #[arg(long)]
        table: PathBuf,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Validate report files (or directories of them).
    ReportValidate {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
}

enum Failure {
    Config(String),
    Runtime(anyhow::Error),
    Items(usize),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

type Outcome = Result<usize, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = resolve_config(&cli.common).and_then(|cfg| run(&cli, &cfg));
    match result {
        Ok(failed) if failed > 0 && cli.common.strict => {
            eprintln!("error: {failed} item(s) failed");
            ExitCode::from(1)
        }
        Ok(_) => ExitCode::SUCCESS,
        Err(Failure::Items(n)) => {
            eprintln!("error: {n} item(s) failed");
            ExitCode::from(1)
        }
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn resolve_config(c: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = match &c.config {
        Some(path) => RunConfig::load(path).map_err(Failure::Config)?,
        None => RunConfig::default(),
    };
    if let Some(b) = &c.backends {
        cfg.backends = b.parse::<BackendFamily>().map_err(Failure::Config)?;
        cfg.backend_names = None;
    }
    if let Some(seed) = c.seed {
        cfg.pipeline.seed = seed;
        cfg.ensemble.seed = seed;
    }
    if let Some(v) = c.threshold {
        cfg.pipeline.threshold = v;
    }
    if let Some(v) = c.patch_size {
        cfg.pipeline.patch_size = v;
    }
    if let Some(v) = c.sr_factor {
        cfg.pipeline.sr_factor = v;
    }
    if let Some(v) = &c.epsilon {
        cfg.epsilons = v.clone();
    }
    if let Some(v) = c.iterations {
        cfg.attack.iterations = v;
    }
    if let Some(v) = c.alpha {
        cfg.attack.alpha = v;
    }
    if let Some(v) = &c.attack {
        cfg.attack_method = v.clone();
    }
    if let Some(v) = c.workers {
        cfg.workers = v;
    }
    cfg.validate().map_err(Failure::Config)?;
    Ok(cfg)
}

fn run(cli: &Cli, cfg: &RunConfig) -> Outcome {
    match &cli.command {
        Command::Classify => classify(&cli.common, cfg),
        Command::Analyze { overlays } => analyze(&cli.common, cfg, *overlays),
        Command::Attack { label } => attack(&cli.common, cfg, *label),
        Command::TuneEnsemble { table, trials } => tune_ensemble(&cli.common, cfg, table, *trials),
        Command::ReportValidate { paths } => report_validate(paths),
    }
}

/// An input image with its id and, for dataset entries, its label.
struct Input {
    id: String,
    path: PathBuf,
    label: Option<Label>,
}

fn inputs(c: &Common) -> Result<Vec<Input>, Failure> {
    match (&c.image, &c.dataset) {
        (Some(path), None) => {
            let id = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .ok_or_else(|| Failure::Config(format!("{} has no file name", path.display())))?;
            Ok(vec![Input {
                id,
                path: path.clone(),
                label: None,
            }])
        }
        (None, Some(root)) => {
            let index = ingest_cifake(root).map_err(|e| Failure::Config(e.to_string()))?;
            for w in &index.warnings {
                eprintln!("warning: {w}");
            }
            Ok(index
                .limited(c.limit)
                .iter()
                .map(|e: &DatasetEntry| Input {
                    id: e.image_id(),
                    path: e.path.clone(),
                    label: Some(e.label),
                })
                .collect())
        }
        _ => Err(Failure::Config(
            "exactly one of --image or --dataset is required".into(),
        )),
    }
}

fn backend_set(cfg: &RunConfig) -> Result<BackendSet<f64>, Failure> {
    build_backends(&cfg.names(), &cfg.registry_options())
        .map_err(|e| Failure::Config(e.to_string()))
}

fn output(out: &Option<PathBuf>, bytes: &[u8]) -> anyhow::Result<()> {
    match out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)
                    .with_context(|| format!("creating {}", dir.display()))?;
            }
            veritas_core::explainer::write_atomic(path, bytes)
                .with_context(|| format!("writing {}", path.display()))
        }
        None => std::io::stdout().write_all(bytes).context("writing stdout"),
    }
}

#[derive(Serialize)]
struct VerdictRow<'a> {
    image_id: &'a str,
    path: String,
    label: Option<Label>,
    prediction: Label,
    fake_probability: f64,
}

fn classify(c: &Common, cfg: &RunConfig) -> Outcome {
    let items = inputs(c)?;
    let set = backend_set(cfg)?;
    let mut writer = csv::Writer::from_writer(Vec::new());
    let mut failed = 0;
    for item in &items {
        let result = Image::load(&item.path)
            .map_err(|e| format!("stage `load`: {e}"))
            .and_then(|img| {
                backends::classify(set.classifier.as_ref(), &img)
                    .map_err(|e| format!("stage `classify`: {e}"))
            });
        match result {
            Ok(out) => writer
                .serialize(VerdictRow {
                    image_id: &item.id,
                    path: item.path.display().to_string(),
                    label: item.label,
                    prediction: out.prediction,
                    fake_probability: out.fake_probability(),
                })
                .context("encoding csv")?,
            Err(e) => {
                eprintln!("error: {}: {e}", item.id);
                failed += 1;
            }
        }
    }
    output(
        &c.out,
        &writer
            .into_inner()
            .map_err(|e| anyhow::anyhow!("flushing csv: {e}"))?,
    )?;
    Ok(failed)
}

fn analyze(c: &Common, cfg: &RunConfig, overlays: bool) -> Outcome {
    let items: Vec<BatchItem> = inputs(c)?
        .into_iter()
        .map(|i| BatchItem {
            image_id: i.id,
            path: i.path,
        })
        .collect();
    let library = cfg.library().map_err(Failure::Config)?;
    // Fail fast on bad backend names before spawning workers.
    backend_set(cfg)?;
    let options = BatchOptions {
        out_dir: c.out.clone().unwrap_or_else(|| PathBuf::from("reports")),
        workers: cfg.workers,
        overlays,
    };
    let names = cfg.names();
    let registry = cfg.registry_options();
    let summary = run_batch(&items, &library, &cfg.pipeline, &options, |_| {
        build_backends::<f64>(&names, &registry)
    })
    .map_err(|e| Failure::Runtime(e.into()))?;
    for f in &summary.failures {
        eprintln!("error: {}: stage `{}`: {}", f.image_id, f.stage, f.error);
    }
    eprintln!(
        "analyzed {} image(s), {} failed; reports in {}",
        summary.reports.len(),
        summary.failures.len(),
        options.out_dir.display()
    );
    Ok(summary.failures.len())
}

fn attack(c: &Common, cfg: &RunConfig, label: Option<Label>) -> Outcome {
    let items = inputs(c)?;
    let plan = cfg.attack_plan().map_err(Failure::Config)?;
    let set = backend_set(cfg)?;
    let mut data = Vec::with_capacity(items.len());
    let mut failed = 0;
    for item in items {
        let Some(label) = item.label.or(label) else {
            return Err(Failure::Config("--label is required with --image".into()));
        };
        match Image::load(&item.path) {
            Ok(image) => data.push(LabeledImage { image, label }),
            Err(e) => {
                eprintln!("error: {}: stage `load`: {e}", item.id);
                failed += 1;
            }
        }
    }
    let rows = evaluate_robustness(
        set.classifier.as_ref(),
        &data,
        &plan,
        &cfg.epsilons,
        &cfg.attack,
    )
    .map_err(|e| Failure::Runtime(e.into()))?;
    let mut buf = Vec::new();
    write_robustness_csv(&rows, &mut buf).map_err(|e| Failure::Runtime(e.into()))?;
    output(&c.out, &buf)?;
    Ok(failed)
}

#[derive(Serialize)]
struct TunedWeights<'a> {
    member_names: &'a [String],
    weights: &'a [f64],
    validation_accuracy: f64,
    best_trial: usize,
    trials: usize,
    seed: u64,
    inject_one_hot: bool,
}

fn tune_ensemble(c: &Common, cfg: &RunConfig, table: &Path, trials: Option<usize>) -> Outcome {
    let table = ValidationTable::<f64>::load(table).map_err(|e| Failure::Config(e.to_string()))?;
    let mut options = cfg.ensemble.clone();
    if let Some(t) = trials {
        options.trials = t;
    }
    let outcome = search_weights(&table, &options).map_err(|e| Failure::Config(e.to_string()))?;
    let doc = TunedWeights {
        member_names: &table.member_names,
        weights: outcome.weights.as_slice(),
        validation_accuracy: outcome.best_score,
        best_trial: outcome.best_trial,
        trials: options.trials,
        seed: options.seed,
        inject_one_hot: options.inject_one_hot,
    };
    let mut text = serde_json::to_string_pretty(&doc).context("encoding weights")?;
    text.push('\n');
    output(&c.out, text.as_bytes())?;
    Ok(0)
}

fn report_files(paths: &[PathBuf]) -> anyhow::Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                .with_context(|| format!("reading {}", p.display()))?
                .filter_map(Result::ok)
                .map(|e| e.path())
                .filter(|f| f.to_string_lossy().ends_with(".report.json"))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    Ok(files)
}

fn report_validate(paths: &[PathBuf]) -> Outcome {
    let files = report_files(paths)?;
    let mut invalid = 0;
    for f in &files {
        let verdict = std::fs::read_to_string(f)
            .map_err(|e| e.to_string())
            .and_then(|t| parse_report(&t).map(|_| ()).map_err(|e| e.to_string()));
        match verdict {
            Ok(()) => println!("ok {}", f.display()),
            Err(e) => {
                println!("invalid {}: {e}", f.display());
                invalid += 1;
            }
        }
    }
    if invalid > 0 {
        return Err(Failure::Items(invalid));
    }
    Ok(0)
}
