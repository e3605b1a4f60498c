//! Command-line front end.
//!
//! Every command reads one [`RunConfig`] (a TOML file, defaults when none is
//! given) and applies flag overrides on top. The whole configuration is
//! validated and inputs are checked before any output is written.

mod config;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::bench::{bench_scaling, ScalingReport};
use crate::decompose::{
    self, decompose_dataset, offline_path, online_path, read_amounts, Decomposition, DistributionTemplate,
};
use crate::exec::{self, Execution};
use crate::extra_trees::{self, cross_validate, load_model, save_model, CvReport, Dataset, ExtraTreesModel, KFeatures};
use crate::ingest::{self, SourceSummary};
use crate::orchestrator::{init_offline_risk, previous_bills, run_batches, stream_batch, RunOutcome};
use crate::rules::{Catalog, FeatureScores, RuleConfig};
use crate::synth;

pub use config::{BenchSettings, DecomposeSettings, Paths, RunConfig, TrainSettings};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Input(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

fn input(e: impl std::fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "cdm", version, about = "Credit-default mining over offline and online card data")]
pub struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Cap on worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Run everything on the calling thread.
    #[arg(long, global = true)]
    pub sequential: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic source CSV in the Taiwan schema.
    Generate(GenerateArgs),
    /// Split the source into monthly offline and online batches.
    Decompose(DecomposeArgs),
    /// Cross-validate and fit the offline classifier.
    Train(TrainArgs),
    /// Score all batches and report per-batch metrics.
    Run(RunArgs),
    /// Time online scoring on halving batch sizes.
    Bench(BenchArgs),
    /// Print the effective configuration.
    Config,
}

#[derive(Debug, Default, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub customers: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Default, Args)]
pub struct DecomposeArgs {
    #[arg(long)]
    pub source: Option<PathBuf>,
    #[arg(long)]
    pub template: Option<PathBuf>,
    #[arg(long)]
    pub batches: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub year: Option<i32>,
    #[arg(long)]
    pub bins: Option<usize>,
}

#[derive(Debug, Default, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub batches: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub cv_report: Option<PathBuf>,
    #[arg(long)]
    pub trees: Option<usize>,
    /// Features drawn per split: an integer or `auto`.
    #[arg(long)]
    pub k_features: Option<String>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub batch: Option<usize>,
}

#[derive(Debug, Default, Args)]
#[command(allow_negative_numbers = true)]
pub struct RunArgs {
    #[arg(long)]
    pub batches: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub rules: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub state: Option<PathBuf>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Default, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub batches: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub rules: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub halvings: Option<usize>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

impl Command {
    /// Writes the flag values over `c`.
    pub fn apply_overrides(&self, c: &mut RunConfig) -> Result<(), CliError> {
        match self {
            Command::Generate(a) => {
                set(&mut c.paths.source, a.output.clone());
                set(&mut c.synth.customers, a.customers);
                set(&mut c.synth.seed, a.seed);
            }
            Command::Decompose(a) => {
                set(&mut c.paths.source, a.source.clone());
                if a.template.is_some() {
                    c.paths.template = a.template.clone();
                }
                set(&mut c.paths.batches, a.batches.clone());
                set(&mut c.decompose.seed, a.seed);
                set(&mut c.decompose.year, a.year);
                set(&mut c.decompose.bins.n_bins, a.bins);
            }
            Command::Train(a) => {
                set(&mut c.paths.batches, a.batches.clone());
                set(&mut c.paths.model, a.model.clone());
                set(&mut c.paths.cv_report, a.cv_report.clone());
                set(&mut c.extra_trees.n_trees, a.trees);
                if let Some(k) = &a.k_features {
                    c.extra_trees.k_features = match k.as_str() {
                        "auto" => KFeatures::Auto,
                        n => KFeatures::Fixed(
                            n.parse().map_err(|_| CliError::Config(format!("--k-features: expected integer or auto, got `{n}`")))?,
                        ),
                    };
                }
                set(&mut c.train.folds, a.folds);
                set(&mut c.extra_trees.seed, a.seed);
                set(&mut c.train.batch, a.batch);
            }
            Command::Run(a) => {
                set(&mut c.paths.batches, a.batches.clone());
                set(&mut c.paths.model, a.model.clone());
                if a.rules.is_some() {
                    c.paths.rules = a.rules.clone();
                }
                set(&mut c.paths.report, a.report.clone());
                set(&mut c.paths.state, a.state.clone());
                set(&mut c.scoring.lambda, a.lambda);
                set(&mut c.scoring.threshold, a.threshold);
            }
            Command::Bench(a) => {
                set(&mut c.paths.batches, a.batches.clone());
                set(&mut c.paths.model, a.model.clone());
                if a.rules.is_some() {
                    c.paths.rules = a.rules.clone();
                }
                set(&mut c.paths.bench, a.output.clone());
                set(&mut c.bench.halvings, a.halvings);
                set(&mut c.bench.repetitions, a.reps);
                set(&mut c.bench.batch, a.batch);
            }
            Command::Config => {}
        }
        Ok(())
    }
}

/// Loads the config file (if any), applies the global and command flags and
/// validates the result.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut c = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if cli.sequential {
        c.execution = Execution::Sequential;
    }
    cli.command.apply_overrides(&mut c)?;
    c.validate()?;
    Ok(c)
}

fn require(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Input(format!("{what} `{}` does not exist", path.display())))
    }
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| runtime(format!("{}: {e}", parent.display())))?;
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    ensure_parent(path)?;
    File::create(path).map(BufWriter::new).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn say(out: &mut dyn Write, line: std::fmt::Arguments) -> Result<(), CliError> {
    writeln!(out, "{line}").map_err(runtime)
}

pub fn cmd_generate(c: &RunConfig, out: &mut dyn Write) -> Result<SourceSummary, CliError> {
    let records = synth::generate(&c.synth, c.execution).map_err(CliError::Config)?;
    let mut w = create(&c.paths.source)?;
    ingest::write_source(&records, &mut w).map_err(runtime)?;
    w.flush().map_err(runtime)?;
    let s = SourceSummary::of(&records);
    say(out, format_args!("wrote {} customers ({} defaults) to {}", s.rows, s.defaults, c.paths.source.display()))?;
    Ok(s)
}

fn load_template(c: &RunConfig, records: &[ingest::CustomerRecord]) -> Result<DistributionTemplate, CliError> {
    let amounts = match &c.paths.template {
        Some(p) => read_amounts(p).map_err(input)?,
        None => c.decompose.synthetic_amounts.generate().map_err(|e| CliError::Config(e.to_string()))?,
    };
    let bills = records.iter().flat_map(|r| r.bill_amt);
    DistributionTemplate::prepare(amounts, bills, &c.decompose.bins).map_err(input)
}

pub fn cmd_decompose(c: &RunConfig, out: &mut dyn Write) -> Result<Decomposition, CliError> {
    require(&c.paths.source, "source")?;
    if let Some(t) = &c.paths.template {
        require(t, "template")?;
    }
    let records = ingest::parse_source(&c.paths.source).map_err(input)?;
    let template = load_template(c, &records)?;
    let d = decompose_dataset(&records, &template, c.decompose.seed, c.decompose.year, c.execution).map_err(runtime)?;
    d.write_dir(&c.paths.batches).map_err(runtime)?;
    for (i, (off, on)) in d.offline.iter().zip(&d.online).enumerate() {
        say(out, format_args!("batch {}: {} offline accounts, {} online transactions", i + 1, off.len(), on.len()))?;
    }
    Ok(d)
}

pub fn cmd_train(c: &RunConfig, out: &mut dyn Write) -> Result<(CvReport, ExtraTreesModel), CliError> {
    let path = offline_path(&c.paths.batches, c.train.batch);
    require(&path, "offline batch")?;
    let rows = decompose::read_offline(&path).map_err(input)?;
    let data = Dataset::from_offline(&rows);

    let cv = cross_validate(&data, &c.extra_trees, c.train.folds, c.train.threshold, c.execution).map_err(runtime)?;
    let started = Instant::now();
    let model = extra_trees::train(&data, &c.extra_trees, c.execution).map_err(runtime)?;
    let seconds = started.elapsed().as_secs_f64();

    let mut w = create(&c.paths.cv_report)?;
    cv.write_csv(&mut w).map_err(runtime)?;
    w.flush().map_err(runtime)?;
    ensure_parent(&c.paths.model)?;
    save_model(&model, &c.paths.model).map_err(runtime)?;

    let m = &cv.mean;
    say(
        out,
        format_args!(
            "{}-fold CV: accuracy {:.4}, precision {:.4}, recall {:.4}, f-score {:.4}",
            c.train.folds, m.accuracy, m.precision, m.recall, m.f_score
        ),
    )?;
    say(out, format_args!("trained {} trees on {} accounts in {seconds:.2} s", model.trees.len(), rows.len()))?;
    Ok((cv, model))
}

fn load_catalog(c: &RunConfig, model: &ExtraTreesModel) -> Result<Catalog, CliError> {
    let rules = match &c.paths.rules {
        Some(p) => RuleConfig::load(p).map_err(|e| CliError::Config(e.to_string()))?,
        None => RuleConfig::default_catalog(),
    };
    let scores = FeatureScores::from_model(model).map_err(input)?;
    Catalog::new(rules, Some(&scores)).map_err(|e| CliError::Config(e.to_string()))
}

fn scoring_inputs(c: &RunConfig) -> Result<(), CliError> {
    require(&c.paths.model, "model")?;
    if let Some(r) = &c.paths.rules {
        require(r, "rules")?;
    }
    for i in 1..=decompose::BATCHES {
        require(&offline_path(&c.paths.batches, i), "offline batch")?;
        require(&online_path(&c.paths.batches, i), "online batch")?;
    }
    Ok(())
}

pub fn cmd_run(c: &RunConfig, out: &mut dyn Write) -> Result<RunOutcome, CliError> {
    scoring_inputs(c)?;
    let model = load_model(&c.paths.model).map_err(input)?;
    let catalog = load_catalog(c, &model)?;
    let d = Decomposition::read_dir(&c.paths.batches).map_err(input)?;

    let outcome = run_batches(&d.offline, &d.online, &model, &catalog, &c.scoring, c.execution).map_err(runtime)?;

    let mut w = create(&c.paths.report)?;
    crate::metrics::write_reports(&outcome.reports, &mut w).map_err(runtime)?;
    w.flush().map_err(runtime)?;
    ensure_parent(&c.paths.state)?;
    outcome.state.save(&c.paths.state).map_err(runtime)?;

    for (r, s) in outcome.reports.iter().zip(&outcome.streams) {
        say(
            out,
            format_args!(
                "batch {}: accuracy {:.4}, precision {:.4}, recall {:.4}, f-score {:.4} | offline {:.3} s, online {:.3} s ({} txns, {} violations)",
                r.batch, r.accuracy, r.precision, r.recall, r.f_score, r.offline_time, r.online_time, s.transactions, s.violations
            ),
        )?;
    }
    Ok(outcome)
}

pub fn cmd_bench(c: &RunConfig, out: &mut dyn Write) -> Result<ScalingReport, CliError> {
    scoring_inputs(c)?;
    let model = load_model(&c.paths.model).map_err(input)?;
    let catalog = load_catalog(c, &model)?;
    let b = c.bench.batch;
    let offline = decompose::read_offline(&offline_path(&c.paths.batches, b)).map_err(input)?;
    let earlier = if b > 1 {
        Some(decompose::read_offline(&offline_path(&c.paths.batches, b - 1)).map_err(input)?)
    } else {
        None
    };
    let online = decompose::read_online(&online_path(&c.paths.batches, b)).map_err(input)?;
    let prev = previous_bills(&offline, earlier.as_deref());
    let state = init_offline_risk(&model, &offline, b, c.execution).map_err(runtime)?;

    let report = bench_scaling(&online, c.bench.halvings, c.bench.repetitions, |prefix| {
        let mut s = state.clone();
        stream_batch(&mut s, b, &offline, &prev, prefix, &catalog, &c.scoring, c.execution).map(|_| ())
    })
    .map_err(|e| match e {
        crate::bench::BenchError::TooSmall { .. } => CliError::Input(e.to_string()),
        other => runtime(other),
    })?;

    let mut w = create(&c.paths.bench)?;
    report.write_csv(&mut w).map_err(runtime)?;
    w.flush().map_err(runtime)?;
    for (size, t) in &report.medians {
        say(out, format_args!("{size:>9} txns: {t:.4} s (median of {})", c.bench.repetitions))?;
    }
    let f = &report.fit;
    say(out, format_args!("fit: {:.3e} s/txn + {:.3e} s, R^2 = {:.4}", f.slope, f.intercept, f.r_squared))?;
    for w in &report.warnings {
        say(out, format_args!("warning: {w}"))?;
    }
    Ok(report)
}

/// Runs `cli` and returns the process exit code.
pub fn run(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    if let Some(n) = cli.threads {
        if n == 0 {
            let _ = writeln!(err, "config error: --threads must be positive");
            return 1;
        }
        if !exec::set_thread_cap(n) {
            let _ = writeln!(err, "warning: thread pool already initialised; --threads ignored");
        }
    }
    let result = resolve_config(&cli).and_then(|c| match &cli.command {
        Command::Generate(_) => cmd_generate(&c, out).map(drop),
        Command::Decompose(_) => cmd_decompose(&c, out).map(drop),
        Command::Train(_) => cmd_train(&c, out).map(drop),
        Command::Run(_) => cmd_run(&c, out).map(drop),
        Command::Bench(_) => cmd_bench(&c, out).map(drop),
        Command::Config => out.write_all(c.to_toml().as_bytes()).map_err(runtime),
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "{e}");
            e.exit_code()
        }
    }
}
