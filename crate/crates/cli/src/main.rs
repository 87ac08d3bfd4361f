//! `flairr`: run forecasts, refinement sessions, benchmarks and analog retrieval.
//!
//! Exit codes: 0 success, 1 configuration error, 2 data or I/O error, 3 backend
//! error, 4 reply still unparseable after retries.

mod config;

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use flairr::backend::{BackendError, ScriptMode};
use flairr::bench::{ablation_table, run_ablation, run_experiment, BenchError, BenchErrorKind};
use flairr::prompt::{format_numbers, DatasetMeta, ForecastReply, InstructionBlock, TemplateLibrary};
use flairr::retrieval::HistDb;
use flairr::series::{load_csv_with, ScaledSplit, TimeSeries, WindowPair};
use flairr::session::{
    forecast_with, run_session_with, validation_windows, PromptOut, SessionConfig, SessionContext, SessionErrorKind,
    SessionLog,
};
use flairr::Scaler;
use serde::Deserialize;

use config::{apply_session_args, load_bench_file, load_run_file, BackendBuilder};

#[derive(Debug, Parser)]
#[command(
    name = "flairr",
    version,
    about = "Retrieval-augmented, iteratively refined LLM forecasting"
)]
struct Cli {
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    /// Load prompt templates from this directory instead of the built-in set.
    #[arg(long, global = true, value_name = "DIR")]
    templates: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Forecast the next H values after the end of a series.
    Forecast(RunArgs),
    /// Run a refinement session on the training split and print the selected prompt.
    Refine(RunArgs),
    /// Run an experiment grid from a JSON config.
    Bench(BenchArgs),
    /// Run the four ablation conditions from a JSON config.
    Ablate(BenchArgs),
    /// Print the analogs retrieved for the window ending at `--t`.
    Retrieve(RetrieveArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Scripted,
    Http,
    Synthetic,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScriptModeArg {
    Ordinal,
    Pattern,
}

impl From<ScriptModeArg> for ScriptMode {
    fn from(m: ScriptModeArg) -> Self {
        match m {
            ScriptModeArg::Ordinal => ScriptMode::Ordinal,
            ScriptModeArg::Pattern => ScriptMode::Pattern,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct BackendArgs {
    /// Completion backend [default: scripted].
    #[arg(long, value_enum)]
    pub backend: Option<BackendKind>,
    /// JSON-lines script for the scripted backend; `{seed}` is replaced by the run seed.
    #[arg(long, value_name = "PATH")]
    pub script: Option<PathBuf>,
    /// How script entries are matched to requests [default: ordinal].
    #[arg(long, value_enum)]
    pub script_mode: Option<ScriptModeArg>,
    /// Chat-completions URL for the http backend. The key is read from FLAIRR_API_KEY.
    #[arg(long, value_name = "URL")]
    pub endpoint: Option<String>,
    /// Model name sent to the http backend [default: default].
    #[arg(long)]
    pub model: Option<String>,
    /// Request timeout in seconds for the http backend [default: 120].
    #[arg(long, value_name = "SECS")]
    pub timeout: Option<u64>,
    /// Append every request and reply to this file as a replayable script.
    #[arg(long, value_name = "PATH")]
    pub record: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SessionArgs {
    /// Context length L [default: 96].
    #[arg(long)]
    pub context: Option<usize>,
    /// Forecast horizon H [default: 24].
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Analogs retrieved per query [default: 2].
    #[arg(long)]
    pub m: Option<usize>,
    /// Maximum refinement iterations [default: 5].
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Stop threshold in percent given to the refiner [default: 5].
    #[arg(long, value_name = "PCT")]
    pub stop_threshold: Option<f64>,
    /// Validation windows per iteration [default: 3].
    #[arg(long)]
    pub sample_size: Option<usize>,
    /// Decimal places of numbers in prompts [default: 4].
    #[arg(long)]
    pub precision: Option<usize>,
    /// Re-asks after an unparseable reply [default: 3].
    #[arg(long)]
    pub parse_retries: Option<usize>,
    /// Disable analog retrieval.
    #[arg(long)]
    pub no_retrieval: bool,
    /// Seed passed to backends; bench runs use seed + run index [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// CSV file with a header row.
    #[arg(long, value_name = "PATH")]
    data: Option<PathBuf>,
    /// Column to forecast.
    #[arg(long)]
    target: Option<String>,
    /// Timestamp column [default: auto-detected].
    #[arg(long)]
    timestamp_column: Option<String>,
    /// Initial strategy from the template library [default: simple].
    #[arg(long)]
    strategy: Option<String>,
    /// Fraction of the series used for training (refine) [default: 0.7].
    #[arg(long)]
    train_fraction: Option<f64>,
    /// Output directory (refine) [default: flairr-out].
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// JSON config with optional `dataset`, `session`, `backend`, `strategy` and
    /// `train_fraction` keys. Flags override it.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[command(flatten)]
    session: SessionArgs,
    #[command(flatten)]
    backend: BackendArgs,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Experiment config (JSON); an optional `backend` key configures the backend.
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Parent directory of the run directory [default: from config, else runs].
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Cells executed concurrently [default: 1].
    #[arg(long)]
    jobs: Option<usize>,
    /// Runs per (horizon, method) [default: 5].
    #[arg(long)]
    runs: Option<usize>,
    #[command(flatten)]
    session: SessionArgs,
    #[command(flatten)]
    backend: BackendArgs,
}

#[derive(Debug, Args)]
struct RetrieveArgs {
    /// CSV file with a header row.
    #[arg(long, value_name = "PATH")]
    data: PathBuf,
    /// Column to search.
    #[arg(long)]
    target: String,
    /// Timestamp column [default: auto-detected].
    #[arg(long)]
    timestamp_column: Option<String>,
    /// Context length L.
    #[arg(long, default_value_t = 96)]
    context: usize,
    /// Outcome length H.
    #[arg(long, default_value_t = 24)]
    horizon: usize,
    /// Analogs to return.
    #[arg(long, default_value_t = 2)]
    m: usize,
    /// Query origin: the context is values[t-L .. t] [default: series length].
    #[arg(long)]
    t: Option<usize>,
    /// Decimal places of printed values.
    #[arg(long, default_value_t = 4)]
    precision: usize,
}

/// An error with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    pub fn config(m: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: m.into(),
        }
    }

    pub fn data(m: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: m.into(),
        }
    }

    fn backend(e: &BackendError) -> Self {
        Self {
            code: 3,
            message: e.to_string(),
        }
    }

    fn session(kind: &SessionErrorKind) -> Self {
        let code = match kind {
            SessionErrorKind::Config(_) | SessionErrorKind::Prompt(_) => 1,
            SessionErrorKind::Data(_) | SessionErrorKind::Retrieval(_) => 2,
            SessionErrorKind::Backend { .. } => 3,
            SessionErrorKind::ParseExhausted { .. } | SessionErrorKind::AllSamplesFailed { .. } => 4,
        };
        Self {
            code,
            message: kind.to_string(),
        }
    }

    fn bench(e: &BenchError) -> Self {
        let mut err = match &e.kind {
            BenchErrorKind::Config(m) => Self::config(m.clone()),
            BenchErrorKind::Data(m) | BenchErrorKind::Io(m) => Self::data(m.clone()),
            BenchErrorKind::Backend(b) => Self::backend(b),
            BenchErrorKind::Session { cell, source } => {
                let mut inner = Self::session(&source.kind);
                inner.message = format!("{cell}: {}", inner.message);
                inner
            }
        };
        if let Some(p) = &e.partial_report {
            err.message.push_str(&format!(" (partial report: {})", p.display()));
        }
        err
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(level)),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let templates = Arc::new(match &cli.templates {
        Some(dir) => TemplateLibrary::load_dir(dir).map_err(|e| CliError::config(e.to_string()))?,
        None => TemplateLibrary::builtin(),
    });
    match cli.command {
        Command::Forecast(args) => cmd_forecast(args, templates),
        Command::Refine(args) => cmd_refine(args, templates),
        Command::Bench(args) => cmd_bench(args, templates, false),
        Command::Ablate(args) => cmd_bench(args, templates, true),
        Command::Retrieve(args) => cmd_retrieve(args),
    }
}

/// Settings shared by `forecast` and `refine` after merging file and flags.
struct Resolved {
    series: TimeSeries<f64>,
    meta: DatasetMeta,
    session: SessionConfig,
    initial: Option<InstructionBlock>,
    builder: BackendBuilder,
    train_fraction: f64,
}

fn resolve(args: &RunArgs, templates: &TemplateLibrary) -> Result<Resolved, CliError> {
    let file = load_run_file(args.config.as_deref())?;
    let mut session = file.session.clone().unwrap_or_default();
    apply_session_args(&mut session, &args.session);
    session.validate().map_err(|e| CliError::config(e.to_string()))?;

    let strategy = args
        .strategy
        .clone()
        .or(file.strategy.clone())
        .unwrap_or_else(|| "simple".into());
    let initial = templates
        .get_asp(&strategy)
        .and_then(|t| InstructionBlock::from_strategy(t, session.horizon))
        .map_err(|e| CliError::config(e.to_string()))?;

    let train_fraction = args.train_fraction.or(file.train_fraction).unwrap_or(0.7);
    let section = file.backend.clone().unwrap_or_default().merged(&args.backend);
    let builder = BackendBuilder::new(section, session.precision)?;

    let ds = file.dataset.clone();
    let path = args
        .data
        .clone()
        .or_else(|| ds.as_ref().map(|d| d.path.clone()))
        .ok_or_else(|| CliError::config("--data is required"))?;
    let target = args
        .target
        .clone()
        .or_else(|| ds.as_ref().map(|d| d.target.clone()))
        .ok_or_else(|| CliError::config("--target is required"))?;
    let ts_col = args
        .timestamp_column
        .clone()
        .or_else(|| ds.as_ref().and_then(|d| d.timestamp_column.clone()));
    let series = load_csv_with::<f64>(&path, &target, ts_col.as_deref())
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let name = ds
        .as_ref()
        .and_then(|d| d.name.clone())
        .or_else(|| path.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .unwrap_or_else(|| "dataset".into());
    let description = ds.map(|d| d.description).unwrap_or_default();
    Ok(Resolved {
        meta: DatasetMeta::new(name, description, target),
        series,
        session,
        initial,
        builder,
        train_fraction,
    })
}

fn cmd_forecast(args: RunArgs, templates: Arc<TemplateLibrary>) -> Result<(), CliError> {
    let r = resolve(&args, &templates)?;
    let cfg = &r.session;
    let raw = r.series.target_values();
    if raw.len() < cfg.context_len {
        return Err(CliError::data(format!(
            "series has {} values, context length is {}",
            raw.len(),
            cfg.context_len
        )));
    }
    let scaler = Scaler::fit(raw).map_err(|e| CliError::data(e.to_string()))?;
    let scaled = scaler.apply(raw);
    let n = scaled.len();
    let window = WindowPair {
        context: scaled[n - cfg.context_len..].to_vec(),
        truth: Vec::new(),
        origin: n,
    };
    let db = if cfg.retrieval_enabled {
        Some(HistDb::build(&scaled, cfg.context_len, cfg.horizon).map_err(|e| CliError::config(e.to_string()))?)
    } else {
        None
    };
    let backends = r.builder.build(cfg.seed).map_err(|e| CliError::backend(&e))?;
    let ctx = SessionContext::new(cfg.clone(), backends, templates, r.meta);
    let p_out = PromptOut {
        template_id: cfg.template_id.clone(),
        instructions: r.initial,
    };
    let f = forecast_with(&ctx, &p_out, &window, db.as_ref()).map_err(|k| CliError::session(&k))?;
    let reply = ForecastReply {
        values: scaler.invert(&f.values),
        reasoning: f.reasoning,
        certainty: f.certainty,
        certainty_reasoning: f.certainty_reasoning,
    };
    println!("{}", reply.render(cfg.precision));
    Ok(())
}

fn cmd_refine(args: RunArgs, templates: Arc<TemplateLibrary>) -> Result<(), CliError> {
    let r = resolve(&args, &templates)?;
    let cfg = r.session.clone();
    let split = ScaledSplit::new(&r.series, r.train_fraction).map_err(|e| CliError::data(e.to_string()))?;
    let windows = validation_windows(&split.train, cfg.context_len, cfg.horizon, cfg.sample_size)
        .map_err(|e| CliError::data(format!("training split too short for validation windows: {e}")))?;
    let out = args.out.clone().unwrap_or_else(|| PathBuf::from("flairr-out"));
    let log_path = out.join("session.jsonl");
    let mut log = SessionLog::create(&log_path).map_err(|e| CliError::data(format!("{}: {e}", log_path.display())))?;
    let backends = r.builder.build(cfg.seed).map_err(|e| CliError::backend(&e))?;
    let ctx = SessionContext::new(cfg.clone(), backends, templates, r.meta);

    let mut log_error = None;
    let outcome = run_session_with(&ctx, &split.train, &windows, r.initial, &mut |rec| {
        if let Err(e) = log.record(rec) {
            log_error.get_or_insert(e);
        }
    });
    if let Some(e) = log_error {
        return Err(CliError::data(format!("{}: {e}", log_path.display())));
    }
    let result = match outcome {
        Ok(res) => res,
        Err(e) => {
            let _ = log.error(&e.to_string(), e.partial.len());
            let mut err = CliError::session(&e.kind);
            err.message = format!("{e}; session log: {}", log_path.display());
            return Err(err);
        }
    };
    log.summary(&result).map_err(|e| CliError::data(e.to_string()))?;

    println!("Forecasting Instructions:");
    match &result.p_out.instructions {
        Some(block) => println!("{}", block.render()),
        None => println!("(none)"),
    }
    println!("early_stop: {}", result.early_stop);
    println!("iterations: {}", result.history.len());
    println!("best_iteration: {}", result.best_iteration);
    println!("best_mae: {}", format_numbers(&[result.best_mae], cfg.precision.max(6)));
    println!("session_log: {}", log_path.display());
    Ok(())
}

fn cmd_bench(args: BenchArgs, templates: Arc<TemplateLibrary>, ablate: bool) -> Result<(), CliError> {
    let (mut cfg, section) = load_bench_file(&args.config)?;
    apply_session_args(&mut cfg.session, &args.session);
    if let Some(out) = &args.out {
        cfg.output = out.clone();
    }
    if let Some(jobs) = args.jobs {
        cfg.parallelism = jobs;
    }
    if let Some(runs) = args.runs {
        cfg.runs = runs;
    }
    let builder = BackendBuilder::new(section.merged(&args.backend), cfg.session.precision)?;
    let factory = |seed: u64| builder.build(seed);
    let outcome = if ablate {
        run_ablation(&cfg, templates, &factory)
    } else {
        run_experiment(&cfg, templates, &factory)
    };
    let output = outcome.map_err(|e| CliError::bench(&e))?;
    if ablate {
        print!("{}", ablation_table(&output.report.rows));
    } else {
        for row in &output.report.rows {
            println!(
                "{} H={} {}: median {} over {} run(s)",
                row.dataset,
                row.horizon,
                row.method,
                format_numbers(&[row.median], 6),
                row.run_maes.len()
            );
        }
    }
    println!("report: {}", output.dir.join("report.csv").display());
    Ok(())
}

fn cmd_retrieve(args: RetrieveArgs) -> Result<(), CliError> {
    let series = load_csv_with::<f64>(&args.data, &args.target, args.timestamp_column.as_deref())
        .map_err(|e| CliError::data(format!("{}: {e}", args.data.display())))?;
    let values = series.target_values();
    let t = args.t.unwrap_or(values.len());
    if t < args.context || t > values.len() {
        return Err(CliError::data(format!(
            "--t {t} needs {} <= t <= {}",
            args.context,
            values.len()
        )));
    }
    let db = HistDb::build(values, args.context, args.horizon).map_err(|e| CliError::config(e.to_string()))?;
    let found = db
        .for_origin(t)
        .retrieve(&values[t - args.context..t], args.m)
        .map_err(|e| CliError::data(e.to_string()))?;
    print_analogs(&found, args.precision);
    Ok(())
}

fn print_analogs(found: &[flairr::AnalogSegment<f64>], precision: usize) {
    let join = |v: &[f64]| format_numbers(v, precision).replace(", ", " ");
    println!("rank,start,score,context,outcome");
    for (i, seg) in found.iter().enumerate() {
        println!(
            "{},{},{},{},{}",
            i + 1,
            seg.start,
            format_numbers(&[seg.score], 6),
            join(&seg.context),
            join(&seg.outcome)
        );
    }
}
