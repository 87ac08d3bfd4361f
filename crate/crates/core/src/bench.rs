//! Experiment grids over horizons, methods and runs, with CSV and JSON reports.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, Backends};
use crate::metrics::{mae, median};
use crate::prompt::{DatasetMeta, InstructionBlock, TemplateLibrary};
use crate::retrieval::HistDb;
use crate::series::{load_csv_with, ScaledSplit};
use crate::session::{
    forecast_with, run_session_with, test_windows, validation_windows, SessionConfig, SessionContext, SessionError,
    SessionLog, TokenTally,
};

/// A prompting condition.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Method {
    /// Base prompt only.
    Simple,
    /// Base prompt with retrieved analogs.
    RetrievalOnly,
    /// Iterative refinement without retrieval.
    IrOnly,
    /// Retrieval and refinement.
    Flairr,
    /// A fixed strategy from the template library, no retrieval or refinement.
    Asp(String),
}

impl Method {
    /// The four ablation conditions, in table order.
    pub const ABLATION: [Method; 4] = [Method::Simple, Method::RetrievalOnly, Method::IrOnly, Method::Flairr];

    pub fn retrieval(&self) -> bool {
        matches!(self, Method::RetrievalOnly | Method::Flairr)
    }

    pub fn refinement(&self) -> bool {
        matches!(self, Method::IrOnly | Method::Flairr)
    }

    /// Display name in ablation tables.
    pub fn label(&self) -> String {
        match self {
            Method::Simple => "Simple".into(),
            Method::RetrievalOnly => "Simple+Retrieval".into(),
            Method::IrOnly => "Simple+IR".into(),
            Method::Flairr => "FLAIRR".into(),
            Method::Asp(name) => format!("ASP {name}"),
        }
    }

    fn file_stem(&self) -> String {
        self.to_string().replace(':', "-")
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Simple => f.write_str("simple"),
            Method::RetrievalOnly => f.write_str("retrieval-only"),
            Method::IrOnly => f.write_str("ir-only"),
            Method::Flairr => f.write_str("flairr"),
            Method::Asp(name) => write!(f, "asp:{name}"),
        }
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "simple" => Ok(Method::Simple),
            "retrieval-only" => Ok(Method::RetrievalOnly),
            "ir-only" => Ok(Method::IrOnly),
            "flairr" => Ok(Method::Flairr),
            other => match other.strip_prefix("asp:") {
                Some(name) if !name.is_empty() => Ok(Method::Asp(name.to_string())),
                _ => Err(format!(
                    "unknown method {other:?}; expected simple, retrieval-only, ir-only, flairr or asp:<name>"
                )),
            },
        }
    }
}

impl Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub path: PathBuf,
    pub target: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default)]
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp_column: Option<String>,
}

impl DatasetSpec {
    pub fn display_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| {
            self.path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "dataset".into())
        })
    }
}

fn default_runs() -> usize {
    5
}
fn default_methods() -> Vec<Method> {
    Method::ABLATION.to_vec()
}
fn default_output() -> PathBuf {
    PathBuf::from("runs")
}
fn default_train_fraction() -> f64 {
    0.7
}
fn default_max_test_windows() -> usize {
    20
}
fn default_parallelism() -> usize {
    1
}

/// A grid of horizons, methods and runs over one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub horizons: Vec<usize>,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_runs")]
    pub runs: usize,
    /// Base session settings; `horizon`, the method flags and `seed + run` are set
    /// per cell.
    #[serde(default)]
    pub session: SessionConfig,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default = "default_max_test_windows")]
    pub max_test_windows: usize,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
}

impl ExperimentConfig {
    /// Reads a JSON config; a relative dataset path is resolved against the config
    /// file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, BenchError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| BenchErrorKind::Io(format!("{}: {e}", path.display())))?;
        let mut cfg: Self =
            serde_json::from_str(&text).map_err(|e| BenchErrorKind::Config(format!("{}: {e}", path.display())))?;
        if cfg.dataset.path.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.dataset.path = dir.join(&cfg.dataset.path);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self, templates: &TemplateLibrary) -> Result<(), BenchError> {
        let fail = |m: String| Err(BenchError::from(BenchErrorKind::Config(m)));
        if self.runs == 0 {
            return fail("runs must be at least 1".into());
        }
        if self.horizons.is_empty() {
            return fail("horizons must not be empty".into());
        }
        if self.methods.is_empty() {
            return fail("methods must not be empty".into());
        }
        if self.parallelism == 0 {
            return fail("parallelism must be at least 1".into());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return fail(format!(
                "train_fraction must lie in (0, 1), got {}",
                self.train_fraction
            ));
        }
        if self.max_test_windows == 0 {
            return fail("max_test_windows must be at least 1".into());
        }
        for &h in &self.horizons {
            for method in &self.methods {
                self.cell_config(h, method, 0)
                    .validate()
                    .map_err(|e| BenchErrorKind::Config(e.to_string()))?;
            }
        }
        for method in &self.methods {
            if let Method::Asp(name) = method {
                templates
                    .get_asp(name)
                    .map_err(|e| BenchErrorKind::Config(e.to_string()))?;
            }
        }
        Ok(())
    }

    fn cell_config(&self, horizon: usize, method: &Method, run: usize) -> SessionConfig {
        SessionConfig {
            horizon,
            retrieval_enabled: method.retrieval(),
            refinement_enabled: method.refinement(),
            seed: self.session.seed.wrapping_add(run as u64),
            ..self.session.clone()
        }
    }
}

#[derive(Debug, Error)]
pub enum BenchErrorKind {
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("backend: {0}")]
    Backend(#[from] BackendError),
    #[error("{cell}: {source}")]
    Session { cell: String, source: Box<SessionError> },
    #[error("io: {0}")]
    Io(String),
}

/// A failed experiment, with the path of the partial report if one was written.
#[derive(Debug, Error)]
#[error("{kind}")]
pub struct BenchError {
    pub kind: BenchErrorKind,
    pub partial_report: Option<PathBuf>,
}

impl From<BenchErrorKind> for BenchError {
    fn from(kind: BenchErrorKind) -> Self {
        Self {
            kind,
            partial_report: None,
        }
    }
}

/// One (dataset, horizon, method) line of a report. MAEs are in scaled units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub dataset: String,
    pub horizon: usize,
    pub method: String,
    pub run_maes: Vec<f64>,
    pub median: f64,
    /// Mean refinement iterations per run.
    pub iterations: f64,
    pub early_stop_rate: f64,
    /// Summed over runs, sessions and test forecasts.
    pub forecaster_tokens: u64,
    pub refiner_tokens: u64,
    pub scaler_mean: f64,
    pub scaler_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    /// Units of every MAE in the report; invert with the scaler columns for raw units.
    pub mae_space: String,
    pub train_fraction: f64,
    pub max_test_windows: usize,
    pub retrieval: String,
}

impl ReportMeta {
    pub fn for_config(cfg: &ExperimentConfig) -> Self {
        Self {
            mae_space: "scaled".into(),
            train_fraction: cfg.train_fraction,
            max_test_windows: cfg.max_test_windows,
            retrieval: "analogs come from the training split and end before the query context starts".into(),
        }
    }
}

/// Lower MAE is better in every row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub meta: ReportMeta,
    pub rows: Vec<ReportRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

/// Builds the backends for one cell from its session seed.
pub type BackendFactory<'a> = dyn Fn(u64) -> Result<Backends, BackendError> + Sync + 'a;

/// Outcome of one (horizon, method, run) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub horizon: usize,
    pub method: Method,
    pub run: usize,
    pub test_mae: f64,
    pub iterations: usize,
    pub early_stop: bool,
    pub tokens: TokenTally,
}

struct Prepared {
    name: String,
    meta: DatasetMeta,
    split: ScaledSplit<f64>,
}

fn prepare(cfg: &ExperimentConfig) -> Result<Prepared, BenchError> {
    let ds = &cfg.dataset;
    let series = load_csv_with::<f64>(&ds.path, &ds.target, ds.timestamp_column.as_deref())
        .map_err(|e| BenchErrorKind::Data(format!("{}: {e}", ds.path.display())))?;
    let split = ScaledSplit::new(&series, cfg.train_fraction).map_err(|e| BenchErrorKind::Data(e.to_string()))?;
    let name = ds.display_name();
    Ok(Prepared {
        meta: DatasetMeta::new(name.clone(), ds.description.clone(), ds.target.clone()),
        name,
        split,
    })
}

fn run_cell(
    cfg: &ExperimentConfig,
    data: &Prepared,
    templates: &Arc<TemplateLibrary>,
    factory: &BackendFactory<'_>,
    (horizon, method, run): (usize, &Method, usize),
    log_dir: Option<&Path>,
) -> Result<CellResult, BenchErrorKind> {
    let cell = format!("h{horizon} {method} run {}", run + 1);
    let session_cfg = cfg.cell_config(horizon, method, run);
    let (l, h) = (session_cfg.context_len, horizon);
    let train = &data.split.train;
    let windows = validation_windows(train, l, h, session_cfg.sample_size)
        .map_err(|e| BenchErrorKind::Data(format!("{cell}: {e}")))?;
    let full = data.split.full();
    let tests = test_windows(&full, train.len(), l, h, cfg.max_test_windows)
        .map_err(|e| BenchErrorKind::Data(format!("{cell}: {e}")))?;
    let initial = match method {
        Method::Asp(name) => templates
            .get_asp(name)
            .and_then(|t| InstructionBlock::from_strategy(t, horizon))
            .map_err(|e| BenchErrorKind::Config(e.to_string()))?,
        _ => None,
    };
    let backends = factory(session_cfg.seed)?;
    let ctx = SessionContext::new(session_cfg, backends, Arc::clone(templates), data.meta.clone());

    let mut log = match log_dir {
        Some(dir) => Some(
            SessionLog::create(dir.join(format!("h{horizon}-{}-run{}.jsonl", method.file_stem(), run + 1)))
                .map_err(|e| BenchErrorKind::Io(e.to_string()))?,
        ),
        None => None,
    };
    let mut log_failure = None;
    let outcome = run_session_with(&ctx, train, &windows, initial, &mut |record| {
        if let Some(log) = log.as_mut() {
            if let Err(e) = log.record(record) {
                log_failure.get_or_insert(e);
            }
        }
    });
    if let Some(e) = log_failure {
        return Err(BenchErrorKind::Io(e.to_string()));
    }
    let result = match outcome {
        Ok(r) => r,
        Err(e) => {
            if let Some(log) = log.as_mut() {
                let _ = log.error(&e.to_string(), e.partial.len());
            }
            return Err(BenchErrorKind::Session {
                cell,
                source: Box::new(e),
            });
        }
    };
    if let Some(log) = log.as_mut() {
        log.summary(&result).map_err(|e| BenchErrorKind::Io(e.to_string()))?;
    }

    let db = if ctx.cfg.retrieval_enabled {
        Some(HistDb::build(train, l, h).map_err(|e| BenchErrorKind::Data(e.to_string()))?)
    } else {
        None
    };
    let mut tokens = result.tokens;
    let mut total = 0.0;
    for window in &tests {
        let f = forecast_with(&ctx, &result.p_out, window, db.as_ref()).map_err(|kind| BenchErrorKind::Session {
            cell: format!("{cell} test window {}", window.origin),
            source: Box::new(SessionError {
                kind,
                partial: result.history.clone(),
            }),
        })?;
        tokens.forecaster += f.tokens;
        total += mae(&f.values, &window.truth).map_err(|e| BenchErrorKind::Data(e.to_string()))?;
    }
    Ok(CellResult {
        horizon,
        method: method.clone(),
        run,
        test_mae: total / tests.len() as f64,
        iterations: result.history.len(),
        early_stop: result.early_stop,
        tokens,
    })
}

/// Runs every cell and returns the cell results in grid order (horizon, method, run).
/// Rows are only assembled for complete (horizon, method) groups; the first failing
/// cell in grid order is returned alongside them.
pub fn run_cells(
    cfg: &ExperimentConfig,
    templates: Arc<TemplateLibrary>,
    factory: &BackendFactory<'_>,
    log_dir: Option<&Path>,
) -> Result<(Vec<ReportRow>, Option<BenchErrorKind>), BenchError> {
    cfg.validate(&templates)?;
    let data = prepare(cfg)?;
    let grid: Vec<(usize, &Method, usize)> = cfg
        .horizons
        .iter()
        .flat_map(|&h| {
            cfg.methods
                .iter()
                .flat_map(move |m| (0..cfg.runs).map(move |r| (h, m, r)))
        })
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallelism)
        .build()
        .map_err(|e| BenchErrorKind::Config(e.to_string()))?;
    let results: Vec<Result<CellResult, BenchErrorKind>> = pool.install(|| {
        grid.par_iter()
            .map(|&cell| run_cell(cfg, &data, &templates, factory, cell, log_dir))
            .collect()
    });

    let mut rows = Vec::new();
    let mut first_error = None;
    for group in results.chunks(cfg.runs) {
        let mut cells = Vec::with_capacity(cfg.runs);
        for r in group {
            match r {
                Ok(c) => cells.push(c),
                Err(_) => break,
            }
        }
        if cells.len() == cfg.runs {
            rows.push(aggregate(&data, &cells));
        }
    }
    for r in results {
        if let Err(e) = r {
            first_error = Some(e);
            break;
        }
    }
    Ok((rows, first_error))
}

fn aggregate(data: &Prepared, cells: &[&CellResult]) -> ReportRow {
    let run_maes: Vec<f64> = cells.iter().map(|c| c.test_mae).collect();
    let n = cells.len() as f64;
    ReportRow {
        dataset: data.name.clone(),
        horizon: cells[0].horizon,
        method: cells[0].method.to_string(),
        median: median(&run_maes).expect("runs >= 1"),
        run_maes,
        iterations: cells.iter().map(|c| c.iterations as f64).sum::<f64>() / n,
        early_stop_rate: cells.iter().filter(|c| c.early_stop).count() as f64 / n,
        forecaster_tokens: cells.iter().map(|c| c.tokens.forecaster).sum(),
        refiner_tokens: cells.iter().map(|c| c.tokens.refiner).sum(),
        scaler_mean: data.split.scaler.mean,
        scaler_std: data.split.scaler.std,
    }
}

/// Where a finished or failed experiment left its files.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub dir: PathBuf,
    pub report: Report,
}

/// Creates `<output>/run-<timestamp>`, adding a numeric suffix if it already exists.
pub fn create_run_dir(output: &Path) -> std::io::Result<PathBuf> {
    fs::create_dir_all(output)?;
    let stamp = chrono::Local::now().format("run-%Y%m%dT%H%M%S").to_string();
    for i in 0.. {
        let dir = if i == 0 {
            output.join(&stamp)
        } else {
            output.join(format!("{stamp}-{i}"))
        };
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e),
        }
    }
    unreachable!("unbounded suffix search")
}

/// Runs the grid, writing `report.csv`, `report.json`, the effective config and one
/// session log per cell into a fresh run directory. On failure the rows of completed
/// groups are still written.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    templates: Arc<TemplateLibrary>,
    factory: &BackendFactory<'_>,
) -> Result<RunOutput, BenchError> {
    cfg.validate(&templates)?;
    let io = |e: std::io::Error| BenchError::from(BenchErrorKind::Io(e.to_string()));
    let dir = create_run_dir(&cfg.output).map_err(io)?;
    let sessions = dir.join("sessions");
    fs::create_dir_all(&sessions).map_err(io)?;
    let cfg_json = serde_json::to_string_pretty(cfg).map_err(|e| BenchErrorKind::Io(e.to_string()))?;
    fs::write(dir.join("config.json"), cfg_json).map_err(io)?;

    let (rows, error) = run_cells(cfg, templates, factory, Some(&sessions))?;
    let report = Report {
        meta: ReportMeta::for_config(cfg),
        rows,
    };
    if !report.rows.is_empty() {
        emit_report(&report, ReportFormat::Csv, &dir.join("report.csv"))?;
        emit_report(&report, ReportFormat::Json, &dir.join("report.json"))?;
    }
    match error {
        None => Ok(RunOutput { dir, report }),
        Some(kind) => Err(BenchError {
            kind,
            partial_report: (!report.rows.is_empty()).then(|| dir.join("report.csv")),
        }),
    }
}

/// [`run_experiment`] over the four ablation conditions, whatever `cfg.methods` says.
pub fn run_ablation(
    cfg: &ExperimentConfig,
    templates: Arc<TemplateLibrary>,
    factory: &BackendFactory<'_>,
) -> Result<RunOutput, BenchError> {
    let cfg = ExperimentConfig {
        methods: Method::ABLATION.to_vec(),
        ..cfg.clone()
    };
    run_experiment(&cfg, templates, factory)
}

/// Fixed-width text table with one block per (dataset, horizon).
pub fn ablation_table(rows: &[ReportRow]) -> String {
    let mut out = String::new();
    let mut last: Option<(&str, usize)> = None;
    for row in rows {
        if last != Some((&row.dataset, row.horizon)) {
            if last.is_some() {
                out.push('\n');
            }
            out.push_str(&format!("{} H={}\n", row.dataset, row.horizon));
            out.push_str(&format!(
                "{:<18} {:>12} {:>10} {:>10} {:>14}\n",
                "condition", "median_mae", "iterations", "early_stop", "refiner_tokens"
            ));
            last = Some((&row.dataset, row.horizon));
        }
        let label = row
            .method
            .parse::<Method>()
            .map(|m| m.label())
            .unwrap_or_else(|_| row.method.clone());
        out.push_str(&format!(
            "{:<18} {:>12.6} {:>10.2} {:>10.2} {:>14}\n",
            label, row.median, row.iterations, row.early_stop_rate, row.refiner_tokens
        ));
    }
    out
}

/// CSV header for rows with `runs` per-run columns.
pub fn csv_header(runs: usize) -> Vec<String> {
    let mut header: Vec<String> = ["dataset", "horizon", "method"].iter().map(|s| s.to_string()).collect();
    header.extend((1..=runs).map(|i| format!("run_{i}")));
    header.extend(
        [
            "median",
            "iterations",
            "early_stop_rate",
            "forecaster_tokens",
            "refiner_tokens",
            "scaler_mean",
            "scaler_std",
        ]
        .iter()
        .map(|s| s.to_string()),
    );
    header
}

pub fn emit_report(report: &Report, format: ReportFormat, path: &Path) -> Result<(), BenchError> {
    let io = |e: String| BenchError::from(BenchErrorKind::Io(format!("{}: {e}", path.display())));
    if report.rows.is_empty() {
        return Err(BenchErrorKind::Io("report has no rows".into()).into());
    }
    match format {
        ReportFormat::Json => {
            let text = serde_json::to_string_pretty(report).map_err(|e| io(e.to_string()))?;
            fs::write(path, text + "\n").map_err(|e| io(e.to_string()))
        }
        ReportFormat::Csv => {
            let runs = report.rows.iter().map(|r| r.run_maes.len()).max().unwrap_or(0);
            let mut w = csv::Writer::from_path(path).map_err(|e| io(e.to_string()))?;
            w.write_record(csv_header(runs)).map_err(|e| io(e.to_string()))?;
            for row in &report.rows {
                let mut rec = vec![row.dataset.clone(), row.horizon.to_string(), row.method.clone()];
                rec.extend((0..runs).map(|i| row.run_maes.get(i).map(|v| v.to_string()).unwrap_or_default()));
                rec.extend([
                    row.median.to_string(),
                    row.iterations.to_string(),
                    row.early_stop_rate.to_string(),
                    row.forecaster_tokens.to_string(),
                    row.refiner_tokens.to_string(),
                    row.scaler_mean.to_string(),
                    row.scaler_std.to_string(),
                ]);
                w.write_record(rec).map_err(|e| io(e.to_string()))?;
            }
            w.flush().map_err(|e| io(e.to_string()))
        }
    }
}

pub fn read_report_json(path: &Path) -> Result<Report, BenchError> {
    let text = fs::read_to_string(path).map_err(|e| BenchErrorKind::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| BenchErrorKind::Io(format!("{}: {e}", path.display())).into())
}
