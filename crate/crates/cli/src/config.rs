//! JSON config files and backend construction.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use flairr::backend::{
    Backend, BackendError, Backends, HttpBackend, HttpConfig, RecordSink, RecordingBackend, ScriptMode,
    ScriptedBackend, SyntheticOracle,
};
use flairr::bench::DatasetSpec;
use flairr::session::SessionConfig;
use serde::Deserialize;

use crate::{BackendArgs, BackendKind, CliError, SessionArgs};

/// Backend settings as they may appear under `"backend"` in a config file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSection {
    pub kind: Option<BackendKind>,
    pub script: Option<PathBuf>,
    pub script_mode: Option<ScriptMode>,
    pub endpoint_url: Option<String>,
    pub model_name: Option<String>,
    pub timeout_s: Option<u64>,
    pub max_retries: Option<u32>,
    pub record: Option<PathBuf>,
}

impl BackendSection {
    fn resolve_paths(&mut self, base: &Path) {
        for p in [&mut self.script, &mut self.record].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    /// Flags override file values.
    pub fn merged(mut self, args: &BackendArgs) -> Self {
        if args.backend.is_some() {
            self.kind = args.backend;
        }
        if args.script.is_some() {
            self.script = args.script.clone();
        }
        if args.script_mode.is_some() {
            self.script_mode = args.script_mode.map(Into::into);
        }
        if args.endpoint.is_some() {
            self.endpoint_url = args.endpoint.clone();
        }
        if args.model.is_some() {
            self.model_name = args.model.clone();
        }
        if args.timeout.is_some() {
            self.timeout_s = args.timeout;
        }
        if args.record.is_some() {
            self.record = args.record.clone();
        }
        self
    }
}

/// Config file for `forecast` and `refine`.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunFile {
    pub dataset: Option<DatasetSpec>,
    pub session: Option<SessionConfig>,
    pub backend: Option<BackendSection>,
    pub strategy: Option<String>,
    pub train_fraction: Option<f64>,
}

fn read_json(path: &Path) -> Result<serde_json::Value, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

pub fn load_run_file(path: Option<&Path>) -> Result<RunFile, CliError> {
    let Some(path) = path else {
        return Ok(RunFile::default());
    };
    let mut file: RunFile =
        serde_json::from_value(read_json(path)?).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    let base = base_dir(path);
    if let Some(ds) = file.dataset.as_mut() {
        if ds.path.is_relative() {
            ds.path = base.join(&ds.path);
        }
    }
    if let Some(b) = file.backend.as_mut() {
        b.resolve_paths(&base);
    }
    Ok(file)
}

/// Splits an experiment config file into the experiment and its optional backend
/// section. Relative paths resolve against the file's directory.
pub fn load_bench_file(path: &Path) -> Result<(flairr::bench::ExperimentConfig, BackendSection), CliError> {
    let mut value = read_json(path)?;
    let backend = match value.as_object_mut().and_then(|o| o.remove("backend")) {
        Some(v) => serde_json::from_value::<BackendSection>(v)
            .map_err(|e| CliError::config(format!("{}: backend: {e}", path.display())))?,
        None => BackendSection::default(),
    };
    let mut cfg: flairr::bench::ExperimentConfig =
        serde_json::from_value(value).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    let base = base_dir(path);
    if cfg.dataset.path.is_relative() {
        cfg.dataset.path = base.join(&cfg.dataset.path);
    }
    if cfg.output.is_relative() {
        cfg.output = base.join(&cfg.output);
    }
    let mut backend = backend;
    backend.resolve_paths(&base);
    Ok((cfg, backend))
}

/// Applies session flags on top of `cfg`.
pub fn apply_session_args(cfg: &mut SessionConfig, args: &SessionArgs) {
    macro_rules! set {
        ($($field:ident <- $arg:ident),* $(,)?) => {
            $(if let Some(v) = args.$arg.clone() { cfg.$field = v; })*
        };
    }
    set!(
        context_len <- context,
        horizon <- horizon,
        m <- m,
        max_iter <- max_iter,
        stop_threshold_pct <- stop_threshold,
        sample_size <- sample_size,
        precision <- precision,
        parse_retries <- parse_retries,
        seed <- seed,
    );
    if args.no_retrieval {
        cfg.retrieval_enabled = false;
    }
}

/// Builds backends from a merged backend section. `seed` feeds the synthetic oracle
/// and replaces `{seed}` in a script path.
pub struct BackendBuilder {
    section: BackendSection,
    precision: usize,
    sink: Option<Arc<RecordSink>>,
}

impl BackendBuilder {
    /// Checks required keys before any request is made.
    pub fn new(section: BackendSection, precision: usize) -> Result<Self, CliError> {
        match section.kind.unwrap_or_default() {
            BackendKind::Scripted if section.script.is_none() => {
                return Err(CliError::config("the scripted backend needs --script"));
            }
            BackendKind::Http if section.endpoint_url.as_deref().is_none_or(|u| u.trim().is_empty()) => {
                return Err(CliError::config("the http backend needs --endpoint"));
            }
            _ => {}
        }
        let sink = match &section.record {
            Some(path) => Some(RecordSink::open(path).map_err(|e| CliError::config(e.to_string()))?),
            None => None,
        };
        Ok(Self {
            section,
            precision,
            sink,
        })
    }

    pub fn build(&self, seed: u64) -> Result<Backends, BackendError> {
        let s = &self.section;
        let backend: Arc<dyn Backend> = match s.kind.unwrap_or_default() {
            BackendKind::Scripted => {
                let path = s.script.as_ref().expect("checked in new");
                let path = PathBuf::from(path.to_string_lossy().replace("{seed}", &seed.to_string()));
                Arc::new(ScriptedBackend::from_file(path, s.script_mode.unwrap_or_default())?)
            }
            BackendKind::Http => {
                let defaults = HttpConfig::default();
                Arc::new(HttpBackend::new(HttpConfig {
                    endpoint_url: s.endpoint_url.clone().unwrap_or(defaults.endpoint_url),
                    model_name: s.model_name.clone().unwrap_or(defaults.model_name),
                    timeout_s: s.timeout_s.unwrap_or(defaults.timeout_s),
                    max_retries: s.max_retries.unwrap_or(defaults.max_retries),
                    ..defaults
                })?)
            }
            BackendKind::Synthetic => Arc::new(SyntheticOracle::new(seed).with_precision(self.precision)),
        };
        let backend: Arc<dyn Backend> = match &self.sink {
            Some(sink) => Arc::new(RecordingBackend::new(backend, Arc::clone(sink))),
            None => backend,
        };
        Ok(Backends::single(backend))
    }
}
