use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{RefinementRecord, SessionResult};

/// JSON-lines audit trail of one session: an `iteration` line per refinement record
/// followed by one `summary` line.
#[derive(Debug)]
pub struct SessionLog {
    path: PathBuf,
    out: BufWriter<File>,
}

#[derive(Serialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum Line<'a> {
    Iteration(&'a RefinementRecord),
    Summary(Summary<'a>),
    Error { message: &'a str, iterations: usize },
}

#[derive(Serialize)]
struct Summary<'a> {
    template_id: &'a str,
    instructions: Option<Vec<&'a str>>,
    early_stop: bool,
    best_iteration: usize,
    best_mae: f64,
    iterations: usize,
    forecaster_tokens: u64,
    refiner_tokens: u64,
}

impl SessionLog {
    pub fn create(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        Ok(Self {
            out: BufWriter::new(File::create(&path)?),
            path,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn line(&mut self, line: &Line<'_>) -> std::io::Result<()> {
        serde_json::to_writer(&mut self.out, line)?;
        self.out.write_all(b"\n")?;
        self.out.flush()
    }

    pub fn record(&mut self, record: &RefinementRecord) -> std::io::Result<()> {
        self.line(&Line::Iteration(record))
    }

    pub fn summary(&mut self, result: &SessionResult) -> std::io::Result<()> {
        self.line(&Line::Summary(Summary {
            template_id: &result.p_out.template_id,
            instructions: result
                .p_out
                .instructions
                .as_ref()
                .map(|b| b.items.iter().map(String::as_str).collect()),
            early_stop: result.early_stop,
            best_iteration: result.best_iteration,
            best_mae: result.best_mae,
            iterations: result.history.len(),
            forecaster_tokens: result.tokens.forecaster,
            refiner_tokens: result.tokens.refiner,
        }))
    }

    pub fn error(&mut self, message: &str, iterations: usize) -> std::io::Result<()> {
        self.line(&Line::Error { message, iterations })
    }
}
