//! Forecaster, refiner and synthesis prompts: rendering from the template library and
//! parsing of the structured replies.

mod numbers;
mod parse;
mod template;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use numbers::{format_number, format_numbers, parse_numbers, MAX_PRECISION};
pub use parse::{parse_forecast_reply, parse_instructions_reply, parse_refiner_reply, ParseError, CORRECTIVE_SUFFIX};
pub use template::{
    find_placeholder, placeholders, render, PromptTemplate, TemplateKind, TemplateLibrary, FORECASTER_BASE, REFINER,
    SYNTHESIS,
};

use crate::scalar::Scalar;

/// Soft limit on instruction items requested from the synthesis agent.
pub const INSTRUCTION_SOFT_LIMIT: usize = 3;

/// Text shown to the refiner when the base prompt carries no instruction block.
pub const NO_INSTRUCTIONS: &str = "(none: base prompt without additional forecasting instructions)";

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("unresolved placeholder {0} in rendered prompt")]
    UnresolvedPlaceholder(String),
    #[error("template error: {0}")]
    Template(String),
    #[error("unknown template {name:?}; available: {available}")]
    UnknownTemplate { name: String, available: String },
    #[error("{0}")]
    InvalidInput(String),
    #[error("io: {0}")]
    Io(String),
}

/// Dataset description shown to the forecaster.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub target: String,
}

impl DatasetMeta {
    pub fn new(name: impl Into<String>, description: impl Into<String>, target: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            description: description.into(),
            target: target.into(),
        }
    }
}

/// The mutable "Forecasting Instructions" part of the forecaster prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionBlock {
    pub items: Vec<String>,
    /// Iteration whose refinement produced this block; 0 for initial blocks.
    pub source_iteration: usize,
    /// More than [`INSTRUCTION_SOFT_LIMIT`] items were produced.
    #[serde(default)]
    pub over_limit: bool,
}

impl InstructionBlock {
    pub fn new(items: Vec<String>, source_iteration: usize) -> Result<Self, PromptError> {
        let items: Vec<String> = items
            .into_iter()
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
        if items.is_empty() {
            return Err(PromptError::InvalidInput("instruction block has no items".into()));
        }
        if let Some(tok) = items.iter().find_map(|i| find_placeholder(i)) {
            return Err(PromptError::UnresolvedPlaceholder(tok));
        }
        Ok(Self {
            over_limit: items.len() > INSTRUCTION_SOFT_LIMIT,
            items,
            source_iteration,
        })
    }

    /// Initial block built from an ASP strategy template; `None` for an empty body.
    pub fn from_strategy(template: &PromptTemplate, horizon: usize) -> Result<Option<Self>, PromptError> {
        let body = template.render(&BTreeMap::from([("sequence_length", horizon.to_string())]))?;
        if body.trim().is_empty() {
            return Ok(None);
        }
        Self::new(vec![body], 0).map(Some)
    }

    /// One `- item` bullet per line; continuation lines are indented.
    pub fn render(&self) -> String {
        self.items
            .iter()
            .map(|item| format!("- {}", item.replace('\n', "\n  ")))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Parsed forecaster reply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastReply<T = f64> {
    pub values: Vec<T>,
    pub reasoning: String,
    pub certainty: Option<f64>,
    pub certainty_reasoning: Option<String>,
}

impl<T: Scalar> ForecastReply<T> {
    /// The reply in the forecaster output format, values at `precision` decimals.
    pub fn render(&self, precision: usize) -> String {
        let mut s = format!(
            "Predicted Values: [{}]\nReasoning: {}",
            format_numbers(&self.values, precision),
            self.reasoning
        );
        if let Some(c) = self.certainty {
            s.push_str(&format!("\nCertainty Estimate: {c}%"));
        }
        if let Some(r) = &self.certainty_reasoning {
            s.push_str(&format!("\nCertainty Reasoning: {r}"));
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Confidence {
    High,
    Medium,
    Low,
}

/// Parsed refiner reply.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefinerReply {
    pub learnings: String,
    pub done: bool,
    pub confidence: Option<Confidence>,
    pub rationale: Option<String>,
}

/// Renders the base forecaster prompt. `raft_context` is the formatted analog text;
/// empty or absent values drop their conditional sections.
pub fn render_forecaster_prompt(
    library: &TemplateLibrary,
    template_id: &str,
    meta: &DatasetMeta,
    horizon: usize,
    history_text: &str,
    instructions: Option<&InstructionBlock>,
    raft_context: Option<(&str, usize)>,
) -> Result<String, PromptError> {
    if history_text.trim().is_empty() {
        return Err(PromptError::InvalidInput("history text is empty".into()));
    }
    let template = library.get(template_id)?;
    if template.kind != TemplateKind::ForecasterBase {
        return Err(PromptError::Template(format!(
            "{template_id:?} is not a forecaster template"
        )));
    }
    let description = if meta.description.trim().is_empty() {
        "time series"
    } else {
        meta.description.trim()
    };
    let mut values = BTreeMap::from([
        ("target_variable", meta.target.clone()),
        ("data_name", meta.name.clone()),
        ("data_description", description.to_string()),
        ("prediction_length", horizon.to_string()),
        ("previous_sequence_length_data", history_text.to_string()),
    ]);
    if let Some(block) = instructions {
        values.insert("instructions", block.render());
    }
    if let Some((text, count)) = raft_context.filter(|(t, _)| !t.trim().is_empty()) {
        values.insert("raft_context", text.to_string());
        values.insert("segment_count", count.to_string());
    }
    template.render(&values)
}

/// One evaluated sample shown to the refiner.
#[derive(Debug, Clone, Copy)]
pub struct RefinerSample<'a> {
    pub prompt: &'a str,
    pub predictions: &'a [f64],
    pub truth: &'a [f64],
}

/// Everything the refiner prompt shows for one iteration.
#[derive(Debug, Clone)]
pub struct RefinerView<'a> {
    /// 0-based; displayed 1-based.
    pub iteration: usize,
    pub current_instructions: &'a str,
    pub batch_mae: f64,
    /// `(instructions, batch MAE)` for every iteration so far, current one included.
    pub history: &'a [(String, f64)],
    pub samples: &'a [RefinerSample<'a>],
    pub target: &'a str,
    pub stop_threshold_pct: f64,
    pub precision: usize,
    /// Per-sample prompt character budget; longer prompts keep their head and tail.
    pub prompt_char_budget: usize,
}

/// Prefix of each refinement-history entry in the refiner prompt.
pub const HISTORY_ENTRY_PREFIX: &str = "- Attempt ";

pub fn render_refiner_prompt(library: &TemplateLibrary, view: &RefinerView<'_>) -> Result<String, PromptError> {
    if view.samples.is_empty() {
        return Err(PromptError::InvalidInput(
            "refiner prompt needs at least one sample".into(),
        ));
    }
    let history = view
        .history
        .iter()
        .enumerate()
        .map(|(i, (instr, mae))| {
            format!(
                "{HISTORY_ENTRY_PREFIX}{} | batch MAE: {}\n  Instructions:\n  {}",
                i + 1,
                format_number(*mae, view.precision),
                instr.replace('\n', "\n  ")
            )
        })
        .collect::<Vec<_>>()
        .join("\n");
    let samples = view
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            format!(
                "Sample {}\nPrompt:\n<<<\n{}\n>>>\nPredictions ({target}): [{}]\nGround-Truth ({target}): [{}]",
                i + 1,
                truncate_middle(s.prompt, view.prompt_char_budget),
                format_numbers(s.predictions, view.precision),
                format_numbers(s.truth, view.precision),
                target = view.target,
            )
        })
        .collect::<Vec<_>>()
        .join("\n\n");
    let values = BTreeMap::from([
        ("iteration", (view.iteration + 1).to_string()),
        (
            "current_instructions_under_review",
            view.current_instructions.to_string(),
        ),
        (
            "mae_to_report_to_teacher",
            format_number(view.batch_mae, view.precision),
        ),
        ("refinement_history", history),
        ("target_variable", view.target.to_string()),
        ("samples", samples),
        ("stop_threshold", trim_float(view.stop_threshold_pct)),
    ]);
    library.get(REFINER)?.render(&values)
}

pub fn render_synthesis_prompt(library: &TemplateLibrary, learnings: &str) -> Result<String, PromptError> {
    if learnings.trim().is_empty() {
        return Err(PromptError::InvalidInput("learnings are empty".into()));
    }
    library
        .get(SYNTHESIS)?
        .render(&BTreeMap::from([("current_learnings", learnings.trim().to_string())]))
}

fn trim_float(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v}")
    }
}

/// Keeps the first and last halves of `budget` characters around an omission note.
fn truncate_middle(text: &str, budget: usize) -> String {
    let total = text.chars().count();
    if total <= budget {
        return text.to_string();
    }
    let head = budget / 2;
    let tail = budget - head;
    let start: String = text.chars().take(head).collect();
    let end: String = text.chars().skip(total - tail).collect();
    format!("{start}\n[... {} characters omitted ...]\n{end}", total - budget)
}
