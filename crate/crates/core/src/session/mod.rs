//! The refinement loop: evaluate the current instructions on validation windows, ask
//! the refiner for learnings, synthesize the next instructions, and keep the best.

mod config;
mod log;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{ConfigError, SessionConfig, Temperatures};
pub use log::SessionLog;

use crate::backend::{approx_tokens, AgentTag, BackendError, Backends, CompletionRequest};
use crate::metrics::mae;
use crate::prompt::{
    format_numbers, parse_forecast_reply, parse_instructions_reply, parse_refiner_reply, render_forecaster_prompt,
    render_refiner_prompt, render_synthesis_prompt, DatasetMeta, InstructionBlock, ParseError, PromptError,
    RefinerReply, RefinerSample, RefinerView, TemplateLibrary, NO_INSTRUCTIONS,
};
use crate::retrieval::{format_analogs, HistDb, RetrievalError};
use crate::scalar::Scalar;
use crate::series::{window_at, SeriesError, WindowPair};

/// Everything a session needs besides its data.
#[derive(Debug, Clone)]
pub struct SessionContext {
    pub cfg: SessionConfig,
    pub backends: Backends,
    pub templates: Arc<TemplateLibrary>,
    pub meta: DatasetMeta,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenTally {
    pub forecaster: u64,
    /// Refiner and synthesis calls together.
    pub refiner: u64,
}

impl TokenTally {
    fn add(&mut self, tag: AgentTag, n: u64) {
        match tag {
            AgentTag::Forecaster => self.forecaster += n,
            AgentTag::Refiner | AgentTag::Synthesis => self.refiner += n,
        }
    }

    fn merge(&mut self, other: TokenTally) {
        self.forecaster += other.forecaster;
        self.refiner += other.refiner;
    }
}

/// One evaluated validation window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub origin: usize,
    pub predictions: Vec<f64>,
    pub truth: Vec<f64>,
    pub mae: f64,
    pub parse_failures: usize,
    pub analogs: usize,
    pub prompt: String,
}

/// A validation window left out of the batch because its replies never parsed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedSample {
    pub origin: usize,
    pub parse_failures: usize,
    pub error: String,
}

/// One iteration of the loop. Iterations count from 1; iteration 1 runs the initial
/// instructions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementRecord {
    pub iteration: usize,
    pub instructions: Option<InstructionBlock>,
    pub batch_mae: f64,
    pub per_sample: Vec<SampleRecord>,
    pub skipped: Vec<SkippedSample>,
    pub refiner_reply: Option<RefinerReply>,
    /// The refiner said done on the first iteration and was overruled.
    pub done_overridden: bool,
    /// Unparseable replies across all agents in this iteration.
    pub parse_failures: usize,
    pub tokens: TokenTally,
}

/// The selected prompt: base template plus instruction block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptOut {
    pub template_id: String,
    pub instructions: Option<InstructionBlock>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionResult {
    pub p_out: PromptOut,
    pub early_stop: bool,
    pub best_iteration: usize,
    pub best_mae: f64,
    pub history: Vec<RefinementRecord>,
    /// Per-sample predictions of the best iteration.
    pub best_forecast: Vec<Vec<f64>>,
    pub tokens: TokenTally,
}

#[derive(Debug, Error)]
pub enum SessionErrorKind {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("data: {0}")]
    Data(String),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("{tag} backend: {source}")]
    Backend { tag: AgentTag, source: BackendError },
    #[error("{tag} reply unparseable after {attempts} attempt(s): {last}")]
    ParseExhausted {
        tag: AgentTag,
        attempts: usize,
        last: ParseError,
    },
    #[error("every validation sample failed to parse: {}", failures.join("; "))]
    AllSamplesFailed { failures: Vec<String> },
}

impl From<SeriesError> for SessionErrorKind {
    fn from(e: SeriesError) -> Self {
        SessionErrorKind::Data(e.to_string())
    }
}

/// A failed session with the iterations completed before the failure.
#[derive(Debug, Error)]
#[error("{kind} (after {} completed iteration(s))", partial.len())]
pub struct SessionError {
    pub kind: SessionErrorKind,
    pub partial: Vec<RefinementRecord>,
}

struct Parsed<R> {
    value: R,
    failures: usize,
    tokens: u64,
}

enum CallError {
    Backend(BackendError),
    Exhausted {
        failures: usize,
        last: ParseError,
        tokens: u64,
    },
}

impl SessionContext {
    pub fn new(cfg: SessionConfig, backends: Backends, templates: Arc<TemplateLibrary>, meta: DatasetMeta) -> Self {
        Self {
            cfg,
            backends,
            templates,
            meta,
        }
    }

    /// Completes `prompt` and parses the reply, re-asking with a corrective sentence up
    /// to `parse_retries` times.
    fn call_parsed<R>(
        &self,
        tag: AgentTag,
        prompt: &str,
        parse: impl Fn(&str) -> Result<R, ParseError>,
    ) -> Result<Parsed<R>, CallError> {
        let backend = self.backends.for_tag(tag);
        let mut request = CompletionRequest::new(tag, prompt);
        request.temperature = self.cfg.temperatures.for_tag(tag);
        request.max_tokens = self.cfg.max_tokens;
        request.seed = Some(self.cfg.seed);
        let mut failures = 0;
        let mut tokens = 0;
        loop {
            let reply = backend.complete(&request).map_err(CallError::Backend)?;
            tokens += reply
                .token_counts
                .map(|t| t.total())
                .unwrap_or_else(|| approx_tokens(&request.prompt) + approx_tokens(&reply.text));
            match parse(&reply.text) {
                Ok(value) => {
                    return Ok(Parsed {
                        value,
                        failures,
                        tokens,
                    })
                }
                Err(e) => {
                    failures += 1;
                    tracing::debug!(%tag, failures, error = %e, "unparseable reply");
                    if failures > self.cfg.parse_retries {
                        return Err(CallError::Exhausted {
                            failures,
                            last: e,
                            tokens,
                        });
                    }
                    request.prompt = format!("{prompt}\n\n{}", e.corrective_hint());
                }
            }
        }
    }
}

fn call_error(tag: AgentTag, e: CallError) -> SessionErrorKind {
    match e {
        CallError::Backend(source) => SessionErrorKind::Backend { tag, source },
        CallError::Exhausted { failures, last, .. } => SessionErrorKind::ParseExhausted {
            tag,
            attempts: failures,
            last,
        },
    }
}

/// The `sample_size` most recent windows of `train` whose context-plus-truth spans do
/// not overlap, oldest first.
pub fn validation_windows<T: Scalar>(
    train: &[T],
    context_len: usize,
    horizon: usize,
    sample_size: usize,
) -> Result<Vec<WindowPair<T>>, SeriesError> {
    let span = context_len + horizon;
    let needed = span * sample_size;
    if sample_size == 0 || train.len() < needed {
        return Err(SeriesError::WindowOutOfRange {
            origin: train.len().saturating_sub(horizon),
            context_len,
            horizon,
            len: train.len(),
        });
    }
    let last = train.len() - horizon;
    (0..sample_size)
        .rev()
        .map(|j| window_at(train, last - j * span, context_len, horizon))
        .collect()
}

/// Non-overlapping test windows tiling the region after `n_train` with stride `H`,
/// at most `cap` of them. Contexts may reach back into the training region.
pub fn test_windows<T: Scalar>(
    full: &[T],
    n_train: usize,
    context_len: usize,
    horizon: usize,
    cap: usize,
) -> Result<Vec<WindowPair<T>>, SeriesError> {
    let first = n_train.max(context_len);
    let windows: Vec<WindowPair<T>> = (0..cap)
        .map(|k| first + k * horizon)
        .take_while(|&t| t + horizon <= full.len())
        .map(|t| window_at(full, t, context_len, horizon))
        .collect::<Result<_, _>>()?;
    if windows.is_empty() {
        return Err(SeriesError::WindowOutOfRange {
            origin: first,
            context_len,
            horizon,
            len: full.len(),
        });
    }
    Ok(windows)
}

/// A single parsed forecast.
#[derive(Debug, Clone, PartialEq)]
pub struct Forecast<T = f64> {
    pub values: Vec<T>,
    pub reasoning: String,
    pub certainty: Option<f64>,
    pub certainty_reasoning: Option<String>,
    pub prompt: String,
    pub analogs: usize,
    pub parse_failures: usize,
    pub tokens: u64,
}

fn render_prompt<T: Scalar>(
    ctx: &SessionContext,
    template_id: &str,
    instructions: Option<&InstructionBlock>,
    window: &WindowPair<T>,
    db: Option<&HistDb<T>>,
) -> Result<(String, usize), SessionErrorKind> {
    let cfg = &ctx.cfg;
    if window.context.len() != cfg.context_len {
        return Err(SessionErrorKind::Data(format!(
            "window at {} has {} context values, expected {}",
            window.origin,
            window.context.len(),
            cfg.context_len
        )));
    }
    let analogs = match db.filter(|_| cfg.retrieval_enabled) {
        Some(db) => db
            .for_origin(window.origin)
            .retrieve(&window.context, cfg.effective_m())?,
        None => Vec::new(),
    };
    let formatted = format_analogs(&analogs, cfg.precision);
    let prompt = render_forecaster_prompt(
        &ctx.templates,
        template_id,
        &ctx.meta,
        cfg.horizon,
        &format_numbers(&window.context, cfg.precision),
        instructions,
        (!formatted.no_analogs).then_some((formatted.text.as_str(), analogs.len())),
    )?;
    Ok((prompt, analogs.len()))
}

fn forecast_once<T: Scalar>(
    ctx: &SessionContext,
    template_id: &str,
    instructions: Option<&InstructionBlock>,
    window: &WindowPair<T>,
    db: Option<&HistDb<T>>,
) -> Result<Result<Forecast<T>, CallError>, SessionErrorKind> {
    let (prompt, analogs) = render_prompt(ctx, template_id, instructions, window, db)?;
    let horizon = ctx.cfg.horizon;
    Ok(ctx
        .call_parsed(AgentTag::Forecaster, &prompt, |text| {
            parse_forecast_reply::<T>(text, horizon)
        })
        .map(|p| Forecast {
            values: p.value.values,
            reasoning: p.value.reasoning,
            certainty: p.value.certainty,
            certainty_reasoning: p.value.certainty_reasoning,
            prompt,
            analogs,
            parse_failures: p.failures,
            tokens: p.tokens,
        }))
}

/// Outcome of evaluating one instruction block on a batch of windows.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub batch_mae: f64,
    pub samples: Vec<SampleRecord>,
    pub skipped: Vec<SkippedSample>,
    pub tokens: u64,
}

/// Forecasts every window with `instructions` and averages the per-window MAEs.
/// Windows whose replies never parse are skipped; the batch fails only when all do.
pub fn evaluate_prompt<T: Scalar>(
    ctx: &SessionContext,
    instructions: Option<&InstructionBlock>,
    windows: &[WindowPair<T>],
    db: Option<&HistDb<T>>,
) -> Result<Evaluation, SessionErrorKind> {
    if windows.is_empty() {
        return Err(SessionErrorKind::Data("no validation windows".into()));
    }
    let mut samples = Vec::with_capacity(windows.len());
    let mut skipped = Vec::new();
    let mut tokens = 0;
    for window in windows {
        match forecast_once(ctx, &ctx.cfg.template_id, instructions, window, db)? {
            Ok(f) => {
                tokens += f.tokens;
                let err = mae(&f.values, &window.truth).map_err(|e| SessionErrorKind::Data(e.to_string()))?;
                samples.push(SampleRecord {
                    origin: window.origin,
                    predictions: f.values.iter().map(|v| v.as_f64()).collect(),
                    truth: window.truth.iter().map(|v| v.as_f64()).collect(),
                    mae: err.as_f64(),
                    parse_failures: f.parse_failures,
                    analogs: f.analogs,
                    prompt: f.prompt,
                });
            }
            Err(CallError::Backend(source)) => {
                return Err(SessionErrorKind::Backend {
                    tag: AgentTag::Forecaster,
                    source,
                })
            }
            Err(CallError::Exhausted {
                failures,
                last,
                tokens: t,
            }) => {
                tokens += t;
                tracing::warn!(origin = window.origin, error = %last, "skipping unparseable sample");
                skipped.push(SkippedSample {
                    origin: window.origin,
                    parse_failures: failures,
                    error: last.to_string(),
                });
            }
        }
    }
    if samples.is_empty() {
        return Err(SessionErrorKind::AllSamplesFailed {
            failures: skipped
                .iter()
                .map(|s| format!("window {}: {}", s.origin, s.error))
                .collect(),
        });
    }
    let batch_mae = samples.iter().map(|s| s.mae).sum::<f64>() / samples.len() as f64;
    Ok(Evaluation {
        batch_mae,
        samples,
        skipped,
        tokens,
    })
}

/// What the refiner decided after one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct RefineOutcome {
    /// Instructions for the next iteration; `None` keeps the current ones.
    pub next: Option<InstructionBlock>,
    pub done: bool,
    pub reply: RefinerReply,
    pub done_overridden: bool,
    pub parse_failures: usize,
    pub tokens: TokenTally,
}

fn instructions_text(block: Option<&InstructionBlock>) -> String {
    block
        .map(InstructionBlock::render)
        .unwrap_or_else(|| NO_INSTRUCTIONS.to_string())
}

/// Renders the refiner prompt for the last record in `history`.
pub fn refiner_prompt(ctx: &SessionContext, history: &[RefinementRecord]) -> Result<String, SessionErrorKind> {
    let current = history
        .last()
        .ok_or_else(|| SessionErrorKind::Data("refinement history is empty".into()))?;
    let pairs: Vec<(String, f64)> = history
        .iter()
        .map(|r| (instructions_text(r.instructions.as_ref()), r.batch_mae))
        .collect();
    let samples: Vec<RefinerSample<'_>> = current
        .per_sample
        .iter()
        .map(|s| RefinerSample {
            prompt: &s.prompt,
            predictions: &s.predictions,
            truth: &s.truth,
        })
        .collect();
    let current_text = instructions_text(current.instructions.as_ref());
    let view = RefinerView {
        iteration: history.len() - 1,
        current_instructions: &current_text,
        batch_mae: current.batch_mae,
        history: &pairs,
        samples: &samples,
        target: &ctx.meta.target,
        stop_threshold_pct: ctx.cfg.stop_threshold_pct,
        precision: ctx.cfg.precision,
        prompt_char_budget: ctx.cfg.refiner_prompt_budget,
    };
    Ok(render_refiner_prompt(&ctx.templates, &view)?)
}

/// Asks the refiner about the latest iteration and, unless it is done, synthesizes
/// the next instructions. `synthesize = false` skips the synthesis call.
///
/// A done signal on the first iteration is overridden, since there is no earlier
/// error to compare against.
pub fn refine_step(
    ctx: &SessionContext,
    history: &[RefinementRecord],
    synthesize: bool,
) -> Result<RefineOutcome, SessionErrorKind> {
    let prompt = refiner_prompt(ctx, history)?;
    let mut tokens = TokenTally::default();
    let reply = ctx
        .call_parsed(AgentTag::Refiner, &prompt, parse_refiner_reply)
        .map_err(|e| call_error(AgentTag::Refiner, e))?;
    tokens.add(AgentTag::Refiner, reply.tokens);
    let mut parse_failures = reply.failures;
    let refiner_reply = reply.value;
    let mut done = refiner_reply.done;
    let done_overridden = done && history.len() == 1;
    if done_overridden {
        tracing::info!("refiner signalled done on the first iteration; continuing");
        done = false;
    }
    let mut next = None;
    if !done && synthesize && !refiner_reply.learnings.trim().is_empty() {
        let prompt = render_synthesis_prompt(&ctx.templates, &refiner_reply.learnings)?;
        let iteration = history.len();
        let block = ctx
            .call_parsed(AgentTag::Synthesis, &prompt, |text| {
                parse_instructions_reply(text, iteration)
            })
            .map_err(|e| call_error(AgentTag::Synthesis, e))?;
        tokens.add(AgentTag::Synthesis, block.tokens);
        parse_failures += block.failures;
        next = Some(block.value);
    }
    Ok(RefineOutcome {
        next,
        done,
        reply: refiner_reply,
        done_overridden,
        parse_failures,
        tokens,
    })
}

/// Runs the refinement loop from `initial` over `windows` (the last `sample_size` are
/// used), with analogs drawn from `train`.
pub fn run_session<T: Scalar>(
    ctx: &SessionContext,
    train: &[T],
    windows: &[WindowPair<T>],
    initial: Option<InstructionBlock>,
) -> Result<SessionResult, SessionError> {
    run_session_with(ctx, train, windows, initial, &mut |_| {})
}

/// [`run_session`] with a callback invoked on every completed iteration.
pub fn run_session_with<T: Scalar>(
    ctx: &SessionContext,
    train: &[T],
    windows: &[WindowPair<T>],
    initial: Option<InstructionBlock>,
    on_record: &mut dyn FnMut(&RefinementRecord),
) -> Result<SessionResult, SessionError> {
    let mut history: Vec<RefinementRecord> = Vec::new();
    let fail = |kind: SessionErrorKind, history: Vec<RefinementRecord>| SessionError { kind, partial: history };
    let cfg = &ctx.cfg;
    if let Err(e) = cfg.validate() {
        return Err(fail(e.into(), history));
    }
    if windows.len() < cfg.sample_size {
        return Err(fail(
            SessionErrorKind::Data(format!(
                "{} validation window(s) given, sample_size is {}",
                windows.len(),
                cfg.sample_size
            )),
            history,
        ));
    }
    let batch = &windows[windows.len() - cfg.sample_size..];
    let db = if cfg.retrieval_enabled {
        match HistDb::build(train, cfg.context_len, cfg.horizon) {
            Ok(db) => Some(db),
            Err(e) => return Err(fail(e.into(), history)),
        }
    } else {
        None
    };

    let mut current = initial;
    let mut best: Option<usize> = None;
    let mut early_stop = false;
    for k in 1..=cfg.max_iter {
        let eval = match evaluate_prompt(ctx, current.as_ref(), batch, db.as_ref()) {
            Ok(e) => e,
            Err(kind) => return Err(fail(kind, history)),
        };
        let forecast_failures: usize = eval.samples.iter().map(|s| s.parse_failures).sum::<usize>()
            + eval.skipped.iter().map(|s| s.parse_failures).sum::<usize>();
        history.push(RefinementRecord {
            iteration: k,
            instructions: current.clone(),
            batch_mae: eval.batch_mae,
            per_sample: eval.samples,
            skipped: eval.skipped,
            refiner_reply: None,
            done_overridden: false,
            parse_failures: forecast_failures,
            tokens: TokenTally {
                forecaster: eval.tokens,
                refiner: 0,
            },
        });
        if best.is_none_or(|b| eval.batch_mae < history[b].batch_mae) {
            best = Some(k - 1);
        }
        if !cfg.refinement_enabled {
            on_record(history.last().expect("just pushed"));
            break;
        }
        let outcome = match refine_step(ctx, &history, k < cfg.max_iter) {
            Ok(o) => o,
            Err(kind) => {
                on_record(history.last().expect("just pushed"));
                return Err(fail(kind, history));
            }
        };
        let record = history.last_mut().expect("just pushed");
        record.refiner_reply = Some(outcome.reply);
        record.done_overridden = outcome.done_overridden;
        record.parse_failures += outcome.parse_failures;
        record.tokens.merge(outcome.tokens);
        on_record(record);
        if outcome.done {
            early_stop = true;
            break;
        }
        if let Some(next) = outcome.next {
            current = Some(next);
        }
    }

    let best = best.expect("at least one iteration ran");
    let instructions = if early_stop {
        history.last().expect("non-empty").instructions.clone()
    } else {
        history[best].instructions.clone()
    };
    let mut tokens = TokenTally::default();
    for r in &history {
        tokens.merge(r.tokens);
    }
    Ok(SessionResult {
        p_out: PromptOut {
            template_id: cfg.template_id.clone(),
            instructions,
        },
        early_stop,
        best_iteration: history[best].iteration,
        best_mae: history[best].batch_mae,
        best_forecast: history[best].per_sample.iter().map(|s| s.predictions.clone()).collect(),
        history,
        tokens,
    })
}

/// One retrieve-augment-forecast-parse pass with the selected prompt. The window's
/// truth is not used and may be empty.
pub fn forecast_with<T: Scalar>(
    ctx: &SessionContext,
    p_out: &PromptOut,
    window: &WindowPair<T>,
    db: Option<&HistDb<T>>,
) -> Result<Forecast<T>, SessionErrorKind> {
    forecast_once(ctx, &p_out.template_id, p_out.instructions.as_ref(), window, db)?
        .map_err(|e| call_error(AgentTag::Forecaster, e))
}
