//! Marker-based line scanning of forecaster, refiner and synthesis replies.
//!
//! Section labels are matched at the start of a line, case-insensitively, after
//! stripping markdown decoration (`#`, `*`, `_`, `>` and leading bullets). Every
//! failure is a [`ParseError`], which the orchestrator treats as retryable.

use thiserror::Error;

use super::numbers::parse_numbers;
use super::template::find_placeholder;
use super::{Confidence, ForecastReply, InstructionBlock, RefinerReply};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("missing {marker:?} marker in reply: {excerpt:?}")]
    MissingMarker { marker: &'static str, excerpt: String },
    #[error("unbalanced or missing brackets around predicted values: {excerpt:?}")]
    UnbalancedBracket { excerpt: String },
    #[error("non-numeric token {token:?} in predicted values")]
    NonNumeric { token: String },
    #[error("expected {expected} predicted values, got {got}: {excerpt:?}")]
    CountMismatch {
        expected: usize,
        got: usize,
        excerpt: String,
    },
    #[error("cannot read Done value {value:?} as True or False")]
    BadBoolean { value: String },
    #[error("\"Learnings:\" must precede \"Done:\"")]
    MisorderedSections,
    #[error("learnings are required when Done is False")]
    EmptyLearnings,
    #[error("reply contains placeholder {token}")]
    Placeholder { token: String },
    #[error("reply has no instructions")]
    EmptyBody,
}

/// Sentence appended to a re-issued request after a format violation.
pub const CORRECTIVE_SUFFIX: &str =
    "Your previous reply violated the output format; emit exactly the specified format.";

impl ParseError {
    /// Sentence appended to a re-issued request after this failure.
    pub fn corrective_hint(&self) -> &'static str {
        match self {
            ParseError::Placeholder { .. } => {
                "Your previous reply contained a placeholder in braces; write concrete instructions without any placeholders."
            }
            _ => CORRECTIVE_SUFFIX,
        }
    }
}

const EXCERPT_CHARS: usize = 120;

fn excerpt(s: &str) -> String {
    let s = s.trim();
    if s.chars().count() <= EXCERPT_CHARS {
        s.to_string()
    } else {
        let head: String = s.chars().take(EXCERPT_CHARS).collect();
        format!("{head}...")
    }
}

/// Strips markdown decoration so labels like `**Done:** True` read as `Done: True`.
fn normalize(line: &str) -> String {
    let t = line
        .trim()
        .trim_start_matches(|c: char| matches!(c, '#' | '>' | '-' | '•') || c.is_whitespace());
    t.replace("**", "")
        .replace("__", "")
        .trim_start_matches('*')
        .trim()
        .to_string()
}

/// If `line` starts with `label` (case-insensitive), returns the rest after it.
fn strip_label(line: &str, label: &str) -> Option<String> {
    let norm = normalize(line);
    let head = norm.get(..label.len())?;
    head.eq_ignore_ascii_case(label)
        .then(|| norm[label.len()..].trim().to_string())
}

struct Section {
    label: usize,
    line: usize,
    text: String,
}

/// Splits `text` into labelled sections; text before the first label is dropped.
fn sections(text: &str, labels: &[&str]) -> Vec<Section> {
    let mut out: Vec<Section> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let hit = labels
            .iter()
            .enumerate()
            .find_map(|(li, l)| strip_label(line, l).map(|rest| (li, rest)));
        match hit {
            Some((label, rest)) => out.push(Section {
                label,
                line: i,
                text: rest,
            }),
            None => {
                if let Some(cur) = out.last_mut() {
                    if !cur.text.is_empty() {
                        cur.text.push('\n');
                    }
                    cur.text.push_str(line.trim_end());
                }
            }
        }
    }
    for s in &mut out {
        s.text = s.text.trim().to_string();
    }
    out
}

fn strip_brackets(s: &str) -> &str {
    let t = s.trim();
    t.strip_prefix('[')
        .and_then(|t| t.strip_suffix(']'))
        .map(str::trim)
        .unwrap_or(t)
}

const PREDICTED: usize = 0;
const REASONING: usize = 1;
const CERTAINTY: usize = 2;
const CERTAINTY_REASONING: usize = 3;

/// Parses a forecaster reply and checks it holds exactly `horizon` values.
pub fn parse_forecast_reply<T: Scalar>(text: &str, horizon: usize) -> Result<ForecastReply<T>, ParseError> {
    let secs = sections(
        text,
        &[
            "Predicted Values:",
            "Reasoning:",
            "Certainty Estimate:",
            "Certainty Reasoning:",
        ],
    );
    let find = |label: usize| secs.iter().find(|s| s.label == label).map(|s| s.text.as_str());

    let predicted = find(PREDICTED).ok_or_else(|| ParseError::MissingMarker {
        marker: "Predicted Values:",
        excerpt: excerpt(text),
    })?;
    let open = predicted.find('[');
    let close = predicted.find(']');
    let inner = match (open, close) {
        (Some(o), Some(c)) if o < c && !predicted[o + 1..c].contains('[') => &predicted[o + 1..c],
        _ => {
            return Err(ParseError::UnbalancedBracket {
                excerpt: excerpt(predicted),
            })
        }
    };
    let values = parse_numbers(inner).map_err(|token| ParseError::NonNumeric { token })?;
    if values.len() != horizon {
        return Err(ParseError::CountMismatch {
            expected: horizon,
            got: values.len(),
            excerpt: excerpt(inner),
        });
    }
    let certainty = find(CERTAINTY).and_then(|c| {
        strip_brackets(c)
            .trim_end_matches('%')
            .trim()
            .parse::<f64>()
            .ok()
            .filter(|v| (0.0..=100.0).contains(v))
    });
    Ok(ForecastReply {
        values: values.into_iter().map(T::from_f64_lossy).collect(),
        reasoning: find(REASONING)
            .map(|r| strip_brackets(r).to_string())
            .unwrap_or_default(),
        certainty,
        certainty_reasoning: find(CERTAINTY_REASONING).map(|r| strip_brackets(r).to_string()),
    })
}

const LEARNINGS: usize = 0;
const DONE: usize = 1;
const CONFIDENCE: usize = 2;

/// Parses `Learnings: ... Done: <bool> [Confidence in output: <level> - rationale]`.
pub fn parse_refiner_reply(text: &str) -> Result<RefinerReply, ParseError> {
    let secs = sections(text, &["Learnings:", "Done:", "Confidence in output:"]);
    let done_sec = secs
        .iter()
        .find(|s| s.label == DONE)
        .ok_or_else(|| ParseError::MissingMarker {
            marker: "Done:",
            excerpt: excerpt(text),
        })?;
    let learn_sec = secs.iter().find(|s| s.label == LEARNINGS);
    if learn_sec.is_some_and(|l| l.line > done_sec.line) {
        return Err(ParseError::MisorderedSections);
    }

    let first_line = done_sec.text.lines().next().unwrap_or("");
    let lower = first_line.to_ascii_lowercase();
    if lower.contains("true") && lower.contains("false") {
        // the template's "<True or False>" echoed back
        return Err(ParseError::BadBoolean {
            value: first_line.trim().to_string(),
        });
    }
    let raw = first_line
        .split_whitespace()
        .next()
        .unwrap_or("")
        .trim_matches(|c: char| matches!(c, '`' | '*' | '<' | '>' | '.' | ',' | '"' | '\'' | '[' | ']'));
    let done = if raw.eq_ignore_ascii_case("true") {
        true
    } else if raw.eq_ignore_ascii_case("false") {
        false
    } else {
        return Err(ParseError::BadBoolean {
            value: first_line.trim().to_string(),
        });
    };

    let learnings = learn_sec.map(|l| l.text.clone()).unwrap_or_default();
    if let Some(token) = find_placeholder(&learnings) {
        return Err(ParseError::Placeholder { token });
    }
    if learnings.starts_with('<') && learnings.ends_with('>') && !learnings.contains('\n') {
        return Err(ParseError::Placeholder { token: learnings });
    }
    if !done && learnings.is_empty() {
        return Err(ParseError::EmptyLearnings);
    }

    let (confidence, rationale) = secs
        .iter()
        .find(|s| s.label == CONFIDENCE)
        .map(|s| parse_confidence(&s.text))
        .unwrap_or((None, None));
    Ok(RefinerReply {
        learnings,
        done,
        confidence,
        rationale,
    })
}

fn parse_confidence(text: &str) -> (Option<Confidence>, Option<String>) {
    let text = text.trim();
    let word_end = text
        .find(|c: char| !(c.is_alphabetic() || matches!(c, '<' | '>' | '*' | '`')))
        .unwrap_or(text.len());
    let word = text[..word_end].trim_matches(|c| matches!(c, '<' | '>' | '*' | '`'));
    let level = match word.to_ascii_lowercase().as_str() {
        "high" => Some(Confidence::High),
        "medium" => Some(Confidence::Medium),
        "low" => Some(Confidence::Low),
        _ => None,
    };
    let rest = if level.is_some() { &text[word_end..] } else { text };
    let rest = rest.trim().trim_start_matches(['–', '—', '-', ':', '.', ',']).trim();
    (level, (!rest.is_empty()).then(|| rest.to_string()))
}

const CUE: &str = "Refined Prompt Forecasting Instructions:";

/// Parses synthesized forecasting instructions into a block.
///
/// An echoed cue line is dropped. Bullet (`-`, `*`, `•`, `1.`, `1)`) lines start
/// items and following lines continue them; without bullets, blank-line separated
/// paragraphs are items. Blocks with more than three items are flagged, not rejected.
pub fn parse_instructions_reply(text: &str, source_iteration: usize) -> Result<InstructionBlock, ParseError> {
    if let Some(token) = find_placeholder(text) {
        return Err(ParseError::Placeholder { token });
    }
    let mut lines: Vec<&str> = Vec::new();
    let mut cue_rest: Vec<String> = Vec::new();
    for line in text.lines() {
        match strip_label(line, CUE) {
            Some(rest) => {
                // everything before an echoed cue is preamble
                lines.clear();
                cue_rest.clear();
                if !rest.is_empty() {
                    cue_rest.push(rest);
                }
            }
            None => lines.push(line),
        }
    }
    let body: Vec<String> = cue_rest
        .into_iter()
        .chain(lines.iter().map(|l| l.to_string()))
        .collect();

    let has_bullets = body.iter().any(|l| bullet_content(l).is_some());
    let mut items: Vec<String> = Vec::new();
    if has_bullets {
        for line in &body {
            if let Some(content) = bullet_content(line) {
                items.push(content.to_string());
            } else if let Some(last) = items.last_mut() {
                if !line.trim().is_empty() {
                    last.push(' ');
                    last.push_str(line.trim());
                }
            } else if !line.trim().is_empty() {
                items.push(line.trim().to_string());
            }
        }
    } else {
        let mut cur = String::new();
        for line in &body {
            if line.trim().is_empty() {
                if !cur.is_empty() {
                    items.push(std::mem::take(&mut cur));
                }
            } else {
                if !cur.is_empty() {
                    cur.push(' ');
                }
                cur.push_str(line.trim());
            }
        }
        if !cur.is_empty() {
            items.push(cur);
        }
    }
    let items: Vec<String> = items
        .into_iter()
        .map(|i| unquote(i.trim()).to_string())
        .filter(|i| !i.is_empty())
        .collect();
    if items.is_empty() {
        return Err(ParseError::EmptyBody);
    }
    InstructionBlock::new(items, source_iteration).map_err(|_| ParseError::EmptyBody)
}

fn bullet_content(line: &str) -> Option<&str> {
    let t = line.trim_start();
    for b in ["- ", "* ", "• ", "+ "] {
        if let Some(rest) = t.strip_prefix(b) {
            return Some(rest.trim());
        }
    }
    let digits = t.bytes().take_while(u8::is_ascii_digit).count();
    if digits > 0 && digits < 3 {
        let rest = &t[digits..];
        if let Some(r) = rest.strip_prefix(". ").or_else(|| rest.strip_prefix(") ")) {
            return Some(r.trim());
        }
    }
    None
}

fn unquote(s: &str) -> &str {
    for (open, close) in [('"', '"'), ('\u{201c}', '\u{201d}')] {
        if let Some(inner) = s.strip_prefix(open).and_then(|r| r.strip_suffix(close)) {
            return inner.trim();
        }
    }
    s
}
