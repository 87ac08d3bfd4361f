//! Analog retrieval over a sliding-window historical database.
//!
//! Windows are enumerated with stride 1 over the target column. Similarity is the
//! sample Pearson correlation between the query context and each window's context;
//! windows with zero variance have no defined correlation and are never returned.
//! Equal scores are ordered by earlier start index.

use std::cmp::Ordering;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::format_numbers;
use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RetrievalError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("correlation needs at least 2 points, got {0}")]
    TooShort(usize),
    #[error("invalid database shape: context length {context_len} (needs >= 2), horizon {horizon} (needs >= 1)")]
    InvalidShape { context_len: usize, horizon: usize },
    #[error("query context has {got} values, database windows have {expected}")]
    ContextLength { expected: usize, got: usize },
}

/// Sample Pearson correlation. `Ok(None)` when either vector has zero variance.
pub fn pearson<T: Scalar>(a: &[T], b: &[T]) -> Result<Option<T>, RetrievalError> {
    if a.len() != b.len() {
        return Err(RetrievalError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(RetrievalError::TooShort(a.len()));
    }
    Ok(Centered::new(a).and_then(|ca| ca.correlate(b)))
}

/// A vector with its mean removed and its centered sum of squares cached, so one
/// query can be scored against many candidates.
struct Centered<T> {
    dev: Vec<T>,
    ss: T,
}

impl<T: Scalar> Centered<T> {
    fn new(v: &[T]) -> Option<Self> {
        if is_constant(v) {
            return None;
        }
        let mean = v.iter().copied().sum::<T>() / T::from_usize_lossy(v.len());
        let dev: Vec<T> = v.iter().map(|&x| x - mean).collect();
        let ss = dev.iter().map(|&d| d * d).sum::<T>();
        (ss > T::zero()).then_some(Self { dev, ss })
    }

    fn correlate(&self, other: &[T]) -> Option<T> {
        if is_constant(other) {
            return None;
        }
        let mean = other.iter().copied().sum::<T>() / T::from_usize_lossy(other.len());
        let mut cross = T::zero();
        let mut sq = T::zero();
        for (&d, &x) in self.dev.iter().zip(other) {
            let e = x - mean;
            cross = cross + d * e;
            sq = sq + e * e;
        }
        if sq <= T::zero() {
            return None;
        }
        // sqrt of the product keeps identical and power-of-two-scaled inputs at exactly
        // +-1; the split form only guards against overflow.
        let prod = self.ss * sq;
        let denom = if prod.is_finite() {
            prod.sqrt()
        } else {
            self.ss.sqrt() * sq.sqrt()
        };
        let r = cross / denom;
        r.is_finite().then(|| r.max(-T::one()).min(T::one()))
    }
}

fn is_constant<T: Scalar>(v: &[T]) -> bool {
    v.iter().all(|&x| x == v[0])
}

/// Sliding-window database over a historical region of a series.
///
/// Every start `s` with `s + L + H <= boundary` is a window: context
/// `values[s .. s+L]`, outcome `values[s+L .. s+L+H]`.
#[derive(Debug, Clone)]
pub struct HistDb<T = f64> {
    values: Arc<[T]>,
    boundary: usize,
    context_len: usize,
    horizon: usize,
}

impl<T: Scalar> HistDb<T> {
    /// Database over the whole of `history`. Histories shorter than `L + H` give an
    /// empty database.
    pub fn build(history: &[T], context_len: usize, horizon: usize) -> Result<Self, RetrievalError> {
        if context_len < 2 || horizon == 0 {
            return Err(RetrievalError::InvalidShape { context_len, horizon });
        }
        Ok(Self {
            values: history.into(),
            boundary: history.len(),
            context_len,
            horizon,
        })
    }

    /// Same database restricted to windows ending at or before `boundary`.
    /// The boundary never grows past the current one.
    pub fn restricted(&self, boundary: usize) -> Self {
        Self {
            values: Arc::clone(&self.values),
            boundary: boundary.min(self.boundary),
            context_len: self.context_len,
            horizon: self.horizon,
        }
    }

    /// Database for a query whose truth starts at `origin`: only windows that end
    /// before the query context begins (`origin - L`).
    pub fn for_origin(&self, origin: usize) -> Self {
        self.restricted(origin.saturating_sub(self.context_len))
    }

    pub fn source_len(&self) -> usize {
        self.values.len()
    }

    pub fn boundary(&self) -> usize {
        self.boundary
    }

    pub fn context_len(&self) -> usize {
        self.context_len
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn window_count(&self) -> usize {
        (self.boundary + 1).saturating_sub(self.context_len + self.horizon)
    }

    /// Chronological `(start, context, outcome)` triples.
    pub fn windows(&self) -> impl Iterator<Item = (usize, &[T], &[T])> + '_ {
        let (l, h) = (self.context_len, self.horizon);
        (0..self.window_count()).map(move |s| (s, &self.values[s..s + l], &self.values[s + l..s + l + h]))
    }

    /// Top-`m` windows by Pearson correlation with `ctx`, best first.
    pub fn retrieve(&self, ctx: &[T], m: usize) -> Result<Vec<AnalogSegment<T>>, RetrievalError> {
        if ctx.len() != self.context_len {
            return Err(RetrievalError::ContextLength {
                expected: self.context_len,
                got: ctx.len(),
            });
        }
        let Some(query) = Centered::new(ctx) else {
            tracing::debug!("constant query context; no analogs retrieved");
            return Ok(Vec::new());
        };
        if m == 0 {
            return Ok(Vec::new());
        }
        let mut scored: Vec<(usize, T)> = self
            .windows()
            .filter_map(|(s, c, _)| query.correlate(c).map(|r| (s, r)))
            .collect();
        scored.sort_by(|a, b| rank_order(a, b));
        scored.truncate(m);
        Ok(scored
            .into_iter()
            .map(|(start, score)| {
                let l = self.context_len;
                AnalogSegment {
                    start,
                    context: self.values[start..start + l].to_vec(),
                    outcome: self.values[start + l..start + l + self.horizon].to_vec(),
                    score,
                }
            })
            .collect())
    }
}

/// Descending score, then ascending start.
fn rank_order<T: Scalar>(a: &(usize, T), b: &(usize, T)) -> Ordering {
    b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0))
}

/// A retrieved historical window and what followed it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalogSegment<T = f64> {
    pub start: usize,
    pub context: Vec<T>,
    pub outcome: Vec<T>,
    pub score: T,
}

/// Analogs rendered for the forecaster prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FormattedAnalogs {
    pub text: String,
    pub no_analogs: bool,
}

/// One block per segment: a header with rank and score, then `context:` and
/// `outcome:` lines of comma-separated values.
pub fn format_analogs<T: Scalar>(segments: &[AnalogSegment<T>], precision: usize) -> FormattedAnalogs {
    let blocks: Vec<String> = segments
        .iter()
        .enumerate()
        .map(|(i, seg)| {
            format!(
                "Segment {} (start index {}, correlation {}):\ncontext: {}\noutcome: {}",
                i + 1,
                seg.start,
                format_numbers(&[seg.score], 4),
                format_numbers(&seg.context, precision),
                format_numbers(&seg.outcome, precision),
            )
        })
        .collect();
    FormattedAnalogs {
        no_analogs: blocks.is_empty(),
        text: blocks.join("\n\n"),
    }
}
