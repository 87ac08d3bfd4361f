use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use super::{approx_tokens, excerpt, AgentTag, Backend, BackendError, CompletionReply, CompletionRequest, TokenCounts};
use crate::prompt::{format_numbers, parse_numbers};

/// Token the oracle refiner injects into its learnings. Forecaster prompts that carry it
/// get half the noise.
pub const SYNTHETIC_MARKER: &str = "SEASONAL-ANCHOR";

const HISTORY_LABEL: &str = "Historical Data:";
const HORIZON_CUE: &str = "for the next ";
const ITERATION_CUE: &str = "this Iteration ";

/// Offline stand-in for all three agents, for exercising the full pipeline without a
/// model.
///
/// The forecaster extends a least-squares line through the prompt's history and adds
/// Gaussian noise. The noise stream depends only on the seed, the history and the
/// horizon, so two prompts over the same window differ only in noise scale. The
/// refiner asks for the marker on its first call and reports done from the second on;
/// synthesis turns learnings into marker-bearing instructions.
#[derive(Debug, Clone)]
pub struct SyntheticOracle {
    seed: u64,
    noise_std: f64,
    precision: usize,
    id: String,
}

impl SyntheticOracle {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            noise_std: 1.0,
            precision: 4,
            id: "synthetic-oracle".into(),
        }
    }

    pub fn with_noise(mut self, std: f64) -> Self {
        self.noise_std = std;
        self
    }

    pub fn with_precision(mut self, precision: usize) -> Self {
        self.precision = precision;
        self
    }

    fn forecast(&self, prompt: &str) -> Result<String, BackendError> {
        let malformed =
            |what: &str| BackendError::Decode(format!("synthetic forecaster: {what} in {:?}", excerpt(prompt)));
        let mut lines = prompt.lines();
        lines
            .by_ref()
            .find(|l| l.contains(HISTORY_LABEL))
            .ok_or_else(|| malformed("no history label"))?;
        let history_line = lines.next().ok_or_else(|| malformed("no history line"))?;
        let history = parse_numbers(history_line).map_err(|t| malformed(&format!("bad history token {t:?}")))?;
        if history.is_empty() {
            return Err(malformed("empty history"));
        }
        let horizon = prompt
            .find(HORIZON_CUE)
            .and_then(|i| {
                let rest = &prompt[i + HORIZON_CUE.len()..];
                rest.split_whitespace().next()?.parse::<usize>().ok()
            })
            .filter(|&h| h > 0)
            .ok_or_else(|| malformed("no horizon"))?;

        let (slope, intercept) = linear_fit(&history);
        let std = if prompt.contains(SYNTHETIC_MARKER) {
            self.noise_std / 2.0
        } else {
            self.noise_std
        };
        let mut rng = ChaCha8Rng::from_seed(self.noise_seed(history_line, horizon));
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let n = history.len() as f64;
        let values: Vec<f64> = (0..horizon)
            .map(|h| intercept + slope * (n + h as f64) + std * normal.sample(&mut rng))
            .collect();
        Ok(format!(
            "Predicted Values: [{}]\nReasoning: Linear extrapolation of the history.\nCertainty Estimate: 50%\nCertainty Reasoning: Synthetic oracle.",
            format_numbers(&values, self.precision)
        ))
    }

    fn noise_seed(&self, history_line: &str, horizon: usize) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update((horizon as u64).to_le_bytes());
        hasher.update(history_line.trim().as_bytes());
        hasher.finalize().into()
    }

    fn refine(&self, prompt: &str) -> String {
        let iteration = prompt
            .find(ITERATION_CUE)
            .and_then(|i| {
                let rest = &prompt[i + ITERATION_CUE.len()..];
                let digits: String = rest.chars().take_while(char::is_ascii_digit).collect();
                digits.parse::<usize>().ok()
            })
            .unwrap_or(1);
        if iteration >= 2 {
            "Learnings:\nThe instructions are working; no further change is needed.\n\nDone: True\n\nConfidence in output: High - improvement has levelled off.".into()
        } else {
            format!(
                "Learnings:\nAnchor the forecast on the seasonal pattern and apply {SYNTHETIC_MARKER} smoothing.\n\nDone: False\n\nConfidence in output: Medium - first iteration."
            )
        }
    }

    fn synthesize(&self) -> String {
        format!(
            "- Apply {SYNTHETIC_MARKER} smoothing to the recent history before extrapolating.\n- Keep the forecast consistent with the seasonal pattern."
        )
    }
}

/// Least-squares line through `(i, y_i)`; returns `(slope, intercept)`.
fn linear_fit(y: &[f64]) -> (f64, f64) {
    let n = y.len() as f64;
    let mean_x = (n - 1.0) / 2.0;
    let mean_y = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, &v) in y.iter().enumerate() {
        let dx = i as f64 - mean_x;
        sxy += dx * (v - mean_y);
        sxx += dx * dx;
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, mean_y - slope * mean_x)
}

impl Backend for SyntheticOracle {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionReply, BackendError> {
        let started = Instant::now();
        let text = match request.tag {
            AgentTag::Forecaster => self.forecast(&request.prompt)?,
            AgentTag::Refiner => self.refine(&request.prompt),
            AgentTag::Synthesis => self.synthesize(),
        };
        Ok(CompletionReply {
            token_counts: Some(TokenCounts {
                input: approx_tokens(&request.prompt),
                output: approx_tokens(&text),
            }),
            text,
            latency_ms: started.elapsed().as_millis() as u64,
            backend_id: self.id.clone(),
        })
    }
}
