use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::AgentTag;
use crate::prompt::{FORECASTER_BASE, MAX_PRECISION};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("invalid session config: {0}")]
pub struct ConfigError(pub String);

/// Sampling temperature per agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Temperatures {
    pub forecaster: f64,
    pub refiner: f64,
    pub synthesis: f64,
}

impl Default for Temperatures {
    fn default() -> Self {
        Self {
            forecaster: 0.2,
            refiner: 0.7,
            synthesis: 0.7,
        }
    }
}

impl Temperatures {
    pub fn for_tag(&self, tag: AgentTag) -> f64 {
        match tag {
            AgentTag::Forecaster => self.forecaster,
            AgentTag::Refiner => self.refiner,
            AgentTag::Synthesis => self.synthesis,
        }
    }
}

/// Parameters of one refinement session. Missing JSON keys take the defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    /// Context length `L`.
    pub context_len: usize,
    /// Forecast horizon `H`.
    pub horizon: usize,
    /// Analogs retrieved per query.
    pub m: usize,
    pub max_iter: usize,
    /// Stop threshold shown to the refiner, in percent.
    pub stop_threshold_pct: f64,
    /// Validation windows evaluated per iteration.
    pub sample_size: usize,
    /// Decimal places of numbers in prompts.
    pub precision: usize,
    /// Re-asks after an unparseable reply.
    pub parse_retries: usize,
    pub retrieval_enabled: bool,
    pub refinement_enabled: bool,
    pub seed: u64,
    pub temperatures: Temperatures,
    pub max_tokens: u32,
    /// Characters of each sample prompt quoted to the refiner.
    pub refiner_prompt_budget: usize,
    pub template_id: String,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            context_len: 96,
            horizon: 24,
            m: 2,
            max_iter: 5,
            stop_threshold_pct: 5.0,
            sample_size: 3,
            precision: 4,
            parse_retries: 3,
            retrieval_enabled: true,
            refinement_enabled: true,
            seed: 0,
            temperatures: Temperatures::default(),
            max_tokens: 4096,
            refiner_prompt_budget: 12_000,
            template_id: FORECASTER_BASE.to_string(),
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |m: &str| Err(ConfigError(m.to_string()));
        if self.context_len < 2 {
            return fail("context_len must be at least 2");
        }
        if self.horizon == 0 {
            return fail("horizon must be at least 1");
        }
        if self.max_iter == 0 {
            return fail("max_iter must be at least 1");
        }
        if !(self.stop_threshold_pct > 0.0 && self.stop_threshold_pct.is_finite()) {
            return fail("stop_threshold_pct must be positive");
        }
        if self.sample_size == 0 {
            return fail("sample_size must be at least 1");
        }
        if self.precision > MAX_PRECISION {
            return Err(ConfigError(format!("precision must be at most {MAX_PRECISION}")));
        }
        if self.retrieval_enabled && self.m == 0 {
            return fail("m must be at least 1 when retrieval is enabled");
        }
        for (name, t) in [
            ("forecaster", self.temperatures.forecaster),
            ("refiner", self.temperatures.refiner),
            ("synthesis", self.temperatures.synthesis),
        ] {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(ConfigError(format!("{name} temperature must be non-negative")));
            }
        }
        if self.max_tokens == 0 {
            return fail("max_tokens must be at least 1");
        }
        Ok(())
    }

    /// Analogs actually requested: zero when retrieval is off.
    pub fn effective_m(&self) -> usize {
        if self.retrieval_enabled {
            self.m
        } else {
            0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_when_keys_omitted() {
        let cfg: SessionConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg.max_iter, 5);
        assert_eq!(cfg.stop_threshold_pct, 5.0);
        assert_eq!(cfg.sample_size, 3);
        assert_eq!(cfg.m, 2);
        assert_eq!(cfg.parse_retries, 3);
        assert_eq!(cfg.precision, 4);
        cfg.validate().unwrap();
    }

    #[test]
    fn rejects_bad_values() {
        for json in [
            r#"{"max_iter": 0}"#,
            r#"{"stop_threshold_pct": 0}"#,
            r#"{"sample_size": 0}"#,
            r#"{"m": 0}"#,
            r#"{"precision": 11}"#,
            r#"{"horizon": 0}"#,
        ] {
            let cfg: SessionConfig = serde_json::from_str(json).unwrap();
            assert!(cfg.validate().is_err(), "{json}");
        }
        let cfg: SessionConfig = serde_json::from_str(r#"{"m": 0, "retrieval_enabled": false}"#).unwrap();
        cfg.validate().unwrap();
        assert!(serde_json::from_str::<SessionConfig>(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn effective_m_is_zero_without_retrieval() {
        let cfg = SessionConfig {
            retrieval_enabled: false,
            ..SessionConfig::default()
        };
        assert_eq!(cfg.effective_m(), 0);
    }
}
