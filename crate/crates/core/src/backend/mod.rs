//! Completion backends.
//!
//! The orchestrator only sees [`Backend`]. Implementations: [`ScriptedBackend`] replays
//! JSON-lines fixtures, [`HttpBackend`] speaks the chat-completion wire format,
//! [`RecordingBackend`] tees any backend into a replayable file and
//! [`SyntheticOracle`] is an offline forecaster/refiner used to validate the harness.

mod http;
mod record;
mod scripted;
mod synthetic;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use http::{HttpBackend, HttpConfig, API_KEY_ENV};
pub use record::{RecordSink, RecordingBackend};
pub use scripted::{Match, ScriptEntry, ScriptMode, ScriptedBackend};
pub use synthetic::{SyntheticOracle, SYNTHETIC_MARKER};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentTag {
    Forecaster,
    Refiner,
    Synthesis,
}

impl std::fmt::Display for AgentTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AgentTag::Forecaster => "forecaster",
            AgentTag::Refiner => "refiner",
            AgentTag::Synthesis => "synthesis",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub tag: AgentTag,
    pub seed: Option<u64>,
}

impl CompletionRequest {
    pub fn new(tag: AgentTag, prompt: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            temperature: 0.0,
            max_tokens: 4096,
            tag,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenCounts {
    pub input: u64,
    pub output: u64,
}

impl TokenCounts {
    pub fn total(&self) -> u64 {
        self.input + self.output
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionReply {
    pub text: String,
    pub latency_ms: u64,
    pub backend_id: String,
    pub token_counts: Option<TokenCounts>,
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("http status {status}: {body_excerpt}")]
    Status { status: u16, body_excerpt: String },
    #[error("script exhausted after {consumed} repl(ies)")]
    ScriptExhausted { consumed: usize },
    #[error("no script entry matches {tag} request: {excerpt:?}")]
    NoMatch { tag: AgentTag, excerpt: String },
    #[error("{count} script entries with different replies match {tag} request: {excerpt:?}")]
    Ambiguous {
        tag: AgentTag,
        count: usize,
        excerpt: String,
    },
    #[error("malformed response: {0}")]
    Decode(String),
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(String),
}

/// A source of completions. Implementations must be safe for concurrent requests and
/// must not alter the request prompt.
pub trait Backend: Send + Sync {
    fn id(&self) -> &str;
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionReply, BackendError>;
}

impl<B: Backend + ?Sized> Backend for Arc<B> {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionReply, BackendError> {
        (**self).complete(request)
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionReply, BackendError> {
        (**self).complete(request)
    }
}

/// Backend per agent role. Synthesis requests go to the refiner backend.
#[derive(Clone)]
pub struct Backends {
    pub forecaster: Arc<dyn Backend>,
    pub refiner: Arc<dyn Backend>,
}

impl Backends {
    pub fn single(backend: Arc<dyn Backend>) -> Self {
        Self {
            forecaster: Arc::clone(&backend),
            refiner: backend,
        }
    }

    pub fn for_tag(&self, tag: AgentTag) -> &dyn Backend {
        match tag {
            AgentTag::Forecaster => self.forecaster.as_ref(),
            AgentTag::Refiner | AgentTag::Synthesis => self.refiner.as_ref(),
        }
    }
}

impl std::fmt::Debug for Backends {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Backends")
            .field("forecaster", &self.forecaster.id())
            .field("refiner", &self.refiner.id())
            .finish()
    }
}

/// Hex SHA-256 of a prompt.
pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

/// Whitespace word count, used as a token estimate by offline backends.
pub(crate) fn approx_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

pub(crate) fn excerpt(text: &str) -> String {
    let head: String = text.chars().take(80).collect();
    if head.len() < text.len() {
        format!("{head}...")
    } else {
        head
    }
}
