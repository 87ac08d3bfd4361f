use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{
    approx_tokens, excerpt, prompt_hash, AgentTag, Backend, BackendError, CompletionReply, CompletionRequest,
    TokenCounts,
};

/// Conditions an entry places on a request. All present fields must hold.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Match {
    /// 1-based request number; orders entries in ordinal mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ordinal: Option<usize>,
    /// Substring the prompt must contain.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<AgentTag>,
    /// Exact prompt text, as written by recordings.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
}

impl Match {
    fn is_empty(&self) -> bool {
        self.pattern.is_none() && self.tag.is_none() && self.prompt.is_none()
    }

    fn accepts(&self, req: &CompletionRequest) -> bool {
        !self.is_empty()
            && self.tag.is_none_or(|t| t == req.tag)
            && self.pattern.as_deref().is_none_or(|p| req.prompt.contains(p))
            && self.prompt.as_deref().is_none_or(|p| p == req.prompt)
    }

    fn specificity(&self) -> u8 {
        4 * self.prompt.is_some() as u8 + 2 * self.pattern.is_some() as u8 + self.tag.is_some() as u8
    }
}

/// One line of a script or recording file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(rename = "match", default)]
    pub matcher: Match,
    pub reply: String,
    /// Prompt hash written by recordings; informational only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hash: Option<String>,
}

impl ScriptEntry {
    pub fn reply(reply: impl Into<String>) -> Self {
        Self {
            matcher: Match::default(),
            reply: reply.into(),
            hash: None,
        }
    }

    pub fn on_tag(tag: AgentTag, reply: impl Into<String>) -> Self {
        Self {
            matcher: Match {
                tag: Some(tag),
                ..Match::default()
            },
            reply: reply.into(),
            hash: None,
        }
    }

    pub fn on_pattern(pattern: impl Into<String>, tag: Option<AgentTag>, reply: impl Into<String>) -> Self {
        Self {
            matcher: Match {
                pattern: Some(pattern.into()),
                tag,
                ..Match::default()
            },
            reply: reply.into(),
            hash: None,
        }
    }

    pub fn for_prompt(tag: AgentTag, prompt: &str, reply: impl Into<String>) -> Self {
        Self {
            matcher: Match {
                prompt: Some(prompt.to_string()),
                tag: Some(tag),
                ..Match::default()
            },
            reply: reply.into(),
            hash: Some(prompt_hash(prompt)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScriptMode {
    /// Entries answer requests in order; `match.ordinal` sorts them.
    #[default]
    Ordinal,
    /// Each request resolves to exactly one entry by its match conditions.
    Pattern,
}

/// Deterministic backend replaying scripted replies.
///
/// In pattern mode the most specific matching entries win (exact prompt, then
/// substring, then tag). Several exact-prompt entries for one prompt are replayed in
/// order, repeating the last; several other entries with differing replies are
/// ambiguous.
#[derive(Debug)]
pub struct ScriptedBackend {
    id: String,
    entries: Vec<ScriptEntry>,
    mode: ScriptMode,
    state: Mutex<State>,
}

#[derive(Debug, Default)]
struct State {
    next: usize,
    per_prompt: HashMap<String, usize>,
}

impl ScriptedBackend {
    pub fn new(mut entries: Vec<ScriptEntry>, mode: ScriptMode) -> Self {
        if mode == ScriptMode::Ordinal {
            entries.sort_by_key(|e| e.matcher.ordinal.unwrap_or(usize::MAX));
        }
        Self {
            id: format!(
                "scripted-{}",
                match mode {
                    ScriptMode::Ordinal => "ordinal",
                    ScriptMode::Pattern => "pattern",
                }
            ),
            entries,
            mode,
            state: Mutex::new(State::default()),
        }
    }

    pub fn ordinal(replies: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self::new(
            replies.into_iter().map(ScriptEntry::reply).collect(),
            ScriptMode::Ordinal,
        )
    }

    pub fn pattern(entries: Vec<ScriptEntry>) -> Self {
        Self::new(entries, ScriptMode::Pattern)
    }

    /// Parses JSON lines; blank lines and lines starting with `//` are skipped.
    pub fn parse_entries(text: &str) -> Result<Vec<ScriptEntry>, BackendError> {
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with("//"))
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| BackendError::Config(format!("script line {}: {e}", i + 1)))
            })
            .collect()
    }

    pub fn from_file(path: impl AsRef<Path>, mode: ScriptMode) -> Result<Self, BackendError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| BackendError::Io(format!("{}: {e}", path.display())))?;
        Ok(Self::new(Self::parse_entries(&text)?, mode))
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn consumed(&self) -> usize {
        self.state.lock().expect("script state poisoned").next
    }

    fn resolve(&self, req: &CompletionRequest) -> Result<String, BackendError> {
        let mut state = self.state.lock().expect("script state poisoned");
        match self.mode {
            ScriptMode::Ordinal => {
                let entry = self
                    .entries
                    .get(state.next)
                    .ok_or(BackendError::ScriptExhausted { consumed: state.next })?;
                state.next += 1;
                Ok(entry.reply.clone())
            }
            ScriptMode::Pattern => {
                let candidates: Vec<&ScriptEntry> = self.entries.iter().filter(|e| e.matcher.accepts(req)).collect();
                let best = candidates
                    .iter()
                    .map(|e| e.matcher.specificity())
                    .max()
                    .ok_or_else(|| BackendError::NoMatch {
                        tag: req.tag,
                        excerpt: excerpt(&req.prompt),
                    })?;
                let top: Vec<&ScriptEntry> = candidates
                    .into_iter()
                    .filter(|e| e.matcher.specificity() == best)
                    .collect();
                state.next += 1;
                if top.len() == 1 || top.iter().all(|e| e.reply == top[0].reply) {
                    return Ok(top[0].reply.clone());
                }
                if top.iter().all(|e| e.matcher.prompt.is_some()) {
                    let key = format!("{}\u{0}{}", req.tag, req.prompt);
                    let n = state.per_prompt.entry(key).or_insert(0);
                    let pick = (*n).min(top.len() - 1);
                    *n += 1;
                    return Ok(top[pick].reply.clone());
                }
                Err(BackendError::Ambiguous {
                    tag: req.tag,
                    count: top.len(),
                    excerpt: excerpt(&req.prompt),
                })
            }
        }
    }
}

impl Backend for ScriptedBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionReply, BackendError> {
        let started = Instant::now();
        let text = self.resolve(request)?;
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
