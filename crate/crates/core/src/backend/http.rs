use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{excerpt, Backend, BackendError, CompletionReply, CompletionRequest, TokenCounts};

/// Environment variable holding the bearer credential.
pub const API_KEY_ENV: &str = "FLAIRR_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    /// Full URL of the chat-completions endpoint.
    pub endpoint_url: String,
    pub model_name: String,
    pub timeout_s: u64,
    /// Retries after the first attempt.
    pub max_retries: u32,
    /// First backoff delay; doubles on each retry.
    pub backoff_base_ms: u64,
    pub api_key_env: String,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            endpoint_url: "http://localhost:8000/v1/chat/completions".into(),
            model_name: "default".into(),
            timeout_s: 120,
            max_retries: 3,
            backoff_base_ms: 1000,
            api_key_env: API_KEY_ENV.into(),
        }
    }
}

/// Chat-completion client. Transport errors, 429 and 5xx are retried with
/// exponential backoff; other statuses fail immediately.
#[derive(Debug)]
pub struct HttpBackend {
    config: HttpConfig,
    client: reqwest::blocking::Client,
    api_key: Option<String>,
    id: String,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, BackendError> {
        if config.endpoint_url.trim().is_empty() {
            return Err(BackendError::Config("endpoint_url is empty".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_s.max(1)))
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        let api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        Ok(Self {
            id: format!("http:{}", config.model_name),
            config,
            client,
            api_key,
        })
    }

    pub fn config(&self) -> &HttpConfig {
        &self.config
    }

    fn body(&self, request: &CompletionRequest) -> Value {
        let mut body = json!({
            "model": self.config.model_name,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        if let Some(seed) = request.seed {
            body["seed"] = json!(seed);
        }
        body
    }

    fn attempt(&self, body: &Value) -> Result<Value, Attempt> {
        let mut builder = self.client.post(&self.config.endpoint_url).json(body);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder.send().map_err(|e| {
            Attempt::Retry(BackendError::Transport {
                attempts: 0,
                message: e.to_string(),
            })
        })?;
        let status = response.status();
        let text = response.text().map_err(|e| {
            Attempt::Retry(BackendError::Transport {
                attempts: 0,
                message: e.to_string(),
            })
        })?;
        if !status.is_success() {
            let err = BackendError::Status {
                status: status.as_u16(),
                body_excerpt: excerpt(&text),
            };
            return Err(if status.as_u16() == 429 || status.is_server_error() {
                Attempt::Retry(err)
            } else {
                Attempt::Fatal(err)
            });
        }
        serde_json::from_str(&text)
            .map_err(|e| Attempt::Fatal(BackendError::Decode(format!("{e}: {}", excerpt(&text)))))
    }
}

enum Attempt {
    Retry(BackendError),
    Fatal(BackendError),
}

fn decode(value: &Value) -> Result<(String, Option<TokenCounts>), BackendError> {
    let text = value
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| BackendError::Decode("missing choices[0].message.content".into()))?;
    let usage = value.get("usage").and_then(|u| {
        Some(TokenCounts {
            input: u.get("prompt_tokens")?.as_u64()?,
            output: u.get("completion_tokens")?.as_u64()?,
        })
    });
    Ok((text.to_string(), usage))
}

impl Backend for HttpBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionReply, BackendError> {
        let started = Instant::now();
        let body = self.body(request);
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(&body) {
                Ok(value) => {
                    let (text, token_counts) = decode(&value)?;
                    return Ok(CompletionReply {
                        text,
                        latency_ms: started.elapsed().as_millis() as u64,
                        backend_id: self.id.clone(),
                        token_counts,
                    });
                }
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(e)) => {
                    if attempts > self.config.max_retries {
                        return Err(match e {
                            BackendError::Transport { message, .. } => BackendError::Transport { attempts, message },
                            other => other,
                        });
                    }
                    let delay = self.config.backoff_base_ms.saturating_mul(1 << (attempts - 1).min(16));
                    tracing::warn!(attempt = attempts, delay_ms = delay, error = %e, "retrying completion");
                    std::thread::sleep(Duration::from_millis(delay));
                }
            }
        }
    }
}
