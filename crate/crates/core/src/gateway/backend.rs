use std::collections::{BTreeMap, VecDeque};
use std::sync::Mutex;
use std::time::Duration;

use super::{GatewayError, PromptRequest, PurposeTag};

/// Anything that can turn a prompt into raw text.
pub trait CompletionBackend: Send + Sync {
    fn complete(&self, request: &PromptRequest) -> Result<String, GatewayError>;
}

#[derive(Debug, Clone)]
pub struct HttpBackendConfig {
    /// Base URL of an OpenAI-compatible API, e.g. `https://host/v1`.
    pub endpoint: String,
    pub api_key: Option<String>,
    pub model: String,
    pub timeout: Duration,
}

impl HttpBackendConfig {
    pub const ENDPOINT_VAR: &'static str = "TOOLSMITH_LLM_ENDPOINT";
    pub const KEY_VAR: &'static str = "TOOLSMITH_LLM_API_KEY";
    pub const MODEL_VAR: &'static str = "TOOLSMITH_LLM_MODEL";

    pub fn from_env() -> Result<Self, GatewayError> {
        let endpoint = std::env::var(Self::ENDPOINT_VAR).map_err(|_| {
            GatewayError::BackendUnreachable(format!("{} is not set", Self::ENDPOINT_VAR))
        })?;
        Ok(Self {
            endpoint,
            api_key: std::env::var(Self::KEY_VAR).ok(),
            model: std::env::var(Self::MODEL_VAR).unwrap_or_else(|_| "default".into()),
            timeout: Duration::from_secs(120),
        })
    }
}

/// Chat-completions client for live mode.
pub struct HttpBackend {
    config: HttpBackendConfig,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| GatewayError::BackendUnreachable(e.to_string()))?;
        Ok(Self { config, client })
    }
}

impl CompletionBackend for HttpBackend {
    fn complete(&self, request: &PromptRequest) -> Result<String, GatewayError> {
        let url = format!("{}/chat/completions", self.config.endpoint.trim_end_matches('/'));
        let body = serde_json::json!({
            "model": self.config.model,
            "temperature": request.temperature,
            "messages": [
                {"role": "system", "content": request.system_text},
                {"role": "user", "content": request.user_text},
            ],
        });
        let mut call = self.client.post(url).json(&body);
        if let Some(key) = &self.config.api_key {
            call = call.bearer_auth(key);
        }
        let response = call
            .send()
            .map_err(|e| GatewayError::BackendUnreachable(e.to_string()))?;
        let status = response.status();
        if !status.is_success() {
            return Err(GatewayError::BackendUnreachable(format!("HTTP {status}")));
        }
        let payload: serde_json::Value = response
            .json()
            .map_err(|e| GatewayError::BackendUnreachable(format!("bad response body: {e}")))?;
        payload["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| GatewayError::BackendUnreachable("response has no message content".into()))
    }
}

type ReplyFn = dyn Fn(&PromptRequest) -> Result<String, String> + Send + Sync;

/// One scripted answer.
pub enum Reply {
    Text(String),
    Computed(Box<ReplyFn>),
}

impl Reply {
    pub fn text(text: impl Into<String>) -> Self {
        Reply::Text(text.into())
    }

    pub fn json(value: &serde_json::Value) -> Self {
        Reply::Text(serde_json::to_string_pretty(value).expect("value serializes"))
    }

    pub fn computed(
        f: impl Fn(&PromptRequest) -> Result<String, String> + Send + Sync + 'static,
    ) -> Self {
        Reply::Computed(Box::new(f))
    }
}

/// A fake model: answers each purpose from its own queue, in order.
#[derive(Default)]
pub struct ScriptedBackend {
    queues: Mutex<BTreeMap<PurposeTag, VecDeque<Reply>>>,
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&self, purpose: PurposeTag, reply: Reply) {
        self.queues
            .lock()
            .expect("script lock")
            .entry(purpose)
            .or_default()
            .push_back(reply);
    }

    pub fn remaining(&self, purpose: PurposeTag) -> usize {
        self.queues
            .lock()
            .expect("script lock")
            .get(&purpose)
            .map_or(0, VecDeque::len)
    }
}

impl CompletionBackend for ScriptedBackend {
    fn complete(&self, request: &PromptRequest) -> Result<String, GatewayError> {
        let reply = self
            .queues
            .lock()
            .expect("script lock")
            .get_mut(&request.purpose)
            .and_then(VecDeque::pop_front)
            .ok_or_else(|| {
                GatewayError::BackendUnreachable(format!("script exhausted for {}", request.purpose))
            })?;
        match reply {
            Reply::Text(text) => Ok(text),
            Reply::Computed(f) => f(request).map_err(GatewayError::BackendUnreachable),
        }
    }
}
