//! Chat-completions client and the language-model predictor.
//!
//! Request body: `{"model", "messages": [{"role": "user", "content"}],
//! "temperature", "top_p"}`. The reply text is `choices[0].message.content`.

use std::thread;
use std::time::Duration;

use fwm_core::error::Error as CoreError;
use fwm_core::predictor::{assemble_prompt, parse_prediction, Prediction, PredictionRequest, Predictor, SamplingParams};
use fwm_core::segment::LatentState;
use serde_json::{json, Value};

use crate::config::LlmConfig;

pub const ENV_ENDPOINT: &str = "FWM_LLM_ENDPOINT";
pub const ENV_API_KEY: &str = "FWM_LLM_API_KEY";
pub const ENV_MODEL: &str = "FWM_LLM_MODEL";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LlmError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("endpoint returned HTTP {code}: {body}")]
    Status { code: u16, body: String },
    #[error("endpoint rejected credentials (HTTP {code})")]
    Auth { code: u16 },
    #[error("no usable prediction after {attempts} attempts; last reply: {last_reply:?}")]
    RetriesExhausted { attempts: usize, last_reply: String, last_error: String },
    #[error("malformed response: {0}")]
    Protocol(String),
    #[error("missing configuration: {0}")]
    Config(String),
}

impl LlmError {
    pub fn kind(&self) -> &'static str {
        match self {
            LlmError::Transport(_) => "llm_transport",
            LlmError::Status { .. } => "llm_status",
            LlmError::Auth { .. } => "llm_auth",
            LlmError::RetriesExhausted { .. } => "llm_retries_exhausted",
            LlmError::Protocol(_) => "llm_protocol",
            LlmError::Config(_) => "llm_config",
        }
    }

    fn retryable(&self) -> bool {
        match self {
            LlmError::Transport(_) => true,
            LlmError::Status { code, .. } => *code == 429 || *code >= 500,
            _ => false,
        }
    }
}

impl From<LlmError> for CoreError {
    fn from(e: LlmError) -> Self {
        CoreError::Backend { kind: e.kind().into(), detail: e.to_string() }
    }
}

/// Resolved endpoint settings.
#[derive(Debug, Clone, PartialEq)]
pub struct Endpoint {
    pub url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub max_retries: usize,
    pub timeout: Duration,
    pub backoff: Duration,
}

impl Endpoint {
    /// Config values win; missing ones come from the environment.
    pub fn resolve(cfg: &LlmConfig) -> Result<Self, LlmError> {
        let env = |name: &str| std::env::var(name).ok().filter(|v| !v.is_empty());
        let url = cfg
            .endpoint
            .clone()
            .or_else(|| env(ENV_ENDPOINT))
            .ok_or_else(|| LlmError::Config(format!("set predictor.llm.endpoint or {ENV_ENDPOINT}")))?;
        let model = cfg
            .model
            .clone()
            .or_else(|| env(ENV_MODEL))
            .ok_or_else(|| LlmError::Config(format!("set predictor.llm.model or {ENV_MODEL}")))?;
        Ok(Self {
            url,
            model,
            api_key: env(ENV_API_KEY),
            max_retries: cfg.max_retries.max(1),
            timeout: Duration::from_secs(cfg.timeout_secs),
            backoff: Duration::from_millis(cfg.backoff_ms),
        })
    }
}

/// One reply from the endpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    /// HTTP calls made, including retried transport or server failures.
    pub calls: usize,
}

pub struct LlmClient {
    endpoint: Endpoint,
    http: reqwest::blocking::Client,
}

impl LlmClient {
    pub fn new(endpoint: Endpoint) -> Result<Self, LlmError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(endpoint.timeout)
            .build()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        Ok(Self { endpoint, http })
    }

    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }

    pub fn request_body(&self, prompt: &str, sampling: &SamplingParams) -> Value {
        json!({
            "model": self.endpoint.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": sampling.temperature,
            "top_p": sampling.top_p,
        })
    }

    fn call_once(&self, body: &Value) -> Result<String, LlmError> {
        let mut req = self.http.post(&self.endpoint.url).json(body);
        if let Some(key) = &self.endpoint.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| LlmError::Transport(e.to_string()))?;
        let code = resp.status().as_u16();
        if code == 401 || code == 403 {
            return Err(LlmError::Auth { code });
        }
        let text = resp.text().map_err(|e| LlmError::Transport(e.to_string()))?;
        if !(200..300).contains(&code) {
            return Err(LlmError::Status { code, body: text.chars().take(200).collect() });
        }
        let v: Value = serde_json::from_str(&text).map_err(|e| LlmError::Protocol(format!("body is not JSON: {e}")))?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(String::from)
            .ok_or_else(|| LlmError::Protocol("missing choices[0].message.content".into()))
    }

    fn pause(&self, retry: usize) {
        let delay = self.endpoint.backoff.saturating_mul(1 << retry.min(10));
        if !delay.is_zero() {
            thread::sleep(delay);
        }
    }

    /// Sends `prompt`, retrying transport failures, 429 and 5xx with
    /// exponential backoff. The last such failure is returned once the
    /// retry budget is spent.
    pub fn complete(&self, prompt: &str, sampling: &SamplingParams) -> Result<Completion, LlmError> {
        let body = self.request_body(prompt, sampling);
        let mut calls = 0;
        loop {
            calls += 1;
            match self.call_once(&body) {
                Ok(text) => return Ok(Completion { text, calls }),
                Err(e) if e.retryable() && calls < self.endpoint.max_retries => {
                    log::warn!("LLM call {calls} failed ({e}); retrying");
                    self.pause(calls - 1);
                }
                Err(e) => return Err(e),
            }
        }
    }

    /// Completes and parses until a well-formed list arrives, up to
    /// `max_retries` parse attempts with the same prompt.
    pub fn predict(&self, req: &PredictionRequest) -> Result<Prediction, LlmError> {
        let (prompt, _) = assemble_prompt(req).map_err(|e| LlmError::Config(e.to_string()))?;
        let labels = req.labels();
        let mut last_reply = String::new();
        let mut last_error = String::new();
        for attempt in 1..=self.endpoint.max_retries {
            let reply = self.complete(&prompt, &req.sampling)?;
            match parse_prediction(&reply.text, 2 * labels.len(), &labels) {
                Ok(latent) => {
                    return Ok(Prediction { latent, raw_text: reply.text, attempts: attempt, observation: None, fallback: false });
                }
                Err(e) => {
                    log::debug!("unparseable reply on attempt {attempt}: {e}");
                    last_reply = reply.text;
                    last_error = e.to_string();
                }
            }
        }
        Err(LlmError::RetriesExhausted { attempts: self.endpoint.max_retries, last_reply, last_error })
    }
}

/// [`Predictor`] backed by a chat-completions endpoint.
pub struct LlmPredictor {
    client: LlmClient,
}

impl LlmPredictor {
    pub fn new(client: LlmClient) -> Self {
        Self { client }
    }

    pub fn from_config(cfg: &LlmConfig) -> Result<Self, LlmError> {
        Ok(Self::new(LlmClient::new(Endpoint::resolve(cfg)?)?))
    }
}

impl Predictor for LlmPredictor {
    fn id(&self) -> &str {
        "llm"
    }

    fn predict(&mut self, req: &PredictionRequest, _step: usize) -> fwm_core::error::Result<Prediction> {
        req.validate()?;
        if req.labels().is_empty() {
            let t = req.last()?.time_index + 1;
            return Ok(Prediction::deterministic(LatentState::new(t, Vec::new())));
        }
        Ok(self.client.predict(req)?)
    }
}
