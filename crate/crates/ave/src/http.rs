//! Chat-completions client for OpenAI-compatible gateways.

use std::time::Duration;

use ave_core::backend::{CallError, ModelBackend, ModelRequest, ModelResponse, Part};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

/// Connection settings for one provider-backed model, as written in the run
/// config under `[http.<name>]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpSettings {
    pub base_url: String,
    pub model: String,
    /// Environment variable holding the bearer token.
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    /// Prefix for media references that are not already URLs.
    #[serde(default)]
    pub media_base_url: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_key_env() -> String {
    "AVE_API_KEY".into()
}

fn default_timeout() -> u64 {
    600
}

pub struct HttpBackend {
    name: String,
    settings: HttpSettings,
    api_key: String,
    agent: ureq::Agent,
}

impl HttpBackend {
    /// Reads the API key from the configured environment variable.
    pub fn new(name: impl Into<String>, settings: HttpSettings) -> anyhow::Result<Self> {
        let name = name.into();
        let api_key = std::env::var(&settings.api_key_env)
            .map_err(|_| anyhow::anyhow!("backend `{name}` needs the API key in ${}", settings.api_key_env))?;
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(settings.timeout_secs)))
            .build()
            .new_agent();
        Ok(HttpBackend { name, settings, api_key, agent })
    }

    fn media_url(&self, reference: &str) -> String {
        match &self.settings.media_base_url {
            Some(base) if !reference.contains("://") => {
                format!("{}/{}", base.trim_end_matches('/'), reference.trim_start_matches('/'))
            }
            _ => reference.to_string(),
        }
    }

    pub fn payload(&self, request: &ModelRequest) -> Value {
        let content: Vec<Value> = request
            .user_parts
            .iter()
            .map(|part| match part {
                Part::Text(text) => json!({"type": "text", "text": text}),
                Part::Image(r) => json!({"type": "image_url", "image_url": {"url": self.media_url(r)}}),
                Part::Video(r) => json!({"type": "video_url", "video_url": {"url": self.media_url(r)}}),
                Part::Audio(r) => json!({"type": "audio_url", "audio_url": {"url": self.media_url(r)}}),
            })
            .collect();
        let mut body = json!({
            "model": self.settings.model,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
            "messages": [
                {"role": "system", "content": request.system_prompt},
                {"role": "user", "content": content},
            ],
        });
        if let Some(seed) = request.seed {
            body["seed"] = json!(seed);
        }
        body
    }
}

#[derive(Deserialize)]
struct Completion {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    content: Option<Value>,
}

#[derive(Deserialize)]
struct Usage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

/// Extracts the assistant text; some gateways return content as a list of
/// typed parts.
fn content_text(content: &Value) -> Option<String> {
    match content {
        Value::String(s) => Some(s.clone()),
        Value::Array(parts) => {
            let texts: Vec<&str> = parts.iter().filter_map(|p| p.get("text").and_then(Value::as_str)).collect();
            (!texts.is_empty()).then(|| texts.concat())
        }
        _ => None,
    }
}

pub fn parse_completion(body: &str) -> Result<ModelResponse, CallError> {
    let parsed: Completion =
        serde_json::from_str(body).map_err(|e| CallError::Protocol(format!("malformed completion: {e}")))?;
    let choice = parsed.choices.first().ok_or_else(|| CallError::Protocol("completion has no choices".into()))?;
    let text = choice
        .message
        .content
        .as_ref()
        .and_then(content_text)
        .ok_or_else(|| CallError::Protocol("completion has no text content".into()))?;
    let usage = parsed.usage.unwrap_or(Usage { prompt_tokens: 0, completion_tokens: 0 });
    Ok(ModelResponse { text, prompt_tokens: usage.prompt_tokens, completion_tokens: usage.completion_tokens })
}

/// 408, 429 and 5xx are worth retrying; other failures are final.
fn retryable(status: u16) -> bool {
    status == 408 || status == 429 || status >= 500
}

impl ModelBackend for HttpBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn call(&self, request: &ModelRequest) -> Result<ModelResponse, CallError> {
        let url = format!("{}/chat/completions", self.settings.base_url.trim_end_matches('/'));
        let mut response = self
            .agent
            .post(&url)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(self.payload(request))
            .map_err(|e| match e {
                ureq::Error::Io(_)
                | ureq::Error::Timeout(_)
                | ureq::Error::ConnectionFailed
                | ureq::Error::HostNotFound => CallError::Transport(e.to_string()),
                other => CallError::Protocol(other.to_string()),
            })?;
        let status = response.status().as_u16();
        let body = response.body_mut().read_to_string().map_err(|e| CallError::Transport(e.to_string()))?;
        if retryable(status) {
            return Err(CallError::Transport(format!("HTTP {status}: {}", snippet(&body))));
        }
        if !(200..300).contains(&status) {
            return Err(CallError::Protocol(format!("HTTP {status}: {}", snippet(&body))));
        }
        parse_completion(&body)
    }

    fn before_retry(&self, _attempt: u32, delay_ms: u64) {
        std::thread::sleep(Duration::from_millis(delay_ms));
    }
}

fn snippet(body: &str) -> &str {
    let end = body.char_indices().nth(300).map_or(body.len(), |(i, _)| i);
    &body[..end]
}
