use std::time::Duration;

use serde_json::{json, Value};

use super::{BackendFailure, GenerationRequest, LmmBackend};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct HttpBackendConfig {
    pub base_url: String,
    pub api_key: Option<String>,
    pub model: String,
    pub timeout: Duration,
}

impl HttpBackendConfig {
    /// Reads `LMM_BASE_URL`, `LMM_API_KEY` and `LMM_MODEL`.
    pub fn from_env() -> Result<Self> {
        let base_url = std::env::var("LMM_BASE_URL")
            .map_err(|_| Error::invalid("LMM_BASE_URL is not set"))?;
        Ok(HttpBackendConfig {
            base_url,
            api_key: std::env::var("LMM_API_KEY").ok().filter(|k| !k.is_empty()),
            model: std::env::var("LMM_MODEL").unwrap_or_else(|_| "llava-1.5-7b".to_string()),
            timeout: Duration::from_secs(120),
        })
    }
}

/// OpenAI-compatible chat-completions client.
pub struct HttpBackend {
    config: HttpBackendConfig,
    agent: ureq::Agent,
    tag: String,
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .new_agent();
        HttpBackend {
            tag: format!("http:{}", config.model),
            config,
            agent,
        }
    }

    /// Request body for a generation request.
    pub fn request_body(&self, request: &GenerationRequest) -> Result<Value> {
        let mut content = vec![json!({ "type": "text", "text": request.prompt_text })];
        if let Some(image) = &request.image {
            if image.path.is_some() {
                let b64 = image.read_base64()?;
                content.push(json!({
                    "type": "image_url",
                    "image_url": { "url": format!("data:{};base64,{}", mime_of(&b64), b64) }
                }));
            }
        }
        Ok(json!({
            "model": self.config.model,
            "messages": [{ "role": "user", "content": content }],
            "temperature": request.temperature,
            "max_tokens": request.max_new_tokens,
        }))
    }
}

fn mime_of(b64: &str) -> &'static str {
    // Base64 prefixes of the PNG and GIF signatures.
    if b64.starts_with("iVBORw0KGg") {
        "image/png"
    } else if b64.starts_with("R0lGOD") {
        "image/gif"
    } else {
        "image/jpeg"
    }
}

fn completion_text(body: &Value) -> Option<String> {
    let content = body.get("choices")?.get(0)?.get("message")?.get("content")?;
    match content {
        Value::String(s) => Some(s.clone()),
        Value::Array(parts) => Some(
            parts
                .iter()
                .filter_map(|p| p.get("text").and_then(Value::as_str))
                .collect::<Vec<_>>()
                .join(""),
        ),
        _ => None,
    }
}

fn backend_message(text: &str) -> String {
    serde_json::from_str::<Value>(text)
        .ok()
        .and_then(|v| {
            v.get("error")
                .and_then(|e| e.get("message").or(Some(e)))
                .map(|m| m.as_str().map(String::from).unwrap_or_else(|| m.to_string()))
        })
        .unwrap_or_else(|| text.to_string())
}

impl LmmBackend for HttpBackend {
    fn tag(&self) -> &str {
        &self.tag
    }

    fn complete(&self, request: &GenerationRequest) -> std::result::Result<String, BackendFailure> {
        let body = self.request_body(request).map_err(BackendFailure::Fatal)?;
        let url = format!(
            "{}/v1/chat/completions",
            self.config.base_url.trim_end_matches('/')
        );
        let mut call = self.agent.post(&url);
        if let Some(key) = &self.config.api_key {
            call = call.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = call
            .send_json(&body)
            .map_err(|e| BackendFailure::Transient(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendFailure::Transient(e.to_string()))?;
        if status == 429 || status >= 500 {
            return Err(BackendFailure::Transient(format!("HTTP {status}: {}", backend_message(&text))));
        }
        if status >= 400 {
            return Err(BackendFailure::Fatal(Error::Protocol(format!(
                "HTTP {status}: {}",
                backend_message(&text)
            ))));
        }
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| BackendFailure::Fatal(Error::Protocol(format!("response is not JSON: {e}"))))?;
        completion_text(&value).ok_or_else(|| {
            BackendFailure::Fatal(Error::Protocol("response has no choices[0].message.content".into()))
        })
    }
}
