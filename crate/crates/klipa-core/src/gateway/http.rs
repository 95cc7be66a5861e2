use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{Backend, ChatRequest, Completion, GatewayConfig, GatewayError, Usage};

/// Chat-completions style HTTP backend: `POST <base>/chat/completions` and
/// `POST <base>/embeddings`.
pub struct HttpBackend {
    agent: ureq::Agent,
    chat_url: String,
    embed_url: String,
    model: String,
    embed_model: String,
    embed_dim: Option<usize>,
    api_key: Option<String>,
}

#[derive(Deserialize)]
struct ChatBody {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<UsageBody>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct UsageBody {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

#[derive(Deserialize)]
struct EmbedBody {
    data: Vec<EmbedItem>,
}

#[derive(Deserialize)]
struct EmbedItem {
    embedding: Vec<f64>,
}

fn endpoint(base: &str, path: &str) -> String {
    format!("{}/{}", base.trim_end_matches('/'), path)
}

fn excerpt(body: &str) -> String {
    body.chars().take(300).collect()
}

impl HttpBackend {
    pub fn new(cfg: &GatewayConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(cfg.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        let embed_base = cfg.embed_base_url.as_deref().unwrap_or(&cfg.base_url);
        Self {
            agent,
            chat_url: endpoint(&cfg.base_url, "chat/completions"),
            embed_url: endpoint(embed_base, "embeddings"),
            model: cfg.model.clone(),
            embed_model: cfg.embed_model.clone(),
            embed_dim: cfg.embed_dim,
            api_key: cfg.api_key.clone(),
        }
    }

    fn post(&self, url: &str, body: &serde_json::Value) -> Result<String, GatewayError> {
        // Serialized once per attempt from the same request, so a retry
        // resends identical bytes.
        let payload = serde_json::to_vec(body).expect("request serializes");
        let mut req = self
            .agent
            .post(url)
            .header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send(&payload[..]).map_err(map_transport)?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(map_transport)?;
        if (200..300).contains(&status) {
            return Ok(text);
        }
        let lower = text.to_ascii_lowercase();
        if lower.contains("context_length_exceeded") || lower.contains("maximum context length") {
            return Err(GatewayError::ContextTooLong(excerpt(&text)));
        }
        Err(GatewayError::BackendError {
            status,
            body: excerpt(&text),
        })
    }
}

fn map_transport(e: ureq::Error) -> GatewayError {
    match e {
        ureq::Error::Timeout(_) => GatewayError::Timeout,
        other => GatewayError::Transport(other.to_string()),
    }
}

impl Backend for HttpBackend {
    fn chat(&self, req: &ChatRequest) -> Result<Completion, GatewayError> {
        let mut body = json!({
            "model": self.model,
            "messages": req.messages,
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        });
        if let Some(stop) = &req.stop {
            body["stop"] = json!(stop);
        }
        let text = self.post(&self.chat_url, &body)?;
        let parsed: ChatBody = serde_json::from_str(&text).map_err(|e| GatewayError::BackendError {
            status: 200,
            body: format!("unparseable completion ({e}): {}", excerpt(&text)),
        })?;
        let content = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| GatewayError::BackendError {
                status: 200,
                body: "completion has no choices".into(),
            })?;
        let usage = parsed
            .usage
            .map(|u| Usage {
                prompt_tokens: u.prompt_tokens,
                completion_tokens: u.completion_tokens,
            })
            .unwrap_or_default();
        Ok(Completion {
            text: content,
            usage,
        })
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, GatewayError> {
        let body = json!({ "model": self.embed_model, "input": text });
        let raw = self.post(&self.embed_url, &body)?;
        let parsed: EmbedBody = serde_json::from_str(&raw).map_err(|e| GatewayError::BackendError {
            status: 200,
            body: format!("unparseable embedding response ({e})"),
        })?;
        parsed
            .data
            .into_iter()
            .next()
            .map(|d| d.embedding)
            .ok_or_else(|| GatewayError::BackendError {
                status: 200,
                body: "embedding response has no data".into(),
            })
    }

    fn chat_model(&self) -> &str {
        &self.model
    }

    fn embed_model(&self) -> &str {
        &self.embed_model
    }

    fn embed_dim(&self) -> Option<usize> {
        self.embed_dim
    }
}
