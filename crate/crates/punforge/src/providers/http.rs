//! OpenAI-compatible HTTP adapter: chat completions (text and image-part
//! messages) plus an images endpoint returning base64 or a URL. One adapter
//! shape covers every gateway the pipeline talks to.

use std::io::Cursor;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde_json::{json, Value};

use super::{ChatRequest, ImageArtifact, ImageRequest, MessagePart, MessageRole, Provider, ProviderError};

pub struct OpenAiProvider {
    id: String,
    /// Base URL up to and including the API root, e.g. `https://host/v1`.
    endpoint: String,
    model: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl OpenAiProvider {
    pub fn new(
        id: impl Into<String>,
        endpoint: impl Into<String>,
        model: impl Into<String>,
        api_key: Option<String>,
    ) -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(180))
            .build()
            .expect("reqwest client");
        OpenAiProvider {
            id: id.into(),
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            model: model.into(),
            api_key,
            client,
        }
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value, ProviderError> {
        let url = format!("{}{}", self.endpoint, path);
        let mut request = self.client.post(&url).json(body);
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response = request
            .send()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        let text = response
            .text()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(ProviderError::Http { status, body: text });
        }
        serde_json::from_str(&text).map_err(|e| ProviderError::Decode(e.to_string()))
    }

    fn fetch_url(&self, url: &str) -> Result<Vec<u8>, ProviderError> {
        let response = self
            .client
            .get(url)
            .send()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(ProviderError::Http {
                status,
                body: format!("fetching image url {url}"),
            });
        }
        response
            .bytes()
            .map(|b| b.to_vec())
            .map_err(|e| ProviderError::Transport(e.to_string()))
    }
}

fn message_to_json(role: MessageRole, parts: &[MessagePart]) -> Value {
    let role = match role {
        MessageRole::System => "system",
        MessageRole::User => "user",
        MessageRole::Assistant => "assistant",
    };
    // plain string content for text-only messages, content parts otherwise
    let only_text = parts
        .iter()
        .all(|p| matches!(p, MessagePart::Text(_)));
    let content = if only_text {
        let text = parts
            .iter()
            .map(|p| match p {
                MessagePart::Text(t) => t.as_str(),
                MessagePart::ImagePng(_) => unreachable!(),
            })
            .collect::<Vec<_>>()
            .join("\n");
        Value::String(text)
    } else {
        Value::Array(
            parts
                .iter()
                .map(|p| match p {
                    MessagePart::Text(t) => json!({"type": "text", "text": t}),
                    MessagePart::ImagePng(bytes) => json!({
                        "type": "image_url",
                        "image_url": {"url": format!("data:image/png;base64,{}", BASE64.encode(bytes))}
                    }),
                })
                .collect(),
        )
    };
    json!({"role": role, "content": content})
}

impl Provider for OpenAiProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete_text(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        let mut body = json!({
            "model": self.model,
            "messages": request
                .messages
                .iter()
                .map(|m| message_to_json(m.role, &m.parts))
                .collect::<Vec<_>>(),
            "temperature": request.params.temperature,
        });
        if let Some(top_p) = request.params.top_p {
            body["top_p"] = json!(top_p);
        }
        if let Some(max_tokens) = request.params.max_tokens {
            body["max_tokens"] = json!(max_tokens);
        }
        let reply = self.post("/chat/completions", &body)?;
        let content = reply
            .get("choices")
            .and_then(|c| c.get(0))
            .and_then(|c| c.pointer("/message/content"))
            .and_then(Value::as_str)
            .map(str::to_string);
        content.ok_or(ProviderError::EmptyChoices)
    }

    fn generate_image(&self, request: &ImageRequest) -> Result<ImageArtifact, ProviderError> {
        let body = json!({
            "model": self.model,
            "prompt": request.prompt,
            "n": 1,
            "size": request.resolution.to_string(),
            "response_format": "b64_json",
        });
        let reply = self.post("/images/generations", &body)?;
        let item = reply
            .get("data")
            .and_then(|d| d.get(0))
            .ok_or(ProviderError::EmptyChoices)?;
        let raw = if let Some(b64) = item.get("b64_json").and_then(Value::as_str) {
            BASE64
                .decode(b64.trim())
                .map_err(|e| ProviderError::Decode(format!("base64: {e}")))?
        } else if let Some(url) = item.get("url").and_then(Value::as_str) {
            self.fetch_url(url)?
        } else {
            return Err(ProviderError::Decode(
                "image item had neither b64_json nor url".into(),
            ));
        };
        normalize_png(raw, request)
    }
}

/// Decodes provider image bytes, enforces the requested resolution, and
/// transcodes to PNG when the provider answered in another format.
fn normalize_png(raw: Vec<u8>, request: &ImageRequest) -> Result<ImageArtifact, ProviderError> {
    let decoded = image::load_from_memory(&raw)
        .map_err(|e| ProviderError::Decode(format!("image decode: {e}")))?;
    let (got_w, got_h) = (decoded.width(), decoded.height());
    let want = request.resolution;
    if (got_w, got_h) != (want.width, want.height) {
        return Err(ProviderError::DimensionMismatch {
            want_w: want.width,
            want_h: want.height,
            got_w,
            got_h,
        });
    }
    let is_png = raw.starts_with(&[0x89, b'P', b'N', b'G']);
    let bytes = if is_png {
        raw
    } else {
        let mut out = Cursor::new(Vec::new());
        decoded
            .write_to(&mut out, image::ImageFormat::Png)
            .map_err(|e| ProviderError::Decode(format!("png encode: {e}")))?;
        out.into_inner()
    };
    Ok(ImageArtifact::new(bytes, "image/png", got_w, got_h))
}
