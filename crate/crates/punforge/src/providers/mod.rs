//! Role-based abstraction over the five model calls of the pipeline:
//! prompt LLM, text-to-image model, recognizing MLLM, judge LLM, and
//! update MLLM. One trait covers live HTTP adapters, deterministic mocks,
//! and stochastic simulators; retry, rate limiting, and call logging wrap
//! every implementation uniformly.

mod calllog;
mod clock;
mod http;
mod mock;
mod ratelimit;
mod registry;
mod retry;

pub use calllog::{current_run_id, LogEntry, RequestLog, RunScope};
pub use clock::{Clock, ManualClock, SystemClock};
pub use http::OpenAiProvider;
pub use mock::{pixel_png_for, MatchRule, ScenarioProvider, ScriptFile, ScriptedProvider, SequenceProvider};
pub use ratelimit::RateLimiter;
pub use registry::{
    BoundProviders, InstrumentedProvider, ProviderRegistry, ProviderSpec, ProviderStats,
    RegistryConfig, RegistryError,
};
pub use retry::{with_retry, RetryPolicy};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::Resolution;

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("response contained no choices")]
    EmptyChoices,
    #[error("could not decode response: {0}")]
    Decode(String),
    #[error("image is {got_w}x{got_h} but {want_w}x{want_h} was requested")]
    DimensionMismatch {
        want_w: u32,
        want_h: u32,
        got_w: u32,
        got_h: u32,
    },
    #[error("provider {id} does not support {what}")]
    Unsupported { id: String, what: String },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("credential variable {env} is not set")]
    MissingCredential { env: String },
    #[error("no scripted reply for request digest {digest}")]
    NoScriptEntry { digest: String },
    #[error("retries exhausted after {attempts} attempts: {source}")]
    RetriesExhausted {
        attempts: u32,
        #[source]
        source: Box<ProviderError>,
    },
}

impl ProviderError {
    /// Whether a retry could plausibly succeed. Client-side mistakes
    /// (preconditions, missing scripts, unsupported ops) fail fast.
    pub fn is_retryable(&self) -> bool {
        match self {
            ProviderError::Transport(_) | ProviderError::EmptyChoices => true,
            ProviderError::Http { status, .. } => {
                *status == 408 || *status == 429 || *status >= 500
            }
            _ => false,
        }
    }
}

/// Which of the five pipeline roles a provider is filling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Prompt,
    T2im,
    Infer,
    Judge,
    Update,
}

impl Role {
    pub const ALL: [Role; 5] = [Role::Prompt, Role::T2im, Role::Infer, Role::Judge, Role::Update];

    pub fn as_str(&self) -> &'static str {
        match self {
            Role::Prompt => "prompt",
            Role::T2im => "t2im",
            Role::Infer => "infer",
            Role::Judge => "judge",
            Role::Update => "update",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "prompt" => Ok(Role::Prompt),
            "t2im" => Ok(Role::T2im),
            "infer" => Ok(Role::Infer),
            "judge" => Ok(Role::Judge),
            "update" => Ok(Role::Update),
            other => Err(format!(
                "unknown role {other:?} (expected prompt|t2im|infer|judge|update)"
            )),
        }
    }
}

/// Which provider id fills each of the five roles. The same id may fill
/// several roles.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ProviderBinding {
    pub prompt_llm: String,
    pub t2im: String,
    pub infer_mllm: String,
    pub judge_llm: String,
    pub update_mllm: String,
}

impl ProviderBinding {
    /// Convenience for tests and simulations: one provider everywhere.
    pub fn uniform(id: impl Into<String>) -> Self {
        let id = id.into();
        ProviderBinding {
            prompt_llm: id.clone(),
            t2im: id.clone(),
            infer_mllm: id.clone(),
            judge_llm: id.clone(),
            update_mllm: id,
        }
    }

    pub fn get(&self, role: Role) -> &str {
        match role {
            Role::Prompt => &self.prompt_llm,
            Role::T2im => &self.t2im,
            Role::Infer => &self.infer_mllm,
            Role::Judge => &self.judge_llm,
            Role::Update => &self.update_mllm,
        }
    }

    pub fn set(&mut self, role: Role, id: impl Into<String>) {
        let id = id.into();
        match role {
            Role::Prompt => self.prompt_llm = id,
            Role::T2im => self.t2im = id,
            Role::Infer => self.infer_mllm = id,
            Role::Judge => self.judge_llm = id,
            Role::Update => self.update_mllm = id,
        }
    }

    /// Stable `role=id` listing, used in resume keys and reports.
    pub fn describe(&self) -> String {
        format!(
            "prompt={}|t2im={}|infer={}|judge={}|update={}",
            self.prompt_llm, self.t2im, self.infer_mllm, self.judge_llm, self.update_mllm
        )
    }
}

/// Decoding settings sent with every chat request and recorded in manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodingParams {
    pub temperature: f32,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub top_p: Option<f32>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub max_tokens: Option<u32>,
}

impl DecodingParams {
    /// Settings for the generation roles (prompt, infer, update).
    pub fn generation() -> Self {
        DecodingParams {
            temperature: 0.7,
            top_p: None,
            max_tokens: None,
        }
    }

    /// Settings for the judge: greedy, so verdicts are as stable as possible.
    pub fn judge() -> Self {
        DecodingParams {
            temperature: 0.0,
            top_p: None,
            max_tokens: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageRole {
    System,
    User,
    Assistant,
}

/// One part of a chat message: text, or an inline PNG for multimodal calls.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MessagePart {
    Text(String),
    ImagePng(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatMessage {
    pub role: MessageRole,
    pub parts: Vec<MessagePart>,
}

impl ChatMessage {
    pub fn system(text: impl Into<String>) -> Self {
        ChatMessage {
            role: MessageRole::System,
            parts: vec![MessagePart::Text(text.into())],
        }
    }

    pub fn user(text: impl Into<String>) -> Self {
        ChatMessage {
            role: MessageRole::User,
            parts: vec![MessagePart::Text(text.into())],
        }
    }

    pub fn user_with_image(text: impl Into<String>, png: Vec<u8>) -> Self {
        ChatMessage {
            role: MessageRole::User,
            parts: vec![MessagePart::ImagePng(png), MessagePart::Text(text.into())],
        }
    }

    /// Concatenated text parts, for mocks that match on request content.
    pub fn text_content(&self) -> String {
        self.parts
            .iter()
            .filter_map(|p| match p {
                MessagePart::Text(t) => Some(t.as_str()),
                MessagePart::ImagePng(_) => None,
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn image_parts(&self) -> impl Iterator<Item = &[u8]> {
        self.parts.iter().filter_map(|p| match p {
            MessagePart::ImagePng(b) => Some(b.as_slice()),
            MessagePart::Text(_) => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub params: DecodingParams,
}

impl ChatRequest {
    /// SHA-256 over a canonical rendering of the request. Image bytes enter
    /// via their own digest, so requests with identical content hash the same
    /// regardless of construction order or process.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(format!(
            "params:t={:?},p={:?},m={:?};",
            self.params.temperature, self.params.top_p, self.params.max_tokens
        ));
        for msg in &self.messages {
            hasher.update(format!("role:{:?};", msg.role));
            for part in &msg.parts {
                match part {
                    MessagePart::Text(t) => {
                        hasher.update("text:");
                        hasher.update(t.as_bytes());
                        hasher.update(";");
                    }
                    MessagePart::ImagePng(bytes) => {
                        hasher.update("image:");
                        hasher.update(hex::encode(Sha256::digest(bytes)));
                        hasher.update(";");
                    }
                }
            }
        }
        hex::encode(hasher.finalize())
    }

    /// All text content across messages, newline-joined.
    pub fn text_content(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.text_content())
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn has_image(&self) -> bool {
        self.messages.iter().any(|m| m.image_parts().next().is_some())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRequest {
    pub prompt: String,
    pub resolution: Resolution,
}

/// A generated image plus its content digest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageArtifact {
    pub bytes: Vec<u8>,
    pub media_type: String,
    pub width: u32,
    pub height: u32,
    pub content_hash: String,
}

impl ImageArtifact {
    /// Builds an artifact; the content hash is always recomputed from bytes.
    pub fn new(bytes: Vec<u8>, media_type: impl Into<String>, width: u32, height: u32) -> Self {
        let content_hash = content_hash(&bytes);
        ImageArtifact {
            bytes,
            media_type: media_type.into(),
            width,
            height,
            content_hash,
        }
    }
}

/// Hex SHA-256 of a byte payload.
pub fn content_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// One model endpoint, behind whichever transport (HTTP, script, simulation).
///
/// Implementations are safe for concurrent use; retry and rate limiting are
/// layered on by [`InstrumentedProvider`], not implemented here.
pub trait Provider: Send + Sync {
    fn id(&self) -> &str;

    fn complete_text(&self, request: &ChatRequest) -> Result<String, ProviderError>;

    fn generate_image(&self, request: &ImageRequest) -> Result<ImageArtifact, ProviderError>;
}

/// Sends a chat request and returns the assistant text of the first choice.
pub fn complete_text(
    provider: &dyn Provider,
    messages: Vec<ChatMessage>,
    params: DecodingParams,
) -> Result<String, ProviderError> {
    if messages.is_empty() {
        return Err(ProviderError::Precondition(
            "messages must be non-empty".into(),
        ));
    }
    provider.complete_text(&ChatRequest { messages, params })
}

/// Renders a prompt into an image at the given resolution.
pub fn generate_image(
    provider: &dyn Provider,
    prompt: &str,
    resolution: Resolution,
) -> Result<ImageArtifact, ProviderError> {
    if prompt.is_empty() {
        return Err(ProviderError::Precondition(
            "image prompt must be non-empty".into(),
        ));
    }
    provider.generate_image(&ImageRequest {
        prompt: prompt.to_string(),
        resolution,
    })
}

/// Asks a multimodal model which idiom an image depicts. Returns the raw
/// reply; top-1 extraction is the engine's job.
pub fn infer_idiom_from_image(
    provider: &dyn Provider,
    image: &ImageArtifact,
    instruction: &str,
) -> Result<String, ProviderError> {
    if image.bytes.is_empty() {
        return Err(ProviderError::Precondition(
            "image payload must be non-empty".into(),
        ));
    }
    complete_text(
        provider,
        vec![ChatMessage::user_with_image(
            instruction,
            image.bytes.clone(),
        )],
        DecodingParams::generation(),
    )
}
