//! Provider registry: configuration file → instrumented provider handles.
//!
//! Every handle the registry gives out is wrapped in retry, optional rate
//! limiting (live adapters only), per-provider call statistics, and the
//! request log. Live adapters are constructed lazily so a registry listing
//! credentialed providers still loads when only mocks are bound.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::Deserialize;
use thiserror::Error;

use super::calllog::excerpt;
use super::{
    ChatRequest, Clock, ImageArtifact, ImageRequest, LogEntry, MatchRule, OpenAiProvider,
    Provider, ProviderBinding, ProviderError, RateLimiter, RequestLog, RetryPolicy, Role,
    ScriptedProvider, SystemClock,
};
use crate::providers::mock::ScriptFile;
use crate::providers::ScenarioProvider;

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("cannot read registry {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse registry {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("provider {id:?} is not defined in the registry")]
    UnknownProvider { id: String },
    #[error("provider {id:?} is not declared for role {role}")]
    RoleNotSupported { id: String, role: Role },
    #[error("provider {id:?} ({kind}) is missing field {field:?}")]
    MissingField {
        id: String,
        kind: String,
        field: String,
    },
    #[error("provider {id:?}: credential variable {env} is not set")]
    MissingCredential { id: String, env: String },
    #[error("provider {id:?}: {message}")]
    Invalid { id: String, message: String },
}

/// One provider entry as written in the registry JSON.
#[derive(Debug, Clone, Deserialize)]
pub struct ProviderSpec {
    /// "openai" (live), "scripted", or "scenario".
    pub kind: String,
    /// Role capabilities; binding a role outside this list is rejected.
    pub roles: Vec<Role>,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    /// Environment variable holding the API key. Credentials themselves
    /// never appear in config, manifests, or logs.
    #[serde(default)]
    pub credential_env: Option<String>,
    #[serde(default)]
    pub rate_limit_rpm: Option<u32>,
    /// Path to a [`ScriptFile`], for kind "scripted". Relative paths resolve
    /// against the registry file's directory.
    #[serde(default)]
    pub script: Option<String>,
    /// Canonical idiom → matching round, for kind "scenario".
    #[serde(default)]
    pub match_at: Option<HashMap<String, u32>>,
    #[serde(default)]
    pub default_round: Option<u32>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct RegistryConfig {
    pub providers: BTreeMap<String, ProviderSpec>,
}

/// Per-provider counters. A "call" is one logical operation regardless of
/// how many retry attempts it took.
#[derive(Debug, Default)]
pub struct ProviderStats {
    chat_calls: AtomicU64,
    image_calls: AtomicU64,
    total_attempts: AtomicU64,
    failures: AtomicU64,
    last_attempts: AtomicU64,
}

impl ProviderStats {
    pub fn chat_calls(&self) -> u64 {
        self.chat_calls.load(Ordering::Relaxed)
    }

    pub fn image_calls(&self) -> u64 {
        self.image_calls.load(Ordering::Relaxed)
    }

    pub fn total_calls(&self) -> u64 {
        self.chat_calls() + self.image_calls()
    }

    pub fn total_attempts(&self) -> u64 {
        self.total_attempts.load(Ordering::Relaxed)
    }

    pub fn failures(&self) -> u64 {
        self.failures.load(Ordering::Relaxed)
    }

    /// Attempts the most recent call took.
    pub fn last_attempts(&self) -> u64 {
        self.last_attempts.load(Ordering::Relaxed)
    }

    fn record(&self, kind: CallKind, attempts: u32, ok: bool) {
        match kind {
            CallKind::Chat => self.chat_calls.fetch_add(1, Ordering::Relaxed),
            CallKind::Image => self.image_calls.fetch_add(1, Ordering::Relaxed),
        };
        self.total_attempts
            .fetch_add(attempts as u64, Ordering::Relaxed);
        self.last_attempts.store(attempts as u64, Ordering::Relaxed);
        if !ok {
            self.failures.fetch_add(1, Ordering::Relaxed);
        }
    }
}

#[derive(Clone, Copy)]
enum CallKind {
    Chat,
    Image,
}

impl CallKind {
    fn as_str(self) -> &'static str {
        match self {
            CallKind::Chat => "chat",
            CallKind::Image => "image",
        }
    }
}

/// Retry + rate limit + stats + logging around any provider.
pub struct InstrumentedProvider {
    inner: Arc<dyn Provider>,
    stats: Arc<ProviderStats>,
    retry: RetryPolicy,
    limiter: Option<Arc<RateLimiter>>,
    clock: Arc<dyn Clock>,
    log: Option<Arc<RequestLog>>,
}

impl InstrumentedProvider {
    pub fn new(
        inner: Arc<dyn Provider>,
        retry: RetryPolicy,
        limiter: Option<Arc<RateLimiter>>,
        clock: Arc<dyn Clock>,
        log: Option<Arc<RequestLog>>,
    ) -> Self {
        InstrumentedProvider {
            inner,
            stats: Arc::new(ProviderStats::default()),
            retry,
            limiter,
            clock,
            log,
        }
    }

    /// Bare wrapper around a mock: default retry, no limiter, no log.
    pub fn plain(inner: Arc<dyn Provider>) -> Arc<Self> {
        Arc::new(InstrumentedProvider::new(
            inner,
            RetryPolicy::default(),
            None,
            Arc::new(SystemClock::new()),
            None,
        ))
    }

    pub fn stats(&self) -> &ProviderStats {
        &self.stats
    }

    fn instrument<T>(
        &self,
        kind: CallKind,
        digest: String,
        request_excerpt: String,
        response_excerpt: impl Fn(&T) -> String,
        op: impl FnMut(u32) -> Result<T, ProviderError>,
    ) -> Result<T, ProviderError> {
        let started = self.clock.now();
        let limiter = self.limiter.clone();
        let mut op = op;
        let (result, attempts) = super::with_retry(&self.retry, &*self.clock, |attempt| {
            if let Some(limiter) = &limiter {
                limiter.acquire();
            }
            op(attempt)
        });
        let latency = self.clock.now().saturating_sub(started);
        self.stats.record(kind, attempts, result.is_ok());
        if let Some(log) = &self.log {
            log.append(&LogEntry {
                ts_utc: chrono::Utc::now().to_rfc3339(),
                run_id: super::current_run_id(),
                provider: self.inner.id().to_string(),
                kind: kind.as_str().to_string(),
                request_digest: digest,
                request_excerpt,
                attempts,
                latency_ms: latency.as_millis() as u64,
                ok: result.is_ok(),
                response_excerpt: result.as_ref().ok().map(&response_excerpt),
                error: result.as_ref().err().map(|e| e.to_string()),
            });
        }
        result.map_err(|err| {
            if attempts >= self.retry.max_attempts && err.is_retryable() {
                ProviderError::RetriesExhausted {
                    attempts,
                    source: Box::new(err),
                }
            } else {
                err
            }
        })
    }
}

impl Provider for InstrumentedProvider {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn complete_text(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        self.instrument(
            CallKind::Chat,
            request.digest(),
            excerpt(&request.text_content()),
            |reply: &String| excerpt(reply),
            |_| self.inner.complete_text(request),
        )
    }

    fn generate_image(&self, request: &ImageRequest) -> Result<ImageArtifact, ProviderError> {
        self.instrument(
            CallKind::Image,
            hex::encode(sha2::Sha256::digest(request.prompt.as_bytes())),
            excerpt(&request.prompt),
            |artifact: &ImageArtifact| {
                format!(
                    "{}x{} {} ({} bytes)",
                    artifact.width,
                    artifact.height,
                    artifact.content_hash,
                    artifact.bytes.len()
                )
            },
            |_| self.inner.generate_image(request),
        )
    }
}

use sha2::Digest;

struct RegistryEntry {
    spec: ProviderSpec,
    instance: Mutex<Option<Arc<InstrumentedProvider>>>,
}

/// Instantiates and hands out providers by id, enforcing declared roles.
pub struct ProviderRegistry {
    entries: BTreeMap<String, RegistryEntry>,
    base_dir: std::path::PathBuf,
    retry: RetryPolicy,
    clock: Arc<dyn Clock>,
    log: Option<Arc<RequestLog>>,
}

impl ProviderRegistry {
    pub fn from_config_file(
        path: impl AsRef<Path>,
        retry: RetryPolicy,
        log: Option<Arc<RequestLog>>,
    ) -> Result<Self, RegistryError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| RegistryError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let config: RegistryConfig =
            serde_json::from_str(&text).map_err(|source| RegistryError::Parse {
                path: path.display().to_string(),
                source,
            })?;
        let base_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Ok(Self::from_config(config, base_dir, retry, log))
    }

    pub fn from_config(
        config: RegistryConfig,
        base_dir: impl Into<std::path::PathBuf>,
        retry: RetryPolicy,
        log: Option<Arc<RequestLog>>,
    ) -> Self {
        let entries = config
            .providers
            .into_iter()
            .map(|(id, spec)| {
                (
                    id,
                    RegistryEntry {
                        spec,
                        instance: Mutex::new(None),
                    },
                )
            })
            .collect();
        ProviderRegistry {
            entries,
            base_dir: base_dir.into(),
            retry,
            clock: Arc::new(SystemClock::new()),
            log,
        }
    }

    /// Registry with no config file, populated via [`ProviderRegistry::insert`].
    pub fn empty(retry: RetryPolicy, log: Option<Arc<RequestLog>>) -> Self {
        ProviderRegistry {
            entries: BTreeMap::new(),
            base_dir: std::path::PathBuf::from("."),
            retry,
            clock: Arc::new(SystemClock::new()),
            log,
        }
    }

    /// Registers an already-built provider (simulations, tests) for all roles.
    pub fn insert(&mut self, provider: Arc<dyn Provider>) {
        let id = provider.id().to_string();
        let instrumented = Arc::new(InstrumentedProvider::new(
            provider,
            self.retry.clone(),
            None,
            Arc::clone(&self.clock),
            self.log.clone(),
        ));
        self.entries.insert(
            id,
            RegistryEntry {
                spec: ProviderSpec {
                    kind: "inline".into(),
                    roles: Role::ALL.to_vec(),
                    endpoint: None,
                    model: None,
                    credential_env: None,
                    rate_limit_rpm: None,
                    script: None,
                    match_at: None,
                    default_round: None,
                },
                instance: Mutex::new(Some(instrumented)),
            },
        );
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// The instrumented handle for `id`, constructing live adapters on first use.
    pub fn get(&self, id: &str) -> Result<Arc<InstrumentedProvider>, RegistryError> {
        let entry = self
            .entries
            .get(id)
            .ok_or_else(|| RegistryError::UnknownProvider { id: id.to_string() })?;
        let mut slot = entry.instance.lock().unwrap();
        if let Some(instance) = slot.as_ref() {
            return Ok(Arc::clone(instance));
        }
        let raw = self.build(id, &entry.spec)?;
        let limiter = match entry.spec.kind.as_str() {
            "openai" => {
                let rpm = entry.spec.rate_limit_rpm.unwrap_or(self.retry.rate_limit_rpm);
                (rpm > 0).then(|| Arc::new(RateLimiter::new(rpm, Arc::clone(&self.clock))))
            }
            _ => None,
        };
        let instrumented = Arc::new(InstrumentedProvider::new(
            raw,
            self.retry.clone(),
            limiter,
            Arc::clone(&self.clock),
            self.log.clone(),
        ));
        *slot = Some(Arc::clone(&instrumented));
        Ok(instrumented)
    }

    /// Stats for a provider that has been constructed.
    pub fn stats(&self, id: &str) -> Option<Arc<ProviderStats>> {
        let entry = self.entries.get(id)?;
        let slot = entry.instance.lock().unwrap();
        slot.as_ref().map(|p| Arc::clone(&p.stats))
    }

    fn build(&self, id: &str, spec: &ProviderSpec) -> Result<Arc<dyn Provider>, RegistryError> {
        let require = |field: &str, value: &Option<String>| {
            value.clone().ok_or_else(|| RegistryError::MissingField {
                id: id.to_string(),
                kind: spec.kind.clone(),
                field: field.to_string(),
            })
        };
        match spec.kind.as_str() {
            "openai" => {
                let endpoint = require("endpoint", &spec.endpoint)?;
                let model = require("model", &spec.model)?;
                let api_key = match &spec.credential_env {
                    Some(env) => Some(std::env::var(env).map_err(|_| {
                        RegistryError::MissingCredential {
                            id: id.to_string(),
                            env: env.clone(),
                        }
                    })?),
                    None => None,
                };
                Ok(Arc::new(OpenAiProvider::new(id, endpoint, model, api_key)))
            }
            "scripted" => {
                let script = match &spec.script {
                    Some(path) => {
                        let full = self.base_dir.join(path);
                        let text =
                            std::fs::read_to_string(&full).map_err(|source| RegistryError::Io {
                                path: full.display().to_string(),
                                source,
                            })?;
                        serde_json::from_str::<ScriptFile>(&text).map_err(|source| {
                            RegistryError::Parse {
                                path: full.display().to_string(),
                                source,
                            }
                        })?
                    }
                    None => ScriptFile::default(),
                };
                Ok(Arc::new(ScriptedProvider::from_script(id, &script)))
            }
            "scenario" => {
                let rounds = spec
                    .match_at
                    .clone()
                    .unwrap_or_default()
                    .into_iter()
                    .map(|(idiom, round)| (crate::matcher::canonicalize(&idiom), round))
                    .collect();
                let rule = MatchRule::Fixed {
                    rounds,
                    default_round: spec.default_round,
                };
                Ok(Arc::new(ScenarioProvider::new(id, rule)))
            }
            other => Err(RegistryError::Invalid {
                id: id.to_string(),
                message: format!("unknown provider kind {other:?}"),
            }),
        }
    }

    /// Resolves all five roles of a binding, enforcing declared capabilities.
    pub fn bind(&self, binding: &ProviderBinding) -> Result<BoundProviders, RegistryError> {
        let resolve = |role: Role| -> Result<Arc<InstrumentedProvider>, RegistryError> {
            let id = binding.get(role);
            let entry = self
                .entries
                .get(id)
                .ok_or_else(|| RegistryError::UnknownProvider { id: id.to_string() })?;
            if !entry.spec.roles.contains(&role) {
                return Err(RegistryError::RoleNotSupported {
                    id: id.to_string(),
                    role,
                });
            }
            self.get(id)
        };
        Ok(BoundProviders {
            prompt: resolve(Role::Prompt)?,
            t2im: resolve(Role::T2im)?,
            infer: resolve(Role::Infer)?,
            judge: resolve(Role::Judge)?,
            update: resolve(Role::Update)?,
        })
    }
}

/// The five role slots of one run, resolved to instrumented handles.
#[derive(Clone)]
pub struct BoundProviders {
    pub prompt: Arc<InstrumentedProvider>,
    pub t2im: Arc<InstrumentedProvider>,
    pub infer: Arc<InstrumentedProvider>,
    pub judge: Arc<InstrumentedProvider>,
    pub update: Arc<InstrumentedProvider>,
}

impl BoundProviders {
    /// Wraps one mock provider into all five roles (tests, simulations).
    pub fn uniform(provider: Arc<dyn Provider>) -> Self {
        let wrapped = InstrumentedProvider::plain(provider);
        BoundProviders {
            prompt: Arc::clone(&wrapped),
            t2im: Arc::clone(&wrapped),
            infer: Arc::clone(&wrapped),
            judge: Arc::clone(&wrapped),
            update: wrapped,
        }
    }

    /// Per-role wrapping of distinct providers.
    pub fn from_parts(
        prompt: Arc<dyn Provider>,
        t2im: Arc<dyn Provider>,
        infer: Arc<dyn Provider>,
        judge: Arc<dyn Provider>,
        update: Arc<dyn Provider>,
    ) -> Self {
        BoundProviders {
            prompt: InstrumentedProvider::plain(prompt),
            t2im: InstrumentedProvider::plain(t2im),
            infer: InstrumentedProvider::plain(infer),
            judge: InstrumentedProvider::plain(judge),
            update: InstrumentedProvider::plain(update),
        }
    }

    pub fn binding(&self) -> ProviderBinding {
        ProviderBinding {
            prompt_llm: self.prompt.id().to_string(),
            t2im: self.t2im.id().to_string(),
            infer_mllm: self.infer.id().to_string(),
            judge_llm: self.judge.id().to_string(),
            update_mllm: self.update.id().to_string(),
        }
    }
}
