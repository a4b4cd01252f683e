//! The iteration loop: propose a prompt, render it, recognize the idiom,
//! judge the match, decide stop/continue, collect edit suggestions; repeat
//! until recognition succeeds or the cap is reached, one image per
//! iteration, full trajectory captured.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::ImageStore;
use crate::matcher::{judge_equivalent, judge_template_hash};
use crate::model::{
    append_iteration, init_run_state, next_control_signal, ControlSignal, Idiom, ImageRef,
    IterationRecord, ModelError, RunPolicy, RunState,
};
use crate::providers::{
    complete_text, generate_image, infer_idiom_from_image, BoundProviders, ChatMessage,
    DecodingParams, Provider, ProviderBinding, ProviderError, Role, RunScope,
};

pub const PROMPT_SYSTEM: &str = include_str!("../assets/prompt_system.txt");
pub const PROMPT_USER_TEMPLATE: &str = include_str!("../assets/prompt_user.txt");
pub const INFER_INSTRUCTION: &str = include_str!("../assets/infer_instruction.txt");
pub const UPDATE_INSTRUCTION: &str = include_str!("../assets/update_instruction.txt");

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("image store failure: {0}")]
    Store(#[from] crate::dataset::DatasetError),
}

/// A provider failure inside one iteration, with what the iteration had
/// produced so far.
#[derive(Debug, Error)]
#[error("provider failure at t={t} stage={stage}: {source}")]
pub struct StepError {
    pub t: u32,
    pub stage: Role,
    #[source]
    pub source: ProviderError,
    /// Prompt reached before the failure, if any.
    pub prompt: Option<String>,
    /// Image reference reached before the failure, if any.
    pub image: Option<ImageRef>,
}

/// Pipeline configuration ladder: no LLM at all, a single LLM-written
/// prompt, or the full loop with a bounded number of update rounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RunMode {
    /// Iterative refinement under the policy's own max_steps.
    Full,
    /// The idiom string is the prompt; no prompt LLM, no updates, one round.
    T2imOnly,
    /// One LLM-written prompt, no updates, one round.
    OneShot,
    /// Iterative refinement with exactly k update rounds (k+1 iterations).
    Updates(u32),
}

impl RunMode {
    /// Iteration cap implied by the mode; `Full` defers to the policy.
    pub fn max_steps(&self, policy_default: u32) -> u32 {
        match self {
            RunMode::Full => policy_default,
            RunMode::T2imOnly | RunMode::OneShot => 1,
            RunMode::Updates(k) => k + 1,
        }
    }

    pub fn uses_prompt_llm(&self) -> bool {
        !matches!(self, RunMode::T2imOnly)
    }

    pub fn uses_updates(&self) -> bool {
        matches!(self, RunMode::Full | RunMode::Updates(_))
    }

    /// The ablation ladder, in fixed reporting order.
    pub const LADDER: [RunMode; 6] = [
        RunMode::T2imOnly,
        RunMode::OneShot,
        RunMode::Updates(1),
        RunMode::Updates(2),
        RunMode::Updates(3),
        RunMode::Updates(4),
    ];
}

impl fmt::Display for RunMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunMode::Full => write!(f, "full"),
            RunMode::T2imOnly => write!(f, "t2im_only"),
            RunMode::OneShot => write!(f, "one_shot"),
            RunMode::Updates(k) => write!(f, "updates={k}"),
        }
    }
}

impl FromStr for RunMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(RunMode::Full),
            "t2im_only" => Ok(RunMode::T2imOnly),
            "one_shot" => Ok(RunMode::OneShot),
            other => {
                if let Some(k) = other.strip_prefix("updates=") {
                    let k: u32 = k
                        .parse()
                        .map_err(|_| format!("bad update count in mode {other:?}"))?;
                    if k == 0 {
                        return Err("updates=k requires k >= 1 (use one_shot for k = 0)".into());
                    }
                    Ok(RunMode::Updates(k))
                } else {
                    Err(format!(
                        "unknown mode {other:?} (expected full|t2im_only|one_shot|updates=k)"
                    ))
                }
            }
        }
    }
}

impl Serialize for RunMode {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RunMode {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Decoding settings per role family, recorded in every manifest line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodingProfile {
    pub generation: DecodingParams,
    pub judge: DecodingParams,
}

impl Default for DecodingProfile {
    fn default() -> Self {
        DecodingProfile {
            generation: DecodingParams::generation(),
            judge: DecodingParams::judge(),
        }
    }
}

/// How many times each role's provider was invoked during one run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleCalls {
    pub prompt: u32,
    pub t2im: u32,
    pub infer: u32,
    pub judge: u32,
    pub update: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RunStatus {
    #[serde(rename = "COMPLETED")]
    Completed,
    #[serde(rename = "PROVIDER_FAILED")]
    ProviderFailed,
}

/// One idiom's complete trajectory plus outcome; the manifest unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub idiom: Idiom,
    pub binding: ProviderBinding,
    pub policy: RunPolicy,
    pub mode: RunMode,
    pub iterations: Vec<IterationRecord>,
    pub matched: bool,
    pub matched_at: Option<u32>,
    pub wall_time_ms: u64,
    pub status: RunStatus,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub failure: Option<String>,
    pub calls: RoleCalls,
    pub decoding: DecodingProfile,
    pub judge_template_hash: String,
    pub started_at: chrono::DateTime<chrono::Utc>,
    pub finished_at: chrono::DateTime<chrono::Utc>,
}

impl RunRecord {
    /// Stable id: digest of idiom, binding, mode, and seed. Identical
    /// configurations map to identical ids, which is what resume keys on.
    pub fn run_id(&self) -> String {
        derive_run_id(&self.idiom.canonical, &self.binding, self.mode, self.policy.seed)
    }

    /// Resume key: the coordinates that make a run "already done".
    pub fn resume_key(&self) -> String {
        resume_key(&self.idiom.canonical, &self.binding, self.mode)
    }
}

pub fn derive_run_id(
    canonical: &str,
    binding: &ProviderBinding,
    mode: RunMode,
    seed: Option<u64>,
) -> String {
    let mut hasher = Sha256::new();
    hasher.update(canonical.as_bytes());
    hasher.update([0x1f]);
    hasher.update(binding.describe().as_bytes());
    hasher.update([0x1f]);
    hasher.update(mode.to_string().as_bytes());
    hasher.update([0x1f]);
    hasher.update(format!("{seed:?}").as_bytes());
    hex::encode(&hasher.finalize()[..16])
}

pub fn resume_key(canonical: &str, binding: &ProviderBinding, mode: RunMode) -> String {
    format!("{canonical}\x1f{}\x1f{mode}", binding.describe())
}

/// Top-1 extraction: first non-empty line, surrounding quotes and trailing
/// periods stripped. The raw reply stays in the record so this rule can be
/// revised without rerunning models.
pub fn extract_top1(raw: &str) -> String {
    let line = raw
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .unwrap_or("");
    let mut s = line.to_string();
    loop {
        let trimmed = s.trim();
        let stripped = [('"', '"'), ('\'', '\''), ('\u{201c}', '\u{201d}'), ('\u{2018}', '\u{2019}')]
            .iter()
            .find_map(|&(open, close)| {
                trimmed
                    .strip_prefix(open)
                    .and_then(|r| r.strip_suffix(close))
            });
        match stripped {
            Some(inner) if !inner.is_empty() => s = inner.to_string(),
            _ => break,
        }
    }
    s.trim().trim_end_matches(['.', '。']).trim().to_string()
}

/// Splits an update reply into an edit list: one edit per line, bullet
/// markers and enumeration prefixes dropped, empties removed.
pub fn parse_edit_list(raw: &str) -> Vec<String> {
    raw.lines()
        .map(|line| {
            let mut s = line.trim();
            for marker in ["- ", "* ", "• ", "– ", "— "] {
                if let Some(rest) = s.strip_prefix(marker) {
                    s = rest.trim();
                }
            }
            s = s.strip_prefix(['-', '*', '•']).unwrap_or(s).trim();
            // "1. edit" / "2) edit"
            let digits = s.chars().take_while(|c| c.is_ascii_digit()).count();
            if digits > 0 {
                let rest = &s[digits..];
                if let Some(rest) = rest.strip_prefix(['.', ')']) {
                    s = rest.trim();
                }
            }
            s.to_string()
        })
        .filter(|s| !s.is_empty())
        .collect()
}

/// Mocks legitimately return undersized images; one warning per provider is
/// enough to flag it without flooding multi-thousand-run logs.
fn warn_once_per_provider(id: &str, message: impl FnOnce() -> String) {
    use std::collections::HashSet;
    use std::sync::{Mutex, OnceLock};
    static WARNED: OnceLock<Mutex<HashSet<String>>> = OnceLock::new();
    let warned = WARNED.get_or_init(|| Mutex::new(HashSet::new()));
    if warned.lock().unwrap().insert(id.to_string()) {
        log::warn!("{}", message());
    }
}

fn prompt_request_text(idiom: &Idiom, previous_prompt: &str, edits: &[String]) -> String {
    let previous = if previous_prompt.is_empty() {
        "(none)".to_string()
    } else {
        previous_prompt.to_string()
    };
    let edits = if edits.is_empty() {
        "(none)".to_string()
    } else {
        edits
            .iter()
            .map(|e| format!("- {e}"))
            .collect::<Vec<_>>()
            .join("\n")
    };
    PROMPT_USER_TEMPLATE
        .replace("{idiom}", &idiom.surface)
        .replace("{previous_prompt}", &previous)
        .replace("{edits}", &edits)
}

/// Executes one iteration against the bound providers.
///
/// Stages, in order: prompt (skipped in `t2im_only`), image generation at the
/// policy resolution, image storage, recognition, top-1 extraction, judging,
/// control signal, and edit collection. Edit suggestions are requested after
/// every unmatched verdict in iterative modes; they are kept only when the
/// signal is CONTINUE, and a failure in the discarded final request does not
/// fail the run.
#[allow(clippy::result_large_err)]
pub fn step(
    state: &RunState,
    providers: &BoundProviders,
    policy: &RunPolicy,
    mode: RunMode,
    store: &ImageStore,
    decoding: &DecodingProfile,
    calls: &mut RoleCalls,
) -> Result<IterationRecord, StepError> {
    let t = state.iteration() + 1;
    let idiom = &state.idiom;
    let fail = |stage: Role, source: ProviderError, prompt: Option<String>, image: Option<ImageRef>| {
        StepError {
            t,
            stage,
            source,
            prompt,
            image,
        }
    };

    // (a) prompt
    let prompt = if mode.uses_prompt_llm() {
        calls.prompt += 1;
        let messages = vec![
            ChatMessage::system(PROMPT_SYSTEM),
            ChatMessage::user(prompt_request_text(idiom, state.prompt(), state.edits())),
        ];
        let reply = complete_text(&*providers.prompt, messages, decoding.generation.clone())
            .map_err(|e| fail(Role::Prompt, e, None, None))?;
        let reply = reply.trim().to_string();
        if reply.is_empty() {
            idiom.surface.clone()
        } else {
            reply
        }
    } else {
        idiom.surface.clone()
    };

    // (b) image
    calls.t2im += 1;
    let artifact = generate_image(&*providers.t2im, &prompt, policy.resolution)
        .map_err(|e| fail(Role::T2im, e, Some(prompt.clone()), None))?;
    if (artifact.width, artifact.height) != (policy.resolution.width, policy.resolution.height) {
        warn_once_per_provider(providers.t2im.id(), || {
            format!(
                "provider {} returned {}x{} for a {} request",
                providers.t2im.id(),
                artifact.width,
                artifact.height,
                policy.resolution
            )
        });
    }
    let stored = store
        .store(&artifact.bytes)
        .map_err(|e| fail(Role::T2im, ProviderError::Transport(e.to_string()), Some(prompt.clone()), None))?;
    let image = ImageRef {
        content_hash: stored.content_hash,
        path: stored.rel_path,
    };

    // (c) recognition + top-1 extraction
    calls.infer += 1;
    let inferred_raw = infer_idiom_from_image(&*providers.infer, &artifact, INFER_INSTRUCTION)
        .map_err(|e| fail(Role::Infer, e, Some(prompt.clone()), Some(image.clone())))?;
    let inferred = extract_top1(&inferred_raw);

    // (d) judge
    let verdict = judge_equivalent(&inferred, idiom, &*providers.judge);
    if verdict.queried {
        calls.judge += 1;
    }

    // (e) control signal
    let signal = next_control_signal(verdict.matched, t, policy.max_steps);

    // (f) edits
    let edits_for_next = if !verdict.matched && mode.uses_updates() {
        calls.update += 1;
        let instruction = UPDATE_INSTRUCTION
            .replace("{idiom}", &idiom.surface)
            .replace("{inferred}", &inferred);
        let messages = vec![ChatMessage::user_with_image(
            instruction,
            artifact.bytes.clone(),
        )];
        let reply = complete_text(&*providers.update, messages, decoding.generation.clone());
        match (reply, signal) {
            (Ok(reply), ControlSignal::Continue) => parse_edit_list(&reply),
            (Ok(_), ControlSignal::Stop) => Vec::new(),
            (Err(e), ControlSignal::Continue) => {
                return Err(fail(Role::Update, e, Some(prompt), Some(image)));
            }
            (Err(e), ControlSignal::Stop) => {
                // the run is over either way; the lost suggestions only
                // affect diagnostics
                log::warn!("final update call failed for {:?}: {e}", idiom.surface);
                Vec::new()
            }
        }
    } else {
        Vec::new()
    };

    Ok(IterationRecord {
        t,
        prompt,
        image,
        inferred_raw,
        inferred,
        matched: verdict.matched,
        judge_parse_ok: verdict.parse_ok,
        signal,
        edits_for_next,
    })
}

/// Runs the loop for one idiom until STOP, capturing the full trajectory.
/// Provider failures end the run with `PROVIDER_FAILED` and the completed
/// iterations preserved; such runs count as unmatched downstream.
pub fn run_idiom(
    idiom: &Idiom,
    providers: &BoundProviders,
    policy: &RunPolicy,
    mode: RunMode,
    store: &ImageStore,
    decoding: &DecodingProfile,
) -> Result<RunRecord, EngineError> {
    let binding = providers.binding();
    let effective = RunPolicy {
        max_steps: mode.max_steps(policy.max_steps),
        ..policy.clone()
    };
    let _scope = RunScope::enter(derive_run_id(
        &idiom.canonical,
        &binding,
        mode,
        effective.seed,
    ));
    let started_at = chrono::Utc::now();
    let timer = Instant::now();
    let mut state = init_run_state(idiom.clone(), effective.clone())?;
    let mut calls = RoleCalls::default();
    let mut failure = None;

    loop {
        match step(&state, providers, &effective, mode, store, decoding, &mut calls) {
            Ok(record) => {
                let stop = record.signal == ControlSignal::Stop;
                state = append_iteration(state, record)?;
                if stop {
                    break;
                }
            }
            Err(step_error) => {
                failure = Some(step_error.to_string());
                break;
            }
        }
    }

    let matched = state.matched();
    let matched_at = state.matched_at();
    Ok(RunRecord {
        idiom: idiom.clone(),
        binding,
        policy: effective,
        mode,
        iterations: state.into_history(),
        matched,
        matched_at,
        wall_time_ms: timer.elapsed().as_millis() as u64,
        status: if failure.is_none() {
            RunStatus::Completed
        } else {
            RunStatus::ProviderFailed
        },
        failure,
        calls,
        decoding: decoding.clone(),
        judge_template_hash: judge_template_hash().to_string(),
        started_at,
        finished_at: chrono::Utc::now(),
    })
}
