//! Domain types and the pure control-signal state machine.
//!
//! Everything here is a value type: no I/O, no model calls. The iteration
//! loop's bookkeeping lives in [`RunState`], which only grows through
//! [`append_iteration`] so illegal trajectories cannot be represented.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matcher::canonicalize;
use crate::providers::RetryPolicy;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("idiom {surface:?} canonicalizes to the empty string")]
    EmptyCanonical { surface: String },
    #[error("iteration record t={got} does not follow state iteration {state}")]
    OutOfOrderIteration { state: u32, got: u32 },
    #[error("cannot append iteration {t}: the run already stopped")]
    AppendAfterStop { t: u32 },
    #[error("iteration {t} exceeds max_steps {max_steps}")]
    PastMaxSteps { t: u32, max_steps: u32 },
    #[error("invalid iteration record at t={t}: {reason}")]
    InvalidRecord { t: u32, reason: String },
    #[error("invalid run policy: {0}")]
    InvalidPolicy(String),
}

/// A target idiom with its canonical form and position in the corpus.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Idiom {
    /// The idiom as given, e.g. "fox in a henhouse".
    pub surface: String,
    /// Canonical form; always a fixed point of [`canonicalize`].
    pub canonical: String,
    /// Zero-based position in the corpus the idiom was drawn from.
    pub corpus_index: usize,
}

impl Idiom {
    /// Builds an idiom, rejecting input whose canonical form is empty.
    pub fn new(surface: impl Into<String>, corpus_index: usize) -> Result<Self, ModelError> {
        let surface = surface.into();
        let canonical = canonicalize(&surface);
        if canonical.is_empty() {
            return Err(ModelError::EmptyCanonical { surface });
        }
        Ok(Idiom {
            surface,
            canonical,
            corpus_index,
        })
    }
}

/// Width × height of generated images, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resolution {
    pub width: u32,
    pub height: u32,
}

impl Resolution {
    pub const DEFAULT: Resolution = Resolution {
        width: 1024,
        height: 1024,
    };

    pub fn new(width: u32, height: u32) -> Result<Self, ModelError> {
        if width == 0 || height == 0 {
            return Err(ModelError::InvalidPolicy(format!(
                "resolution components must be positive, got {width}x{height}"
            )));
        }
        Ok(Resolution { width, height })
    }
}

impl Default for Resolution {
    fn default() -> Self {
        Resolution::DEFAULT
    }
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

impl FromStr for Resolution {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (w, h) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| ModelError::InvalidPolicy(format!("expected WxH, got {s:?}")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<u32>()
                .map_err(|_| ModelError::InvalidPolicy(format!("bad resolution component {v:?}")))
        };
        Resolution::new(parse(w)?, parse(h)?)
    }
}

/// Per-run knobs: iteration cap, image size, retry behavior, RNG seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunPolicy {
    /// Hard cap on iterations; the control signal stops at `t >= max_steps`.
    pub max_steps: u32,
    pub resolution: Resolution,
    pub retry: RetryPolicy,
    pub seed: Option<u64>,
}

impl Default for RunPolicy {
    fn default() -> Self {
        RunPolicy {
            max_steps: 5,
            resolution: Resolution::DEFAULT,
            retry: RetryPolicy::default(),
            seed: None,
        }
    }
}

impl RunPolicy {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.max_steps == 0 {
            return Err(ModelError::InvalidPolicy("max_steps must be >= 1".into()));
        }
        if self.resolution.width == 0 || self.resolution.height == 0 {
            return Err(ModelError::InvalidPolicy(
                "resolution components must be positive".into(),
            ));
        }
        self.retry.validate().map_err(ModelError::InvalidPolicy)
    }
}

/// The judge's stop/continue decision for one iteration. STOP is absorbing:
/// once issued, a run accepts no further iterations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ControlSignal {
    #[serde(rename = "STOP")]
    Stop,
    #[serde(rename = "CONTINUE")]
    Continue,
}

impl fmt::Display for ControlSignal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ControlSignal::Stop => write!(f, "STOP"),
            ControlSignal::Continue => write!(f, "CONTINUE"),
        }
    }
}

/// Stop when the idiom was recognized or the iteration cap is reached;
/// continue otherwise. Pure and total.
pub fn next_control_signal(matched: bool, t: u32, max_steps: u32) -> ControlSignal {
    if matched || t >= max_steps {
        ControlSignal::Stop
    } else {
        ControlSignal::Continue
    }
}

/// Reference to a stored generated image: content hash plus store path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef {
    /// 64-hex-char SHA-256 of the image bytes.
    pub content_hash: String,
    /// Path relative to the image store root.
    pub path: String,
}

/// Everything one iteration produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// 1-based iteration number.
    pub t: u32,
    /// The prompt the image was generated from.
    pub prompt: String,
    pub image: ImageRef,
    /// The recognizer's full reply.
    pub inferred_raw: String,
    /// Top-1 extraction of the reply: first line, quotes and trailing period stripped.
    pub inferred: String,
    /// The judge's verdict for this iteration.
    pub matched: bool,
    /// False when the judge reply could not be read as true/false; the verdict
    /// then defaulted to unmatched.
    pub judge_parse_ok: bool,
    pub signal: ControlSignal,
    /// Edit suggestions feeding the next prompt; empty when the signal is STOP.
    pub edits_for_next: Vec<String>,
}

impl IterationRecord {
    /// Checks the record's internal invariants.
    pub fn validate(&self, max_steps: u32) -> Result<(), ModelError> {
        if self.t == 0 {
            return Err(ModelError::InvalidRecord {
                t: self.t,
                reason: "t must be >= 1".into(),
            });
        }
        if self.t > max_steps {
            return Err(ModelError::PastMaxSteps {
                t: self.t,
                max_steps,
            });
        }
        if self.matched && self.signal != ControlSignal::Stop {
            return Err(ModelError::InvalidRecord {
                t: self.t,
                reason: "matched iterations must carry a STOP signal".into(),
            });
        }
        if self.signal == ControlSignal::Stop && !self.edits_for_next.is_empty() {
            return Err(ModelError::InvalidRecord {
                t: self.t,
                reason: "STOP iterations must not carry edits".into(),
            });
        }
        Ok(())
    }
}

/// The loop's evolving state for one idiom: current prompt, pending edits,
/// and the full iteration history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub idiom: Idiom,
    pub policy: RunPolicy,
    prompt: String,
    edits: Vec<String>,
    iteration: u32,
    history: Vec<IterationRecord>,
}

impl RunState {
    /// Current prompt (the last CONTINUE iteration's prompt; empty at t=0).
    pub fn prompt(&self) -> &str {
        &self.prompt
    }

    /// Pending edit suggestions for the next prompt (empty at t=0).
    pub fn edits(&self) -> &[String] {
        &self.edits
    }

    pub fn iteration(&self) -> u32 {
        self.iteration
    }

    pub fn history(&self) -> &[IterationRecord] {
        &self.history
    }

    pub fn into_history(self) -> Vec<IterationRecord> {
        self.history
    }

    /// A run has stopped once any iteration carried a STOP signal.
    pub fn stopped(&self) -> bool {
        self.history
            .last()
            .is_some_and(|r| r.signal == ControlSignal::Stop)
    }

    pub fn matched(&self) -> bool {
        self.history.iter().any(|r| r.matched)
    }

    /// Iteration number at which the idiom was recognized, if it was.
    pub fn matched_at(&self) -> Option<u32> {
        self.history.iter().find(|r| r.matched).map(|r| r.t)
    }
}

/// Fresh state for one idiom: iteration 0, empty prompt, no edits, no history.
pub fn init_run_state(idiom: Idiom, policy: RunPolicy) -> Result<RunState, ModelError> {
    policy.validate()?;
    if idiom.canonical.is_empty() {
        return Err(ModelError::EmptyCanonical {
            surface: idiom.surface,
        });
    }
    Ok(RunState {
        idiom,
        policy,
        prompt: String::new(),
        edits: Vec::new(),
        iteration: 0,
        history: Vec::new(),
    })
}

/// Extends the state by one iteration record.
///
/// Rejects out-of-order records, records past `max_steps`, appends after a
/// STOP, and records violating their own invariants. On CONTINUE the state's
/// prompt and pending edits are replaced from the record.
pub fn append_iteration(state: RunState, record: IterationRecord) -> Result<RunState, ModelError> {
    if state.stopped() {
        return Err(ModelError::AppendAfterStop { t: record.t });
    }
    if record.t != state.iteration + 1 {
        return Err(ModelError::OutOfOrderIteration {
            state: state.iteration,
            got: record.t,
        });
    }
    record.validate(state.policy.max_steps)?;
    let mut next = state;
    next.iteration = record.t;
    if record.signal == ControlSignal::Continue {
        next.prompt = record.prompt.clone();
        next.edits = record.edits_for_next.clone();
    }
    next.history.push(record);
    Ok(next)
}
