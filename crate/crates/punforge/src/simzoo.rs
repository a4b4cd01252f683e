//! Stochastic stand-ins for the model ensemble.
//!
//! A [`SuccessProfile`] gives the probability that the judge matches at
//! round k given no earlier match. Sampling a run draws those rounds in
//! order, so a trace sampled under a small cap extends unchanged under a
//! larger one; the closed-form [`expected_accuracy`] is the analytic oracle
//! the Monte Carlo side is checked against.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("profile {label:?} is empty")]
    EmptyProfile { label: String },
    #[error("profile {label:?} has probability {p} outside [0, 1] at round {round}")]
    ProbabilityOutOfRange { label: String, round: usize, p: f64 },
    #[error("rounds must be >= {min}, got {got}")]
    BadRounds { min: u32, got: u32 },
}

/// Per-round recognition probabilities `p_1..p_K`; rounds beyond `K` reuse
/// the last entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessProfile {
    pub label: String,
    pub per_round_p: Vec<f64>,
}

impl SuccessProfile {
    pub fn new(label: impl Into<String>, per_round_p: Vec<f64>) -> Result<Self, SimError> {
        let label = label.into();
        if per_round_p.is_empty() {
            return Err(SimError::EmptyProfile { label });
        }
        for (i, &p) in per_round_p.iter().enumerate() {
            if !(0.0..=1.0).contains(&p) || p.is_nan() {
                return Err(SimError::ProbabilityOutOfRange {
                    label,
                    round: i + 1,
                    p,
                });
            }
        }
        Ok(SuccessProfile { label, per_round_p })
    }

    /// Constant probability for `k` rounds.
    pub fn constant(p: f64, k: u32) -> Result<Self, SimError> {
        SuccessProfile::new(format!("constant p={p}"), vec![p; k.max(1) as usize])
    }

    /// Probability for 1-based round `k`, padding with the last entry.
    pub fn p_at(&self, k: u32) -> f64 {
        let idx = (k.max(1) as usize - 1).min(self.per_round_p.len() - 1);
        self.per_round_p[idx]
    }
}

/// Draws one run round-by-round; returns the first matching round, if any.
/// Deterministic under a fixed RNG state, and prefix-stable: the draw for
/// round k does not depend on `max_steps`.
pub fn sample_run(
    profile: &SuccessProfile,
    max_steps: u32,
    rng: &mut impl Rng,
) -> Option<u32> {
    (1..=max_steps).find(|&k| rng.gen::<f64>() < profile.p_at(k))
}

/// Probability of a match within `k` rounds: `1 − Π_{i=1..k} (1 − p_i)`.
pub fn expected_accuracy(profile: &SuccessProfile, k: u32) -> f64 {
    let mut survive = 1.0;
    for i in 1..=k.max(1) {
        survive *= 1.0 - profile.p_at(i);
    }
    1.0 - survive
}

/// Accuracy gained by allowing round `k` on top of `k − 1`:
/// `p_k · Π_{i<k} (1 − p_i)`. Requires `k >= 2`.
pub fn marginal_gain(profile: &SuccessProfile, k: u32) -> Result<f64, SimError> {
    if k < 2 {
        return Err(SimError::BadRounds { min: 2, got: k });
    }
    let mut survive = 1.0;
    for i in 1..k {
        survive *= 1.0 - profile.p_at(i);
    }
    Ok(profile.p_at(k) * survive)
}

/// Seed for one run, mixed from the global seed, the idiom, and a salt
/// (typically the provider pairing), so any cell of a sweep replays alone.
pub fn derive_run_seed(global_seed: u64, idiom_canonical: &str, salt: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(global_seed.to_le_bytes());
    hasher.update([0x1f]);
    hasher.update(idiom_canonical.as_bytes());
    hasher.update([0x1f]);
    hasher.update(salt.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Seeded generator for one run.
pub fn run_rng(global_seed: u64, idiom_canonical: &str, salt: &str) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(derive_run_seed(global_seed, idiom_canonical, salt))
}

/// Profile configuration consumed by the `sim` subcommand: named profiles,
/// plus an optional (mllm, llm) grid mapping pairs onto profile labels.
#[derive(Debug, Clone, Deserialize)]
pub struct ProfileConfig {
    pub profiles: BTreeMap<String, Vec<f64>>,
    #[serde(default)]
    pub grid: Option<GridConfig>,
}

/// Synthetic sweep layout: every (mllm, llm) pair runs under the profile
/// named for it, falling back to `default_profile`.
#[derive(Debug, Clone, Deserialize)]
pub struct GridConfig {
    pub mllms: Vec<String>,
    pub llms: Vec<String>,
    /// Keys are `"<mllm>/<llm>"`.
    #[serde(default)]
    pub pairs: BTreeMap<String, String>,
    #[serde(default)]
    pub default_profile: Option<String>,
}

impl ProfileConfig {
    pub fn profile(&self, label: &str) -> Result<SuccessProfile, String> {
        let ps = self
            .profiles
            .get(label)
            .ok_or_else(|| format!("profile {label:?} is not defined"))?;
        SuccessProfile::new(label, ps.clone()).map_err(|e| e.to_string())
    }

    /// Profile for one grid cell.
    pub fn pair_profile(&self, mllm: &str, llm: &str) -> Result<SuccessProfile, String> {
        let grid = self.grid.as_ref().ok_or("config has no grid section")?;
        let key = format!("{mllm}/{llm}");
        let label = grid
            .pairs
            .get(&key)
            .or(grid.default_profile.as_ref())
            .ok_or_else(|| format!("no profile for pair {key:?} and no default_profile"))?;
        self.profile(label)
    }
}
