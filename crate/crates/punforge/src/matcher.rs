//! Idiom canonicalization and the semantic-equivalence verdict.
//!
//! Matching is two-tier: a deterministic canonical string comparison first,
//! and only when that fails, a one-word true/false question to a judge model.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

use crate::model::Idiom;
use crate::providers::{complete_text, ChatMessage, DecodingParams, Provider};

/// Prompt sent to the judge model. Two slots: `{inferred}` and `{target}`.
pub const JUDGE_TEMPLATE: &str = include_str!("../assets/judge_template.txt");

/// Line the judge template ends with; mocks key on it to recognize judge calls.
pub const JUDGE_MARKER: &str = "Answer with exactly one word on the first line: true or false.";

/// Hex SHA-256 of the judge template, recorded in every manifest line so a
/// released dataset pins the exact question its verdicts answered.
pub fn judge_template_hash() -> &'static str {
    static HASH: OnceLock<String> = OnceLock::new();
    HASH.get_or_init(|| hex::encode(Sha256::digest(JUDGE_TEMPLATE.as_bytes())))
}

const APOSTROPHES: [char; 3] = ['\'', '\u{2019}', '\u{02BC}'];

/// Canonical form of an idiom string: NFC, lowercase, punctuation stripped
/// (internal apostrophes survive), whitespace collapsed, trimmed.
///
/// Idempotent: `canonicalize(canonicalize(s)) == canonicalize(s)`. May return
/// an empty string (all-punctuation input).
pub fn canonicalize(input: &str) -> String {
    let lowered: String = input
        .nfc()
        .flat_map(char::to_lowercase)
        .collect::<String>()
        .nfc()
        .collect();
    let chars: Vec<char> = lowered.chars().collect();
    let mut out = String::with_capacity(lowered.len());
    for (i, &c) in chars.iter().enumerate() {
        if c.is_alphanumeric() {
            out.push(c);
        } else if APOSTROPHES.contains(&c) {
            let internal = i > 0
                && chars[i - 1].is_alphanumeric()
                && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric());
            out.push(if internal { '\'' } else { ' ' });
        } else if is_combining_mark(c) {
            // bare marks (no precomposed form survived NFC) are dropped, not
            // turned into separators
        } else {
            out.push(' ');
        }
    }
    // re-compose: dropping marks can leave sequences NFC would now combine
    out.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .nfc()
        .collect()
}

/// True when both strings canonicalize to the same form.
pub fn exact_equivalent(a: &str, b: &str) -> bool {
    canonicalize(a) == canonicalize(b)
}

/// Outcome of the equivalence check for one inferred string.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    /// The boolean the control signal consumes.
    pub matched: bool,
    /// Judge's full reply, or the error text when the call failed. Empty when
    /// the verdict was decided without a judge call.
    pub raw: String,
    /// False when the reply (or error) could not be read as true/false; such
    /// verdicts count as unmatched but stay flagged for audit.
    pub parse_ok: bool,
    /// Whether a judge model was actually consulted.
    pub queried: bool,
}

impl Verdict {
    fn without_judge(matched: bool) -> Self {
        Verdict {
            matched,
            raw: String::new(),
            parse_ok: true,
            queried: false,
        }
    }
}

/// Scan the first line for a standalone true/yes or false/no token.
///
/// Returns `(matched, parse_ok)`; anything unreadable is `(false, false)`.
pub fn parse_judge_verdict(raw: &str) -> (bool, bool) {
    let first_line = raw.lines().next().unwrap_or("");
    for token in first_line.split(|c: char| !c.is_alphanumeric()) {
        match token.to_lowercase().as_str() {
            "true" | "yes" => return (true, true),
            "false" | "no" => return (false, true),
            _ => {}
        }
    }
    (false, false)
}

/// Decide whether `inferred` names the target idiom.
///
/// Short-circuits: an empty inferred string is unmatched with no model call,
/// and a canonical-form match is a match with no model call. Only genuinely
/// ambiguous pairs reach the judge. Judge failures come back as unmatched
/// with `parse_ok = false` rather than aborting the run.
pub fn judge_equivalent(inferred: &str, target: &Idiom, judge: &dyn Provider) -> Verdict {
    if inferred.trim().is_empty() {
        return Verdict::without_judge(false);
    }
    if exact_equivalent(inferred, &target.surface) {
        return Verdict::without_judge(true);
    }
    let question = JUDGE_TEMPLATE
        .replace("{inferred}", inferred)
        .replace("{target}", &target.surface);
    match complete_text(
        judge,
        vec![ChatMessage::user(question)],
        DecodingParams::judge(),
    ) {
        Ok(reply) => {
            let (matched, parse_ok) = parse_judge_verdict(&reply);
            Verdict {
                matched,
                raw: reply,
                parse_ok,
                queried: true,
            }
        }
        Err(err) => {
            log::warn!(
                "judge call failed for inferred={inferred:?} target={:?}: {err}",
                target.surface
            );
            Verdict {
                matched: false,
                raw: err.to_string(),
                parse_ok: false,
                queried: true,
            }
        }
    }
}
