//! Judge behavior with scripted providers: short-circuits, verdict parsing,
//! and error handling.

use std::sync::Arc;

use punforge::matcher::{judge_equivalent, JUDGE_TEMPLATE};
use punforge::model::Idiom;
use punforge::providers::{
    BoundProviders, ChatMessage, ChatRequest, DecodingParams, ProviderError, ScriptedProvider,
    SequenceProvider,
};

fn judge_request(inferred: &str, target: &str) -> ChatRequest {
    let question = JUDGE_TEMPLATE
        .replace("{inferred}", inferred)
        .replace("{target}", target);
    ChatRequest {
        messages: vec![ChatMessage::user(question)],
        params: DecodingParams::judge(),
    }
}

#[test]
fn exact_match_short_circuits_without_a_call() {
    let judge = BoundProviders::uniform(Arc::new(ScriptedProvider::new("judge")));
    let target = Idiom::new("fox in a henhouse", 0).unwrap();
    let verdict = judge_equivalent("fox in a henhouse", &target, &*judge.judge);
    assert!(verdict.matched);
    assert!(verdict.parse_ok);
    assert!(!verdict.queried);
    assert_eq!(judge.judge.stats().chat_calls(), 0);
}

#[test]
fn empty_inferred_short_circuits_to_false() {
    let judge = BoundProviders::uniform(Arc::new(ScriptedProvider::new("judge")));
    let target = Idiom::new("fox in a henhouse", 0).unwrap();
    let verdict = judge_equivalent("   ", &target, &*judge.judge);
    assert!(!verdict.matched);
    assert!(!verdict.queried);
    assert_eq!(judge.judge.stats().chat_calls(), 0);
}

#[test]
fn semantic_match_accepted_when_judge_says_true() {
    let inferred = "the fox guarding the henhouse";
    let target = Idiom::new("fox in a henhouse", 0).unwrap();
    let scripted = ScriptedProvider::new("judge")
        .with_chat_reply(&judge_request(inferred, &target.surface), "true");
    let judge = BoundProviders::uniform(Arc::new(scripted));
    let verdict = judge_equivalent(inferred, &target, &*judge.judge);
    assert!(verdict.matched);
    assert!(verdict.parse_ok);
    assert!(verdict.queried);
    assert_eq!(judge.judge.stats().chat_calls(), 1);
}

#[test]
fn unparseable_reply_counts_as_unmatched_but_flagged() {
    let scripted =
        ScriptedProvider::new("judge").with_chat_default("The image shows a fox, nice!");
    let judge = BoundProviders::uniform(Arc::new(scripted));
    let target = Idiom::new("fox in a henhouse", 0).unwrap();
    let verdict = judge_equivalent("a fox at a farm", &target, &*judge.judge);
    assert!(!verdict.matched);
    assert!(!verdict.parse_ok, "conservative fallback must stay flagged");
    assert!(verdict.queried);
}

#[test]
fn provider_error_becomes_flagged_unmatched_verdict() {
    let failing = SequenceProvider::new(
        "judge",
        vec![Err(ProviderError::Http {
            status: 400,
            body: "bad request".into(),
        })],
    );
    let judge = BoundProviders::uniform(Arc::new(failing));
    let target = Idiom::new("fox in a henhouse", 0).unwrap();
    let verdict = judge_equivalent("a farm scene", &target, &*judge.judge);
    assert!(!verdict.matched);
    assert!(!verdict.parse_ok);
    assert!(verdict.raw.contains("HTTP 400"), "{}", verdict.raw);
}

#[test]
fn reflexivity_over_the_shipped_corpus() {
    let corpus = include_str!("../data/idioms.txt");
    let mut count = 0;
    for line in corpus.lines().filter(|l| !l.trim().is_empty()) {
        assert!(
            punforge::matcher::exact_equivalent(line, line),
            "reflexivity failed for {line:?}"
        );
        let canonical = punforge::matcher::canonicalize(line);
        assert!(!canonical.is_empty(), "corpus idiom {line:?} canonicalizes to empty");
        assert_eq!(
            punforge::matcher::canonicalize(&canonical),
            canonical,
            "canonicalize not idempotent for {line:?}"
        );
        count += 1;
    }
    assert!(count >= 100, "shipped corpus holds at least 100 idioms");
}
