//! Live-shaped adapter behavior against a local scripted HTTP server:
//! request shape, retry/backoff with an injected clock, and image decoding.

mod common;

use std::sync::Arc;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;

use common::{chat_reply_json, StubResponse, StubServer};
use punforge::model::Resolution;
use punforge::providers::{
    complete_text, content_hash, generate_image, pixel_png_for, ChatMessage, DecodingParams,
    InstrumentedProvider, ManualClock, OpenAiProvider, ProviderError, RetryPolicy,
};

fn instrumented(server: &StubServer, clock: Arc<ManualClock>) -> InstrumentedProvider {
    let adapter = OpenAiProvider::new("stub", server.endpoint.clone(), "stub-model", None);
    InstrumentedProvider::new(Arc::new(adapter), RetryPolicy::default(), None, clock, None)
}

#[test]
fn chat_happy_path_sends_openai_shape() {
    let server = StubServer::start(vec![StubResponse::json(200, chat_reply_json("a reply"))]);
    let clock = Arc::new(ManualClock::new());
    let provider = instrumented(&server, clock);
    let reply = complete_text(
        &provider,
        vec![
            ChatMessage::system("sys"),
            ChatMessage::user("name this idiom"),
        ],
        DecodingParams::generation(),
    )
    .unwrap();
    assert_eq!(reply, "a reply");

    let captured = server.captured();
    assert_eq!(captured.len(), 1);
    let body: serde_json::Value = serde_json::from_str(&captured[0]).unwrap();
    assert_eq!(body["model"], "stub-model");
    assert_eq!(body["messages"][0]["role"], "system");
    assert_eq!(body["messages"][1]["content"], "name this idiom");
    assert!((body["temperature"].as_f64().unwrap() - 0.7).abs() < 1e-6);
}

#[test]
fn multimodal_messages_carry_data_urls() {
    let server = StubServer::start(vec![StubResponse::json(200, chat_reply_json("seen"))]);
    let clock = Arc::new(ManualClock::new());
    let provider = instrumented(&server, clock);
    let png = pixel_png_for("a scene");
    let reply = complete_text(
        &provider,
        vec![ChatMessage::user_with_image("describe", png.clone())],
        DecodingParams::generation(),
    )
    .unwrap();
    assert_eq!(reply, "seen");

    let captured = server.captured();
    let body: serde_json::Value = serde_json::from_str(&captured[0]).unwrap();
    let parts = body["messages"][0]["content"].as_array().unwrap();
    assert_eq!(parts[0]["type"], "image_url");
    let url = parts[0]["image_url"]["url"].as_str().unwrap();
    let encoded = url.strip_prefix("data:image/png;base64,").unwrap();
    assert_eq!(BASE64.decode(encoded).unwrap(), png);
    assert_eq!(parts[1]["type"], "text");
}

#[test]
fn rate_limited_then_ok_retries_once_with_one_second_backoff() {
    let server = StubServer::start(vec![
        StubResponse::json(429, "{\"error\": \"slow down\"}"),
        StubResponse::json(200, chat_reply_json("recovered")),
    ]);
    let clock = Arc::new(ManualClock::new());
    let provider = instrumented(&server, clock.clone());
    let reply = complete_text(
        &provider,
        vec![ChatMessage::user("hello")],
        DecodingParams::generation(),
    )
    .unwrap();
    assert_eq!(reply, "recovered");
    assert_eq!(provider.stats().last_attempts(), 2);
    assert_eq!(clock.sleeps(), vec![Duration::from_secs(1)]);
    assert_eq!(server.captured().len(), 2);
}

#[test]
fn three_server_errors_exhaust_retries() {
    let server = StubServer::start(vec![
        StubResponse::json(500, "{}"),
        StubResponse::json(500, "{}"),
        StubResponse::json(500, "{}"),
    ]);
    let clock = Arc::new(ManualClock::new());
    let provider = instrumented(&server, clock.clone());
    let err = complete_text(
        &provider,
        vec![ChatMessage::user("hello")],
        DecodingParams::generation(),
    )
    .unwrap_err();
    assert!(
        matches!(err, ProviderError::RetriesExhausted { attempts: 3, .. }),
        "{err}"
    );
    assert!(err.to_string().contains("retries exhausted"));
    assert_eq!(provider.stats().last_attempts(), 3);
    assert_eq!(
        clock.sleeps(),
        vec![Duration::from_secs(1), Duration::from_secs(2)]
    );
}

#[test]
fn non_2xx_body_is_surfaced() {
    let server = StubServer::start(vec![StubResponse::json(403, "{\"error\": \"forbidden\"}")]);
    let clock = Arc::new(ManualClock::new());
    let provider = instrumented(&server, clock);
    let err = complete_text(
        &provider,
        vec![ChatMessage::user("hello")],
        DecodingParams::generation(),
    )
    .unwrap_err();
    match err {
        ProviderError::Http { status, body } => {
            assert_eq!(status, 403);
            assert!(body.contains("forbidden"));
        }
        other => panic!("unexpected error {other}"),
    }
}

#[test]
fn empty_choices_is_an_error() {
    let server = StubServer::start(vec![StubResponse::json(200, "{\"choices\": []}")]);
    let clock = Arc::new(ManualClock::new());
    let provider = instrumented(&server, clock.clone());
    let err = complete_text(
        &provider,
        vec![ChatMessage::user("hello")],
        DecodingParams::generation(),
    )
    .unwrap_err();
    // empty choices is treated as transient; with three scripted responses
    // absent, the stub closes and the transport error ends the retry loop
    assert!(err.is_retryable() || matches!(err, ProviderError::RetriesExhausted { .. }));
}

#[test]
fn base64_image_payload_roundtrips_digest() {
    let png = pixel_png_for("fixture image");
    let body = serde_json::json!({
        "data": [{"b64_json": BASE64.encode(&png)}]
    })
    .to_string();
    let server = StubServer::start(vec![StubResponse::json(200, body)]);
    let clock = Arc::new(ManualClock::new());
    let provider = instrumented(&server, clock);
    let artifact = generate_image(&provider, "any prompt", Resolution::new(1, 1).unwrap()).unwrap();
    assert_eq!(artifact.bytes, png);
    assert_eq!(artifact.content_hash, content_hash(&png));
    assert_eq!((artifact.width, artifact.height), (1, 1));

    let captured = server.captured();
    let body: serde_json::Value = serde_json::from_str(&captured[0]).unwrap();
    assert_eq!(body["prompt"], "any prompt");
    assert_eq!(body["size"], "1x1");
}

#[test]
fn dimension_mismatch_is_an_error_for_live_adapters() {
    let png = pixel_png_for("one pixel");
    let body = serde_json::json!({
        "data": [{"b64_json": BASE64.encode(&png)}]
    })
    .to_string();
    let server = StubServer::start(vec![StubResponse::json(200, body)]);
    let clock = Arc::new(ManualClock::new());
    let provider = instrumented(&server, clock);
    let err =
        generate_image(&provider, "any prompt", Resolution::new(2, 2).unwrap()).unwrap_err();
    assert!(
        matches!(
            err,
            ProviderError::DimensionMismatch {
                want_w: 2,
                want_h: 2,
                got_w: 1,
                got_h: 1
            }
        ),
        "{err}"
    );
}

#[test]
fn infer_returns_the_raw_reply_verbatim() {
    use punforge::providers::{
        infer_idiom_from_image, ChatRequest, ImageArtifact, ScriptedProvider,
    };
    let png = pixel_png_for("butterflies scene");
    let artifact = ImageArtifact::new(png.clone(), "image/png", 1, 1);
    let instruction = punforge::engine::INFER_INSTRUCTION;
    let expected_request = ChatRequest {
        messages: vec![ChatMessage::user_with_image(instruction, png)],
        params: DecodingParams::generation(),
    };
    let raw_reply = "\"Butterflies in one's stomach\"\nBecause of the butterflies.";
    let provider = ScriptedProvider::new("mllm").with_chat_reply(&expected_request, raw_reply);
    let reply = infer_idiom_from_image(&provider, &artifact, instruction).unwrap();
    assert_eq!(reply, raw_reply, "the raw reply comes back untouched");
    assert_eq!(
        punforge::engine::extract_top1(&reply),
        "Butterflies in one's stomach"
    );
}

#[test]
fn empty_prompt_is_a_precondition_error_without_any_request() {
    let server = StubServer::start(vec![]);
    let clock = Arc::new(ManualClock::new());
    let provider = instrumented(&server, clock);
    let err = generate_image(&provider, "", Resolution::DEFAULT).unwrap_err();
    assert!(matches!(err, ProviderError::Precondition(_)));
    assert_eq!(provider.stats().image_calls(), 0);
}
