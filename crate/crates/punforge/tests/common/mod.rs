//! Shared fixtures for integration tests: a minimal scripted HTTP server and
//! a random run-record generator.

#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use rand::Rng;

use punforge::engine::{DecodingProfile, RoleCalls, RunMode, RunRecord, RunStatus};
use punforge::model::{ControlSignal, Idiom, ImageRef, IterationRecord, Resolution, RunPolicy};
use punforge::providers::{content_hash, ProviderBinding, RetryPolicy};

/// One canned HTTP response.
#[derive(Clone)]
pub struct StubResponse {
    pub status: u16,
    pub body: String,
}

impl StubResponse {
    pub fn json(status: u16, body: impl Into<String>) -> Self {
        StubResponse {
            status,
            body: body.into(),
        }
    }
}

/// Single-threaded scripted HTTP server: each incoming request consumes the
/// next scripted response; request bodies are captured for assertions.
pub struct StubServer {
    pub endpoint: String,
    pub requests: Arc<Mutex<Vec<String>>>,
    handle: Option<JoinHandle<()>>,
}

impl StubServer {
    pub fn start(responses: Vec<StubResponse>) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind stub server");
        let addr = listener.local_addr().unwrap();
        let requests: Arc<Mutex<Vec<String>>> = Arc::new(Mutex::new(Vec::new()));
        let captured = Arc::clone(&requests);
        let handle = std::thread::spawn(move || {
            let mut script = responses.into_iter();
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { break };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 {
                    continue;
                }
                let mut content_length = 0usize;
                loop {
                    let mut header = String::new();
                    if reader.read_line(&mut header).unwrap_or(0) == 0 {
                        break;
                    }
                    let header = header.trim_end();
                    if header.is_empty() {
                        break;
                    }
                    if let Some(value) = header
                        .to_ascii_lowercase()
                        .strip_prefix("content-length:")
                        .map(str::trim)
                        .and_then(|v| v.parse::<usize>().ok())
                    {
                        content_length = value;
                    }
                }
                let mut body = vec![0u8; content_length];
                if content_length > 0 {
                    reader.read_exact(&mut body).ok();
                }
                captured
                    .lock()
                    .unwrap()
                    .push(String::from_utf8_lossy(&body).to_string());
                let Some(response) = script.next() else { break };
                let reason = match response.status {
                    200 => "OK",
                    429 => "Too Many Requests",
                    500 => "Internal Server Error",
                    _ => "Status",
                };
                let payload = format!(
                    "HTTP/1.1 {} {}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                    response.status,
                    reason,
                    response.body.len(),
                    response.body
                );
                stream.write_all(payload.as_bytes()).ok();
                stream.flush().ok();
                if script.len() == 0 {
                    break;
                }
            }
        });
        StubServer {
            endpoint: format!("http://{addr}/v1"),
            requests,
            handle: Some(handle),
        }
    }

    pub fn captured(&self) -> Vec<String> {
        self.requests.lock().unwrap().clone()
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        if let Some(handle) = self.handle.take() {
            // server thread ends once its script is exhausted
            let _ = handle;
        }
    }
}

/// Chat-completion JSON body with the given assistant reply.
pub fn chat_reply_json(text: &str) -> String {
    serde_json::json!({
        "choices": [{"message": {"role": "assistant", "content": text}}]
    })
    .to_string()
}

const WORDS: &[&str] = &[
    "fox", "henhouse", "beans", "bullet", "bucket", "moon", "storm", "teacup", "wolf", "sheep",
    "thunder", "bridge", "feather", "cap", "iceberg", "herring", "bandwagon", "molehill",
];

pub fn arbitrary_idiom(rng: &mut impl Rng, index: usize) -> Idiom {
    let len = rng.gen_range(2..5);
    let words: Vec<&str> = (0..len)
        .map(|_| WORDS[rng.gen_range(0..WORDS.len())])
        .collect();
    // suffix the index so corpus-level duplicates cannot occur
    Idiom::new(format!("{} {index}", words.join(" ")), index).unwrap()
}

/// A structurally valid random run record for persistence tests.
pub fn arbitrary_record(rng: &mut impl Rng, index: usize) -> RunRecord {
    let idiom = arbitrary_idiom(rng, index);
    let max_steps = rng.gen_range(1..=5u32);
    let matched_at = if rng.gen_bool(0.6) {
        Some(rng.gen_range(1..=max_steps))
    } else {
        None
    };
    let failed = matched_at.is_none() && rng.gen_bool(0.2);
    let rounds = matched_at.unwrap_or(if failed {
        rng.gen_range(0..=max_steps.saturating_sub(1))
    } else {
        max_steps
    });
    let mut iterations = Vec::new();
    let mut calls = RoleCalls::default();
    for t in 1..=rounds {
        let matched = matched_at == Some(t);
        let signal = if matched || t >= max_steps {
            ControlSignal::Stop
        } else {
            ControlSignal::Continue
        };
        let prompt = format!("prompt {t} for {}", idiom.surface);
        let bytes = prompt.as_bytes();
        let hash = content_hash(bytes);
        calls.prompt += 1;
        calls.t2im += 1;
        calls.infer += 1;
        if !matched {
            calls.judge += 1;
            calls.update += 1;
        }
        iterations.push(IterationRecord {
            t,
            prompt,
            image: ImageRef {
                path: format!("{}/{hash}.png", &hash[..2]),
                content_hash: hash,
            },
            inferred_raw: format!("\"guess {t}\"\nreasoning"),
            inferred: format!("guess {t}"),
            matched,
            judge_parse_ok: rng.gen_bool(0.95),
            signal,
            edits_for_next: if signal == ControlSignal::Continue {
                vec![format!("edit a {t}"), format!("edit b {t}")]
            } else {
                Vec::new()
            },
        });
    }
    let mode = match rng.gen_range(0..4) {
        0 => RunMode::Full,
        1 => RunMode::T2imOnly,
        2 => RunMode::OneShot,
        _ => RunMode::Updates(rng.gen_range(1..=4)),
    };
    RunRecord {
        idiom,
        binding: ProviderBinding {
            prompt_llm: format!("llm-{}", rng.gen_range(0..3)),
            t2im: "imagegen".into(),
            infer_mllm: format!("mllm-{}", rng.gen_range(0..3)),
            judge_llm: "judge".into(),
            update_mllm: "updater".into(),
        },
        policy: RunPolicy {
            max_steps,
            resolution: Resolution::DEFAULT,
            retry: RetryPolicy::default(),
            seed: rng.gen_bool(0.5).then(|| rng.gen()),
        },
        mode,
        iterations,
        matched: matched_at.is_some(),
        matched_at,
        wall_time_ms: rng.gen_range(1..10_000),
        status: if failed {
            RunStatus::ProviderFailed
        } else {
            RunStatus::Completed
        },
        failure: failed.then(|| "provider failure at t=1 stage=infer: HTTP 500".to_string()),
        calls,
        decoding: DecodingProfile::default(),
        judge_template_hash: punforge::matcher::judge_template_hash().to_string(),
        started_at: chrono::Utc::now(),
        finished_at: chrono::Utc::now(),
    }
}
