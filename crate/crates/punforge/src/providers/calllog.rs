//! Per-run request/response log: one JSONL line per provider call, with
//! credentials never written. Workers execute a whole run on one thread, so
//! the active run id is carried in a thread-local scope.

use std::cell::RefCell;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

thread_local! {
    static CURRENT_RUN_ID: RefCell<Option<String>> = const { RefCell::new(None) };
}

/// Run id attached to log entries written from this thread, if any.
pub fn current_run_id() -> Option<String> {
    CURRENT_RUN_ID.with(|c| c.borrow().clone())
}

/// Guard that tags provider-call log entries with a run id while alive.
pub struct RunScope {
    previous: Option<String>,
}

impl RunScope {
    pub fn enter(run_id: impl Into<String>) -> Self {
        let previous = CURRENT_RUN_ID.with(|c| c.replace(Some(run_id.into())));
        RunScope { previous }
    }
}

impl Drop for RunScope {
    fn drop(&mut self) {
        let previous = self.previous.take();
        CURRENT_RUN_ID.with(|c| *c.borrow_mut() = previous);
    }
}

/// One provider call as mirrored to the log. The request appears as its
/// digest plus a text snippet; authorization headers are never captured.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogEntry {
    pub ts_utc: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub run_id: Option<String>,
    pub provider: String,
    /// "chat" or "image".
    pub kind: String,
    pub request_digest: String,
    pub request_excerpt: String,
    pub attempts: u32,
    pub latency_ms: u64,
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub response_excerpt: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

/// Append-only JSONL sink shared by all workers of one invocation.
pub struct RequestLog {
    path: PathBuf,
    writer: Mutex<BufWriter<File>>,
}

impl RequestLog {
    pub fn create(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(RequestLog {
            path,
            writer: Mutex::new(BufWriter::new(file)),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, entry: &LogEntry) {
        let Ok(line) = serde_json::to_string(entry) else {
            return;
        };
        let mut writer = self.writer.lock().unwrap();
        // log failures must never take down a run
        let _ = writeln!(writer, "{line}");
        let _ = writer.flush();
    }
}

/// Truncates long request/response text for the log.
pub(super) fn excerpt(text: &str) -> String {
    const LIMIT: usize = 400;
    if text.chars().count() <= LIMIT {
        text.to_string()
    } else {
        let cut: String = text.chars().take(LIMIT).collect();
        format!("{cut}…")
    }
}
