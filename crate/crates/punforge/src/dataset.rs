//! Durable persistence: a content-addressed image store and an append-only
//! JSONL manifest, one run per line, with resume support and tar export.

use std::collections::HashSet;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::RunRecord;
use crate::providers::content_hash;

/// Manifest schema version this build reads and writes.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("I/O error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest {path} line {line}: {source}")]
    MalformedLine {
        path: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("manifest {path} line {line}: unsupported schema_version {version} (this build reads {SCHEMA_VERSION})")]
    UnsupportedSchema {
        path: String,
        line: usize,
        version: u32,
    },
    #[error("manifest {path} line {line}: duplicate run_id {run_id}")]
    DuplicateRunId {
        path: String,
        line: usize,
        run_id: String,
    },
    #[error("run_id {run_id} already present in manifest")]
    RunIdExists { run_id: String },
    #[error("stored bytes for {hash} differ from the payload being stored")]
    HashCollision { hash: String },
}

fn io_err(path: &Path, source: std::io::Error) -> DatasetError {
    DatasetError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Outcome of storing an image: its digest and store-relative path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoredImage {
    pub content_hash: String,
    /// Relative to the store root, e.g. `e3/e3b0…855.png`.
    pub rel_path: String,
}

/// Content-addressed image files under `<root>/<first 2 hex>/<digest>.png`.
pub struct ImageStore {
    root: PathBuf,
}

impl ImageStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, DatasetError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| io_err(&root, e))?;
        Ok(ImageStore { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn rel_path_for(hash: &str) -> String {
        format!("{}/{hash}.png", &hash[..2])
    }

    /// Stores a payload, returning its digest and path. Idempotent: storing
    /// identical bytes again is a no-op; a path collision with different
    /// bytes is an error.
    pub fn store(&self, bytes: &[u8]) -> Result<StoredImage, DatasetError> {
        let hash = content_hash(bytes);
        let rel_path = Self::rel_path_for(&hash);
        let full = self.root.join(&rel_path);
        if full.exists() {
            let existing = fs::read(&full).map_err(|e| io_err(&full, e))?;
            if existing != bytes {
                return Err(DatasetError::HashCollision { hash });
            }
            return Ok(StoredImage {
                content_hash: hash,
                rel_path,
            });
        }
        let dir = full.parent().expect("store path has a parent");
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let tmp = full.with_extension(format!("tmp-{}", std::process::id()));
        fs::write(&tmp, bytes).map_err(|e| io_err(&tmp, e))?;
        fs::rename(&tmp, &full).map_err(|e| io_err(&full, e))?;
        Ok(StoredImage {
            content_hash: hash,
            rel_path,
        })
    }

    pub fn contains(&self, hash: &str) -> bool {
        self.root.join(Self::rel_path_for(hash)).exists()
    }

    pub fn path_for(&self, hash: &str) -> PathBuf {
        self.root.join(Self::rel_path_for(hash))
    }

    /// Number of files in the store.
    pub fn len(&self) -> usize {
        fn walk(dir: &Path, count: &mut usize) {
            if let Ok(entries) = fs::read_dir(dir) {
                for entry in entries.flatten() {
                    let path = entry.path();
                    if path.is_dir() {
                        walk(&path, count);
                    } else {
                        *count += 1;
                    }
                }
            }
        }
        let mut count = 0;
        walk(&self.root, &mut count);
        count
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One manifest line: schema version, run id, and the full run record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub schema_version: u32,
    pub run_id: String,
    pub record: RunRecord,
}

/// Serialized writer for one manifest file. Each append is a single flushed
/// and synced write, so readers never observe a partial line.
pub struct ManifestAppender {
    path: PathBuf,
    inner: Mutex<AppenderState>,
}

struct AppenderState {
    file: File,
    seen_ids: HashSet<String>,
    seen_keys: HashSet<String>,
}

impl ManifestAppender {
    /// Opens (creating if needed) a manifest for appending; existing lines
    /// are indexed for duplicate detection and resume.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, DatasetError> {
        let path = path.into();
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
            }
        }
        let mut seen_ids = HashSet::new();
        let mut seen_keys = HashSet::new();
        if path.exists() {
            for entry in load_manifest(&path)? {
                seen_ids.insert(entry.run_id);
                seen_keys.insert(entry.record.resume_key());
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| io_err(&path, e))?;
        Ok(ManifestAppender {
            path,
            inner: Mutex::new(AppenderState {
                file,
                seen_ids,
                seen_keys,
            }),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Appends one run as one JSONL line, atomically and durably.
    pub fn append_run(&self, record: &RunRecord) -> Result<(), DatasetError> {
        let entry = ManifestEntry {
            schema_version: SCHEMA_VERSION,
            run_id: record.run_id(),
            record: record.clone(),
        };
        let mut line = serde_json::to_string(&entry).expect("run records serialize");
        line.push('\n');
        let mut state = self.inner.lock().unwrap();
        if state.seen_ids.contains(&entry.run_id) {
            return Err(DatasetError::RunIdExists {
                run_id: entry.run_id,
            });
        }
        state
            .file
            .write_all(line.as_bytes())
            .map_err(|e| io_err(&self.path, e))?;
        state.file.flush().map_err(|e| io_err(&self.path, e))?;
        state.file.sync_data().map_err(|e| io_err(&self.path, e))?;
        state.seen_ids.insert(entry.run_id);
        state.seen_keys.insert(entry.record.resume_key());
        Ok(())
    }

    /// Whether a run with this resume key is already recorded.
    pub fn contains_key(&self, resume_key: &str) -> bool {
        self.inner.lock().unwrap().seen_keys.contains(resume_key)
    }

    pub fn recorded_runs(&self) -> usize {
        self.inner.lock().unwrap().seen_ids.len()
    }
}

/// Loads and validates a whole manifest. Malformed lines are reported with
/// their 1-based line number; unknown schema versions and duplicate run ids
/// are rejected.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>, DatasetError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry =
            serde_json::from_str(line).map_err(|source| DatasetError::MalformedLine {
                path: path.display().to_string(),
                line: idx + 1,
                source,
            })?;
        if entry.schema_version != SCHEMA_VERSION {
            return Err(DatasetError::UnsupportedSchema {
                path: path.display().to_string(),
                line: idx + 1,
                version: entry.schema_version,
            });
        }
        if !seen.insert(entry.run_id.clone()) {
            return Err(DatasetError::DuplicateRunId {
                path: path.display().to_string(),
                line: idx + 1,
                run_id: entry.run_id,
            });
        }
        entries.push(entry);
    }
    Ok(entries)
}

/// Resume keys of all runs already present.
pub fn resume_keys(entries: &[ManifestEntry]) -> HashSet<String> {
    entries.iter().map(|e| e.record.resume_key()).collect()
}

/// Image hashes referenced by COMPLETED records that are absent from the
/// store; returned as (run_id, hash) warnings rather than errors.
pub fn missing_images(entries: &[ManifestEntry], store: &ImageStore) -> Vec<(String, String)> {
    let mut missing = Vec::new();
    for entry in entries {
        for iteration in &entry.record.iterations {
            if !store.contains(&iteration.image.content_hash) {
                missing.push((entry.run_id.clone(), iteration.image.content_hash.clone()));
            }
        }
    }
    missing
}

/// Bundles a manifest and every image it references into a tar archive.
/// Layout inside the archive: `manifest.jsonl` + `images/<2hex>/<hash>.png`.
pub fn export_bundle(
    manifest_path: impl AsRef<Path>,
    store: &ImageStore,
    out_path: impl AsRef<Path>,
) -> Result<usize, DatasetError> {
    let manifest_path = manifest_path.as_ref();
    let out_path = out_path.as_ref();
    let entries = load_manifest(manifest_path)?;
    let out = File::create(out_path).map_err(|e| io_err(out_path, e))?;
    let mut builder = tar::Builder::new(out);
    builder
        .append_path_with_name(manifest_path, "manifest.jsonl")
        .map_err(|e| io_err(manifest_path, e))?;
    let mut hashes: Vec<String> = entries
        .iter()
        .flat_map(|e| e.record.iterations.iter())
        .map(|it| it.image.content_hash.clone())
        .collect();
    hashes.sort();
    hashes.dedup();
    let mut bundled = 0;
    for hash in hashes {
        let path = store.path_for(&hash);
        if !path.exists() {
            log::warn!("export: image {hash} missing from store, skipped");
            continue;
        }
        builder
            .append_path_with_name(&path, format!("images/{}", ImageStore::rel_path_for(&hash)))
            .map_err(|e| io_err(&path, e))?;
        bundled += 1;
    }
    builder
        .into_inner()
        .and_then(|mut f| f.flush().map(|_| ()))
        .map_err(|e| io_err(out_path, e))?;
    Ok(bundled)
}

/// Unpacks a bundle produced by [`export_bundle`] into a directory,
/// returning the path of the extracted manifest.
pub fn import_bundle(
    bundle_path: impl AsRef<Path>,
    dest_dir: impl AsRef<Path>,
) -> Result<PathBuf, DatasetError> {
    let bundle_path = bundle_path.as_ref();
    let dest = dest_dir.as_ref();
    fs::create_dir_all(dest).map_err(|e| io_err(dest, e))?;
    let file = File::open(bundle_path).map_err(|e| io_err(bundle_path, e))?;
    let mut archive = tar::Archive::new(file);
    archive.unpack(dest).map_err(|e| io_err(dest, e))?;
    Ok(dest.join("manifest.jsonl"))
}
