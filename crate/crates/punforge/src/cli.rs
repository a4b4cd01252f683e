//! Command implementations behind the `punforge` binary: run the pipeline
//! over a corpus, aggregate manifests into matrix and ablation reports,
//! drive simulations, and export dataset bundles.

use std::collections::VecDeque;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use thiserror::Error;

use crate::dataset::{
    export_bundle, load_manifest, ImageStore, ManifestAppender, ManifestEntry,
};
use crate::engine::{run_idiom, resume_key, DecodingProfile, RunMode, RunRecord, RunStatus};
use crate::evalbench::{accuracy_with, AblationTable, AccuracyMatrix, FailedRunPolicy};
use crate::matcher::canonicalize;
use crate::model::{Idiom, Resolution, RunPolicy};
use crate::providers::{
    MatchRule, ProviderBinding, ProviderRegistry, RequestLog, RetryPolicy, ScenarioProvider,
};
use crate::simzoo::{ProfileConfig, SuccessProfile};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Registry(#[from] crate::providers::RegistryError),
    #[error(transparent)]
    Dataset(#[from] crate::dataset::DatasetError),
    #[error(transparent)]
    Eval(#[from] crate::evalbench::EvalError),
    #[error(transparent)]
    Engine(#[from] crate::engine::EngineError),
    #[error("I/O error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> CliError {
    CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Reads a corpus file: UTF-8, one idiom per line, blank lines ignored.
/// Duplicate canonical forms are config errors.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Idiom>, CliError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut idioms = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (line_idx, line) in text.lines().enumerate() {
        let surface = line.trim();
        if surface.is_empty() {
            continue;
        }
        let idiom = Idiom::new(surface, idioms.len()).map_err(|e| {
            CliError::Config(format!("corpus line {}: {e}", line_idx + 1))
        })?;
        if !seen.insert(idiom.canonical.clone()) {
            return Err(CliError::Config(format!(
                "corpus line {}: duplicate idiom {:?} (canonical {:?})",
                line_idx + 1,
                surface,
                idiom.canonical
            )));
        }
        idioms.push(idiom);
    }
    if idioms.is_empty() {
        return Err(CliError::Config(format!(
            "corpus {} contains no idioms",
            path.display()
        )));
    }
    Ok(idioms)
}

/// Everything `run` needs, resolved from flags.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub corpus: PathBuf,
    pub registry: PathBuf,
    pub binding: ProviderBinding,
    pub mode: RunMode,
    pub max_steps: Option<u32>,
    pub resolution: Resolution,
    pub retry: RetryPolicy,
    pub seed: Option<u64>,
    pub workers: usize,
    pub out: PathBuf,
}

impl RunConfig {
    /// Effective policy after the mode/max-steps consistency check:
    /// single-round modes pin max_steps to 1, `updates=k` to k+1, and an
    /// explicit conflicting `--max-steps` is a config error.
    pub fn policy(&self) -> Result<RunPolicy, CliError> {
        let default = self.max_steps.unwrap_or(5);
        let implied = self.mode.max_steps(default);
        if let Some(explicit) = self.max_steps {
            if explicit != implied {
                return Err(CliError::Config(format!(
                    "mode {} implies max_steps={implied}, but --max-steps {explicit} was given",
                    self.mode
                )));
            }
        }
        let policy = RunPolicy {
            max_steps: implied,
            resolution: self.resolution,
            retry: self.retry.clone(),
            seed: self.seed,
        };
        policy
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(policy)
    }
}

/// What a `run`-shaped invocation did.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub total_idioms: usize,
    pub new_runs: usize,
    pub skipped_resume: usize,
    pub provider_failures: usize,
    /// Accuracy over every record of this (binding, mode), old and new.
    pub accuracy: f64,
}

/// Log file that mirrors every provider request/response of one invocation.
fn request_log_for(out: &Path) -> Option<Arc<RequestLog>> {
    let stem = out.file_stem()?.to_string_lossy().to_string();
    let path = out.with_file_name(format!("{stem}.requests.jsonl"));
    match RequestLog::create(&path) {
        Ok(log) => Some(Arc::new(log)),
        Err(err) => {
            log::warn!("cannot create request log {}: {err}", path.display());
            None
        }
    }
}

fn image_store_for(out: &Path) -> Result<ImageStore, CliError> {
    let dir = out.parent().unwrap_or(Path::new("."));
    Ok(ImageStore::open(dir.join("images"))?)
}

/// Executes the loop over a corpus with a worker pool, resuming past runs
/// already in the output manifest.
pub fn cmd_run(config: &RunConfig) -> Result<RunSummary, CliError> {
    let registry = ProviderRegistry::from_config_file(
        &config.registry,
        config.retry.clone(),
        request_log_for(&config.out),
    )?;
    run_with_registry(config, &registry)
}

/// `cmd_run` against an externally built registry (simulations, tests).
pub fn run_with_registry(
    config: &RunConfig,
    registry: &ProviderRegistry,
) -> Result<RunSummary, CliError> {
    let policy = config.policy()?;
    let idioms = load_corpus(&config.corpus)?;
    let providers = registry.bind(&config.binding)?;
    let store = image_store_for(&config.out)?;
    let appender = ManifestAppender::open(&config.out)?;
    let decoding = DecodingProfile::default();

    let mut pending = VecDeque::new();
    let mut skipped = 0usize;
    for idiom in &idioms {
        if appender.contains_key(&resume_key(&idiom.canonical, &config.binding, config.mode)) {
            skipped += 1;
        } else {
            pending.push_back(idiom.clone());
        }
    }

    let queue = Mutex::new(pending);
    let failures = Mutex::new(0usize);
    let new_runs = Mutex::new(0usize);
    let first_error: Mutex<Option<CliError>> = Mutex::new(None);
    let workers = config.workers.max(1);

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let Some(idiom) = queue.lock().unwrap().pop_front() else {
                    return;
                };
                let result = run_idiom(&idiom, &providers, &policy, config.mode, &store, &decoding);
                match result.map_err(CliError::from).and_then(|record| {
                    if record.status == RunStatus::ProviderFailed {
                        *failures.lock().unwrap() += 1;
                        log::warn!(
                            "run for {:?} failed: {}",
                            idiom.surface,
                            record.failure.as_deref().unwrap_or("unknown")
                        );
                    }
                    appender.append_run(&record)?;
                    *new_runs.lock().unwrap() += 1;
                    Ok(())
                }) {
                    Ok(()) => {}
                    Err(err) => {
                        let mut slot = first_error.lock().unwrap();
                        if slot.is_none() {
                            *slot = Some(err);
                        }
                        queue.lock().unwrap().clear();
                        return;
                    }
                }
            });
        }
    });

    if let Some(err) = first_error.into_inner().unwrap() {
        return Err(err);
    }

    // accuracy over every record of this (binding, mode), so a resumed rerun
    // reports the same number
    let entries = load_manifest(&config.out)?;
    let records: Vec<RunRecord> = entries
        .into_iter()
        .map(|e| e.record)
        .filter(|r| r.binding == config.binding && r.mode == config.mode)
        .collect();
    let accuracy = accuracy_with(&records, FailedRunPolicy::CountAsMiss)?;

    Ok(RunSummary {
        total_idioms: idioms.len(),
        new_runs: new_runs.into_inner().unwrap(),
        skipped_resume: skipped,
        provider_failures: failures.into_inner().unwrap(),
        accuracy,
    })
}

/// Matrix report sources: manifests, or a cells CSV rendered directly.
#[derive(Debug, Clone)]
pub struct MatrixConfig {
    pub manifests: Vec<PathBuf>,
    pub cells_csv: Option<PathBuf>,
    pub csv_out: Option<PathBuf>,
    pub exclude_failed: bool,
}

/// Builds the accuracy matrix report; returns the plain-text rendering.
pub fn cmd_matrix(config: &MatrixConfig) -> Result<String, CliError> {
    let policy = if config.exclude_failed {
        FailedRunPolicy::Exclude
    } else {
        FailedRunPolicy::CountAsMiss
    };
    let matrix = if let Some(csv_path) = &config.cells_csv {
        let text = std::fs::read_to_string(csv_path).map_err(|e| io_err(csv_path, e))?;
        AccuracyMatrix::from_csv(&text)?
    } else {
        if config.manifests.is_empty() {
            return Err(CliError::Config(
                "matrix needs at least one manifest or --cells-csv".into(),
            ));
        }
        let mut records = Vec::new();
        for path in &config.manifests {
            records.extend(load_manifest(path)?.into_iter().map(|e| e.record));
        }
        AccuracyMatrix::from_records(&records, policy)?
    };
    if let Some(csv_out) = &config.csv_out {
        std::fs::write(csv_out, matrix.to_csv()).map_err(|e| io_err(csv_out, e))?;
    }
    let mut report = format!("# accuracy matrix ({})\n", policy.describe());
    report.push_str(&matrix.to_text());
    Ok(report)
}

/// Ablation sources: a full ladder run, an existing manifest, or a cells CSV.
#[derive(Debug, Clone)]
pub struct AblateConfig {
    /// When set, run the six-config ladder before reporting.
    pub run: Option<RunConfig>,
    pub manifests: Vec<PathBuf>,
    pub cells_csv: Option<PathBuf>,
    pub csv_out: Option<PathBuf>,
    pub exclude_failed: bool,
}

/// Runs (optionally) and reports the ablation ladder.
pub fn cmd_ablate(config: &AblateConfig) -> Result<String, CliError> {
    let policy = if config.exclude_failed {
        FailedRunPolicy::Exclude
    } else {
        FailedRunPolicy::CountAsMiss
    };
    let table = if let Some(csv_path) = &config.cells_csv {
        let text = std::fs::read_to_string(csv_path).map_err(|e| io_err(csv_path, e))?;
        AblationTable::from_csv(&text)?
    } else {
        let mut manifests = config.manifests.clone();
        if let Some(run) = &config.run {
            let registry = ProviderRegistry::from_config_file(
                &run.registry,
                run.retry.clone(),
                request_log_for(&run.out),
            )?;
            for mode in RunMode::LADDER {
                let ladder_config = RunConfig {
                    mode,
                    max_steps: None,
                    ..run.clone()
                };
                let summary = run_with_registry(&ladder_config, &registry)?;
                log::info!("ablate {mode}: accuracy {:.1}", summary.accuracy);
            }
            manifests.push(run.out.clone());
        }
        if manifests.is_empty() {
            return Err(CliError::Config(
                "ablate needs a run config, a manifest, or --cells-csv".into(),
            ));
        }
        let mut records = Vec::new();
        for path in &manifests {
            records.extend(load_manifest(path)?.into_iter().map(|e| e.record));
        }
        records.retain(|r| RunMode::LADDER.contains(&r.mode));
        AblationTable::from_records(&records, policy)?
    };
    if let Some(csv_out) = &config.csv_out {
        std::fs::write(csv_out, table.to_csv()).map_err(|e| io_err(csv_out, e))?;
    }
    let mut report = format!("# ablation ladder ({})\n", policy.describe());
    report.push_str(&table.to_text());
    Ok(report)
}

/// Simulation source: a constant per-round probability or a profile file.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub profile_file: Option<PathBuf>,
    pub constant_p: Option<f64>,
    pub rounds: u32,
    /// Synthetic corpus size; mutually exclusive with `corpus`.
    pub count: Option<usize>,
    pub corpus: Option<PathBuf>,
    pub seed: u64,
    pub workers: usize,
    pub out: PathBuf,
    pub mode: RunMode,
}

fn synthetic_corpus(count: usize, dir: &Path) -> Result<PathBuf, CliError> {
    let path = dir.join("sim_corpus.txt");
    let mut text = String::new();
    for i in 1..=count {
        text.push_str(&format!("synthetic idiom {i:05}\n"));
    }
    std::fs::write(&path, text).map_err(|e| io_err(&path, e))?;
    Ok(path)
}

/// Registry for one simulated (mllm, llm) cell: the recognizer id carries the
/// stochastic rule salted by the pair, everything else is a neutral sibling
/// sharing the image table.
fn sim_registry(
    log: Option<Arc<RequestLog>>,
    seed: u64,
    mllm: &str,
    llm: &str,
    profile: &SuccessProfile,
) -> ProviderRegistry {
    let mut registry = ProviderRegistry::empty(RetryPolicy::default(), log);
    let base = ScenarioProvider::new("sim-t2im", MatchRule::never());
    registry.insert(Arc::new(base.sibling("sim-judge", MatchRule::never())));
    registry.insert(Arc::new(base.sibling("sim-update", MatchRule::never())));
    let rule = MatchRule::Stochastic {
        profile: profile.clone(),
        seed,
        salt: format!("{mllm}|{llm}"),
    };
    registry.insert(Arc::new(base.sibling(mllm, rule)));
    if llm != mllm && llm != "sim-t2im" {
        registry.insert(Arc::new(base.sibling(llm, MatchRule::never())));
    }
    registry.insert(Arc::new(base));
    registry
}

/// Generates manifests by driving the full engine loop with stochastic
/// providers. Returns the final summary line(s) for printing.
pub fn cmd_sim(config: &SimConfig) -> Result<String, CliError> {
    if config.rounds == 0 {
        return Err(CliError::Config("sim needs --rounds >= 1".into()));
    }
    let out_dir = config
        .out
        .parent()
        .unwrap_or(Path::new("."))
        .to_path_buf();
    std::fs::create_dir_all(&out_dir).map_err(|e| io_err(&out_dir, e))?;
    let corpus = match (&config.corpus, config.count) {
        (Some(path), None) => path.clone(),
        (None, Some(count)) => synthetic_corpus(count, &out_dir)?,
        (None, None) => return Err(CliError::Config("sim needs --count or --corpus".into())),
        (Some(_), Some(_)) => {
            return Err(CliError::Config(
                "--count and --corpus are mutually exclusive".into(),
            ))
        }
    };
    let log = request_log_for(&config.out);

    // (mllm, llm, profile) cells to simulate
    let mut pairs: Vec<(String, String, SuccessProfile)> = Vec::new();
    if let Some(p) = config.constant_p {
        if config.profile_file.is_some() {
            return Err(CliError::Config(
                "--p and --profiles are mutually exclusive".into(),
            ));
        }
        let profile = SuccessProfile::constant(p, config.rounds)
            .map_err(|e| CliError::Config(e.to_string()))?;
        pairs.push(("sim-mllm".into(), "sim-llm".into(), profile));
    } else if let Some(path) = &config.profile_file {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let profile_config: ProfileConfig =
            serde_json::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?;
        if let Some(grid) = &profile_config.grid {
            for mllm in &grid.mllms {
                for llm in &grid.llms {
                    let profile = profile_config
                        .pair_profile(mllm, llm)
                        .map_err(CliError::Config)?;
                    pairs.push((mllm.clone(), llm.clone(), profile));
                }
            }
        } else if let Some(label) = profile_config.profiles.keys().next().cloned() {
            let profile = profile_config.profile(&label).map_err(CliError::Config)?;
            pairs.push(("sim-mllm".into(), "sim-llm".into(), profile));
        } else {
            return Err(CliError::Config("profile file defines no profiles".into()));
        }
    } else {
        return Err(CliError::Config("sim needs --p or --profiles".into()));
    }

    let mut lines = Vec::new();
    for (mllm, llm, profile) in &pairs {
        let registry = sim_registry(log.clone(), config.seed, mllm, llm, profile);
        let mut binding = ProviderBinding::uniform("sim-t2im");
        binding.prompt_llm = llm.clone();
        binding.infer_mllm = mllm.clone();
        binding.judge_llm = "sim-judge".into();
        binding.update_mllm = "sim-update".into();
        let run_config = RunConfig {
            corpus: corpus.clone(),
            registry: PathBuf::new(),
            binding,
            mode: config.mode,
            max_steps: None,
            resolution: Resolution::DEFAULT,
            retry: RetryPolicy::default(),
            seed: Some(config.seed),
            workers: config.workers,
            out: config.out.clone(),
        };
        let run_config = RunConfig {
            max_steps: matches!(config.mode, RunMode::Full).then_some(config.rounds),
            ..run_config
        };
        let summary = run_with_registry(&run_config, &registry)?;
        lines.push(format!(
            "sim mllm={mllm} llm={llm}: accuracy {} over {} idioms ({} new, {} resumed)",
            crate::evalbench::fmt1(summary.accuracy),
            summary.total_idioms,
            summary.new_runs,
            summary.skipped_resume
        ));
    }
    Ok(lines.join("\n"))
}

/// Bundles a manifest plus every referenced image into a tar archive.
pub fn cmd_export(manifest: &Path, out: &Path) -> Result<String, CliError> {
    let store = image_store_for(manifest)?;
    let bundled = export_bundle(manifest, &store, out)?;
    Ok(format!(
        "exported {} and {bundled} image(s) to {}",
        manifest.display(),
        out.display()
    ))
}

/// Loads every manifest entry across files (helper for reporting paths).
pub fn load_all(manifests: &[PathBuf]) -> Result<Vec<ManifestEntry>, CliError> {
    let mut entries = Vec::new();
    for path in manifests {
        entries.extend(load_manifest(path)?);
    }
    Ok(entries)
}

/// Parses repeated `--binding role=id` flags into a full binding.
pub fn parse_binding(pairs: &[String]) -> Result<ProviderBinding, CliError> {
    let mut binding = ProviderBinding {
        prompt_llm: String::new(),
        t2im: String::new(),
        infer_mllm: String::new(),
        judge_llm: String::new(),
        update_mllm: String::new(),
    };
    for pair in pairs {
        let (role, id) = pair.split_once('=').ok_or_else(|| {
            CliError::Config(format!("--binding expects role=id, got {pair:?}"))
        })?;
        let role: crate::providers::Role = role
            .trim()
            .parse()
            .map_err(CliError::Config)?;
        binding.set(role, id.trim());
    }
    for role in crate::providers::Role::ALL {
        if binding.get(role).is_empty() {
            return Err(CliError::Config(format!(
                "role {role} is not bound; pass --binding {role}=<provider-id>"
            )));
        }
    }
    Ok(binding)
}

/// Canonical resume-key preview for one corpus entry (used by tests).
pub fn resume_key_for(
    surface: &str,
    binding: &ProviderBinding,
    mode: RunMode,
) -> String {
    resume_key(&canonicalize(surface), binding, mode)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binding_flag_parsing() {
        let binding = parse_binding(&[
            "prompt=claude".into(),
            "t2im=qwen-image".into(),
            "infer=gpt".into(),
            "judge=claude".into(),
            "update=gpt".into(),
        ])
        .unwrap();
        assert_eq!(binding.prompt_llm, "claude");
        assert_eq!(binding.t2im, "qwen-image");
        assert!(parse_binding(&["prompt=claude".into()]).is_err());
        assert!(parse_binding(&["bogus=x".into()]).is_err());
        assert!(parse_binding(&["promptclaude".into()]).is_err());
    }

    #[test]
    fn corpus_loader_rules() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.txt");
        std::fs::write(&path, "bite the bullet\n\n  spill the beans  \n").unwrap();
        let idioms = load_corpus(&path).unwrap();
        assert_eq!(idioms.len(), 2);
        assert_eq!(idioms[0].corpus_index, 0);
        assert_eq!(idioms[1].canonical, "spill the beans");

        std::fs::write(&path, "bite the bullet\nBite the bullet!\n").unwrap();
        assert!(matches!(load_corpus(&path), Err(CliError::Config(_))));

        std::fs::write(&path, "\n\n").unwrap();
        assert!(load_corpus(&path).is_err());
    }

    #[test]
    fn mode_max_steps_consistency() {
        let base = RunConfig {
            corpus: PathBuf::new(),
            registry: PathBuf::new(),
            binding: ProviderBinding::uniform("m"),
            mode: RunMode::T2imOnly,
            max_steps: Some(3),
            resolution: Resolution::DEFAULT,
            retry: RetryPolicy::default(),
            seed: None,
            workers: 1,
            out: PathBuf::new(),
        };
        assert!(base.policy().is_err());
        let ok = RunConfig {
            max_steps: Some(1),
            ..base.clone()
        };
        assert_eq!(ok.policy().unwrap().max_steps, 1);
        let updates = RunConfig {
            mode: RunMode::Updates(2),
            max_steps: None,
            ..base
        };
        assert_eq!(updates.policy().unwrap().max_steps, 3);
    }
}
