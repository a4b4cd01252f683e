//! CLI-level behavior: run with resume, matrix and ablation reports from the
//! reference fixtures, simulation manifests, export bundles, and the binary's
//! flag handling.

mod common;

use std::path::{Path, PathBuf};
use std::process::Command;

use punforge::cli::{
    cmd_ablate, cmd_export, cmd_matrix, cmd_run, cmd_sim, AblateConfig, MatrixConfig, RunConfig,
    SimConfig,
};
use punforge::dataset::{import_bundle, load_manifest};
use punforge::engine::RunMode;
use punforge::model::Resolution;
use punforge::providers::{ProviderBinding, RetryPolicy};

fn write_scenario_registry(dir: &Path) -> PathBuf {
    let path = dir.join("registry.json");
    std::fs::write(
        &path,
        serde_json::json!({
            "providers": {
                "mock": {
                    "kind": "scenario",
                    "roles": ["prompt", "t2im", "infer", "judge", "update"],
                    "match_at": {"fox in a henhouse": 3},
                    "default_round": 1
                }
            }
        })
        .to_string(),
    )
    .unwrap();
    path
}

fn write_corpus(dir: &Path, idioms: &[&str]) -> PathBuf {
    let path = dir.join("corpus.txt");
    std::fs::write(&path, idioms.join("\n")).unwrap();
    path
}

fn run_config(dir: &Path, mode: RunMode) -> RunConfig {
    RunConfig {
        corpus: dir.join("corpus.txt"),
        registry: dir.join("registry.json"),
        binding: ProviderBinding::uniform("mock"),
        mode,
        max_steps: None,
        resolution: Resolution::DEFAULT,
        retry: RetryPolicy::default(),
        seed: Some(7),
        workers: 2,
        out: dir.join("runs.jsonl"),
    }
}

#[test]
fn run_resume_skips_completed_work() {
    let dir = tempfile::tempdir().unwrap();
    write_scenario_registry(dir.path());
    write_corpus(
        dir.path(),
        &["bite the bullet", "spill the beans", "kick the bucket"],
    );
    let config = run_config(dir.path(), RunMode::Full);

    let first = cmd_run(&config).unwrap();
    assert_eq!(first.total_idioms, 3);
    assert_eq!(first.new_runs, 3);
    assert_eq!(first.skipped_resume, 0);
    assert_eq!(first.accuracy, 100.0, "default_round=1 matches everything");

    let second = cmd_run(&config).unwrap();
    assert_eq!(second.new_runs, 0, "rerun resumes past completed runs");
    assert_eq!(second.skipped_resume, 3);
    assert_eq!(second.accuracy, first.accuracy);

    let entries = load_manifest(&config.out).unwrap();
    assert_eq!(entries.len(), 3);
    // request log mirrors provider traffic
    let log_path = dir.path().join("runs.requests.jsonl");
    assert!(log_path.exists());
    let log_text = std::fs::read_to_string(log_path).unwrap();
    assert!(log_text.lines().count() > 0);
}

#[test]
fn updates_mode_bounds_iterations() {
    let dir = tempfile::tempdir().unwrap();
    let registry = dir.path().join("registry.json");
    std::fs::write(
        &registry,
        serde_json::json!({
            "providers": {
                "mock": {
                    "kind": "scenario",
                    "roles": ["prompt", "t2im", "infer", "judge", "update"]
                }
            }
        })
        .to_string(),
    )
    .unwrap();
    write_corpus(dir.path(), &["bite the bullet", "spill the beans"]);
    let config = run_config(dir.path(), RunMode::Updates(2));
    let summary = cmd_run(&config).unwrap();
    assert_eq!(summary.accuracy, 0.0);
    for entry in load_manifest(&config.out).unwrap() {
        assert!(entry.record.iterations.len() <= 3, "updates=2 caps at 3 rounds");
        assert_eq!(entry.record.policy.max_steps, 3);
    }
}

#[test]
fn matrix_report_from_reference_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let fixture = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/reference_matrix.csv");
    let csv_out = dir.path().join("matrix.csv");
    let report = cmd_matrix(&MatrixConfig {
        manifests: vec![],
        cells_csv: Some(fixture),
        csv_out: Some(csv_out.clone()),
        exclude_failed: false,
    })
    .unwrap();
    let bottom = report
        .lines()
        .rfind(|l| l.starts_with("average"))
        .expect("averages row");
    let values: Vec<&str> = bottom.split_whitespace().skip(1).collect();
    assert_eq!(
        values,
        vec!["55.3", "53.2", "57.6", "50.1", "48.6", "50.6", "51.3", "46.8", "47.5", "49.6"]
    );
    let csv_text = std::fs::read_to_string(csv_out).unwrap();
    assert!(csv_text
        .lines()
        .last()
        .unwrap()
        .starts_with("average,55.3,53.2,57.6"));
}

#[test]
fn single_cell_manifest_builds_single_cell_matrix() {
    let dir = tempfile::tempdir().unwrap();
    write_scenario_registry(dir.path());
    write_corpus(dir.path(), &["bite the bullet", "kick the bucket"]);
    let config = run_config(dir.path(), RunMode::Full);
    cmd_run(&config).unwrap();
    let report = cmd_matrix(&MatrixConfig {
        manifests: vec![config.out.clone()],
        cells_csv: None,
        csv_out: None,
        exclude_failed: false,
    })
    .unwrap();
    assert!(report.contains("mock"));
    assert!(report.contains("100.0"));
}

#[test]
fn ablation_report_from_reference_fixture() {
    let fixture =
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/reference_ablation.csv");
    let report = cmd_ablate(&AblateConfig {
        run: None,
        manifests: vec![],
        cells_csv: Some(fixture),
        csv_out: None,
        exclude_failed: false,
    })
    .unwrap();
    assert!(report.contains("67.6 (+15.3)"), "{report}");
    assert!(report.contains("58.1 (+0.1)"), "{report}");
    assert!(report.contains("61.8 (+0.0)"), "{report}");
}

#[test]
fn ablate_ladder_run_has_nonnegative_deltas() {
    let dir = tempfile::tempdir().unwrap();
    write_scenario_registry(dir.path());
    write_corpus(
        dir.path(),
        &[
            "fox in a henhouse",
            "bite the bullet",
            "spill the beans",
            "kick the bucket",
        ],
    );
    let report = cmd_ablate(&AblateConfig {
        run: Some(run_config(dir.path(), RunMode::Full)),
        manifests: vec![],
        cells_csv: None,
        csv_out: None,
        exclude_failed: false,
    })
    .unwrap();
    // fixed scenario traces extend across the ladder, so accuracy never drops
    assert!(!report.contains("(-"), "negative delta in:\n{report}");
}

#[test]
fn sim_generates_aggregatable_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim.jsonl");
    let summary = cmd_sim(&SimConfig {
        profile_file: None,
        constant_p: Some(0.5),
        rounds: 5,
        count: Some(1000),
        corpus: None,
        seed: 42,
        workers: 4,
        out: out.clone(),
        mode: RunMode::Full,
    })
    .unwrap();
    assert!(summary.contains("accuracy"), "{summary}");
    let entries = load_manifest(&out).unwrap();
    assert_eq!(entries.len(), 1000);
    let matched = entries.iter().filter(|e| e.record.matched).count();
    let accuracy = 100.0 * matched as f64 / entries.len() as f64;
    // binomial 3-sigma around 96.875 at n=1000 is about ±1.7pp
    assert!((accuracy - 96.9).abs() < 5.0, "accuracy {accuracy}");
}

#[test]
fn sim_grid_produces_full_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let profiles = dir.path().join("profiles.json");
    std::fs::write(
        &profiles,
        serde_json::json!({
            "profiles": {
                "strong": [0.9, 0.5],
                "weak": [0.2, 0.1]
            },
            "grid": {
                "mllms": ["m-a", "m-b"],
                "llms": ["l-a", "l-b"],
                "pairs": {"m-a/l-a": "strong"},
                "default_profile": "weak"
            }
        })
        .to_string(),
    )
    .unwrap();
    let out = dir.path().join("sim.jsonl");
    cmd_sim(&SimConfig {
        profile_file: Some(profiles),
        constant_p: None,
        rounds: 2,
        count: Some(50),
        corpus: None,
        seed: 1,
        workers: 2,
        out: out.clone(),
        mode: RunMode::Full,
    })
    .unwrap();
    let report = cmd_matrix(&MatrixConfig {
        manifests: vec![out],
        cells_csv: None,
        csv_out: None,
        exclude_failed: false,
    })
    .unwrap();
    assert!(report.contains("m-a"));
    assert!(report.contains("m-b"));
    let strong = report
        .lines()
        .find(|l| l.starts_with("m-a"))
        .unwrap()
        .to_string();
    let weak = report
        .lines()
        .find(|l| l.starts_with("m-b"))
        .unwrap()
        .to_string();
    let first_cell = |line: &str| -> f64 {
        line.split_whitespace().nth(1).unwrap().parse().unwrap()
    };
    assert!(
        first_cell(&strong) > first_cell(&weak),
        "strong profile should beat weak: {strong} vs {weak}"
    );
}

#[test]
fn export_then_reimport_is_lossless() {
    let dir = tempfile::tempdir().unwrap();
    write_scenario_registry(dir.path());
    write_corpus(dir.path(), &["bite the bullet", "spill the beans"]);
    let config = run_config(dir.path(), RunMode::Full);
    cmd_run(&config).unwrap();

    let bundle = dir.path().join("bundle.tar");
    cmd_export(&config.out, &bundle).unwrap();
    let unpacked = dir.path().join("unpacked");
    let manifest = import_bundle(&bundle, &unpacked).unwrap();
    let reimported = load_manifest(&manifest).unwrap();
    let original = load_manifest(&config.out).unwrap();
    assert_eq!(reimported, original);
}

#[test]
fn binary_help_lists_subcommands_and_rejects_unknown_flags() {
    let bin = env!("CARGO_BIN_EXE_punforge");
    let help = Command::new(bin).arg("--help").output().unwrap();
    assert!(help.status.success());
    let text = String::from_utf8_lossy(&help.stdout);
    for subcommand in ["run", "matrix", "ablate", "sim", "export"] {
        assert!(text.contains(subcommand), "--help must list {subcommand}");
    }

    let run_help = Command::new(bin).args(["run", "--help"]).output().unwrap();
    let text = String::from_utf8_lossy(&run_help.stdout);
    for flag in [
        "--corpus",
        "--registry",
        "--binding",
        "--mode",
        "--max-steps",
        "--workers",
        "--seed",
        "--out",
        "--resolution",
    ] {
        assert!(text.contains(flag), "run --help must list {flag}");
    }

    let unknown = Command::new(bin)
        .args(["run", "--bogus-flag"])
        .output()
        .unwrap();
    assert!(!unknown.status.success());
    assert_eq!(unknown.status.code(), Some(1), "config errors exit 1");

    let missing = Command::new(bin)
        .args(["matrix", "/nonexistent/manifest.jsonl"])
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn binary_run_prints_accuracy_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let registry = write_scenario_registry(dir.path());
    let corpus = write_corpus(dir.path(), &["bite the bullet"]);
    let out = dir.path().join("runs.jsonl");
    let bin = env!("CARGO_BIN_EXE_punforge");
    let output = Command::new(bin)
        .args([
            "run",
            "--corpus",
            corpus.to_str().unwrap(),
            "--registry",
            registry.to_str().unwrap(),
            "--binding",
            "prompt=mock",
            "--binding",
            "t2im=mock",
            "--binding",
            "infer=mock",
            "--binding",
            "judge=mock",
            "--binding",
            "update=mock",
            "--out",
            out.to_str().unwrap(),
            "--workers",
            "1",
        ])
        .output()
        .unwrap();
    assert!(output.status.success(), "{output:?}");
    let text = String::from_utf8_lossy(&output.stdout);
    assert!(text.contains("accuracy: 100.0"), "{text}");
}
