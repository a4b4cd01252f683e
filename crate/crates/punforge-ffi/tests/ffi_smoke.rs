//! Exercises the C ABI end to end from Rust, checks the generated header,
//! and syntax-checks it with a C compiler when one is available.

use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use punforge_ffi::*;

#[test]
fn header_is_generated_with_the_full_surface() {
    let header_path = concat!(env!("CARGO_MANIFEST_DIR"), "/include/punforge.h");
    let header = std::fs::read_to_string(header_path).expect("header generated at build time");
    for symbol in [
        "PunforgeStatus",
        "PunforgeProfile",
        "PunforgeManifest",
        "punforge_canonicalize",
        "punforge_string_free",
        "punforge_exact_equivalent",
        "punforge_next_control_signal",
        "punforge_parse_judge_verdict",
        "punforge_round1",
        "punforge_run_seed",
        "punforge_profile_new",
        "punforge_profile_free",
        "punforge_profile_expected_accuracy",
        "punforge_profile_marginal_gain",
        "punforge_profile_sample_run",
        "punforge_manifest_load",
        "punforge_manifest_free",
        "punforge_manifest_len",
        "punforge_manifest_accuracy",
        "punforge_last_error_message",
    ] {
        assert!(header.contains(symbol), "header lacks {symbol}");
    }
}

#[test]
fn header_compiles_as_c_when_a_compiler_exists() {
    let header_dir = concat!(env!("CARGO_MANIFEST_DIR"), "/include");
    let dir = tempfile::tempdir().unwrap();
    let main_c = dir.path().join("smoke.c");
    std::fs::write(
        &main_c,
        "#include \"punforge.h\"\nint main(void) { return punforge_next_control_signal(true, 1, 5) == 1 ? 0 : 1; }\n",
    )
    .unwrap();
    let result = Command::new("cc")
        .args(["-I", header_dir, "-fsyntax-only"])
        .arg(&main_c)
        .output();
    match result {
        Ok(output) => assert!(
            output.status.success(),
            "header failed C syntax check: {}",
            String::from_utf8_lossy(&output.stderr)
        ),
        Err(_) => eprintln!("no C compiler on PATH; header syntax check skipped"),
    }
}

#[test]
fn verdict_parsing_via_pointers() {
    let raw = CString::new("True, it matches.").unwrap();
    let mut matched = -1;
    let mut parse_ok = -1;
    let status =
        unsafe { punforge_parse_judge_verdict(raw.as_ptr(), &mut matched, &mut parse_ok) };
    assert_eq!(status, PunforgeStatus::Ok);
    assert_eq!((matched, parse_ok), (1, 1));

    let raw = CString::new("no idea").unwrap();
    unsafe { punforge_parse_judge_verdict(raw.as_ptr(), &mut matched, &mut parse_ok) };
    assert_eq!((matched, parse_ok), (0, 1), "'no' is a standalone token");

    let raw = CString::new("the scene is ambiguous").unwrap();
    unsafe { punforge_parse_judge_verdict(raw.as_ptr(), &mut matched, &mut parse_ok) };
    assert_eq!((matched, parse_ok), (0, 0));

    let status = unsafe { punforge_parse_judge_verdict(ptr::null(), &mut matched, &mut parse_ok) };
    assert_eq!(status, PunforgeStatus::NullArgument);
}

#[test]
fn equivalence_and_rounding() {
    let a = CString::new("Fox in a henhouse").unwrap();
    let b = CString::new("fox in a henhouse!").unwrap();
    assert_eq!(unsafe { punforge_exact_equivalent(a.as_ptr(), b.as_ptr()) }, 1);
    let c = CString::new("bite the dust").unwrap();
    assert_eq!(unsafe { punforge_exact_equivalent(a.as_ptr(), c.as_ptr()) }, 0);
    assert_eq!(unsafe { punforge_exact_equivalent(ptr::null(), c.as_ptr()) }, -1);
    assert!((punforge_round1(57.56) - 57.6).abs() < 1e-9);
}

#[test]
fn sampling_is_deterministic_per_seed() {
    let ps = [0.5f64; 5];
    let mut profile: *mut PunforgeProfile = ptr::null_mut();
    assert_eq!(
        unsafe { punforge_profile_new(ps.as_ptr(), ps.len(), &mut profile) },
        PunforgeStatus::Ok
    );
    let draw = |seed: u64| {
        let mut round = u32::MAX;
        let status = unsafe { punforge_profile_sample_run(profile, 5, seed, &mut round) };
        assert_eq!(status, PunforgeStatus::Ok);
        round
    };
    assert_eq!(draw(1), draw(1));
    let all: Vec<u32> = (0..64).map(draw).collect();
    assert!(all.iter().any(|&r| r > 0), "some seed matches within 5 rounds");
    unsafe { punforge_profile_free(profile) };
}

#[test]
fn manifest_accuracy_through_the_abi() {
    // build a tiny manifest via the Rust API, then read it through the C one
    let dir = tempfile::tempdir().unwrap();
    let registry = dir.path().join("registry.json");
    std::fs::write(
        &registry,
        r#"{"providers": {"mock": {"kind": "scenario", "roles": ["prompt", "t2im", "infer", "judge", "update"], "match_at": {"bite the bullet": 1}}}}"#,
    )
    .unwrap();
    let corpus = dir.path().join("corpus.txt");
    std::fs::write(&corpus, "bite the bullet\nspill the beans\n").unwrap();
    let out = dir.path().join("runs.jsonl");
    let config = punforge::cli::RunConfig {
        corpus,
        registry,
        binding: punforge::providers::ProviderBinding::uniform("mock"),
        mode: punforge::engine::RunMode::Full,
        max_steps: Some(2),
        resolution: punforge::model::Resolution::DEFAULT,
        retry: punforge::providers::RetryPolicy::default(),
        seed: None,
        workers: 1,
        out: out.clone(),
    };
    punforge::cli::cmd_run(&config).unwrap();

    let path = CString::new(out.to_str().unwrap()).unwrap();
    let mut manifest: *mut PunforgeManifest = ptr::null_mut();
    let status = unsafe { punforge_manifest_load(path.as_ptr(), &mut manifest) };
    assert_eq!(status, PunforgeStatus::Ok);
    assert_eq!(unsafe { punforge_manifest_len(manifest) }, 2);
    let mut accuracy = 0.0;
    let status = unsafe { punforge_manifest_accuracy(manifest, 0, &mut accuracy) };
    assert_eq!(status, PunforgeStatus::Ok);
    assert_eq!(accuracy, 50.0);
    unsafe { punforge_manifest_free(manifest) };

    // missing file surfaces as an I/O error with a readable message
    let bogus = CString::new("/definitely/not/here.jsonl").unwrap();
    let status = unsafe { punforge_manifest_load(bogus.as_ptr(), &mut manifest) };
    assert_eq!(status, PunforgeStatus::IoError);
    let message = punforge_last_error_message();
    assert!(!message.is_null());
    let text = unsafe { CStr::from_ptr(message) }.to_str().unwrap().to_string();
    unsafe { punforge_string_free(message) };
    assert!(text.contains("not/here"), "{text}");
}
