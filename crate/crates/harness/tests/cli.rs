use std::path::Path;
use std::process::{Command, Output};

fn mmfuse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mmfuse")).args(args).output().expect("spawn mmfuse")
}

fn code(args: &[&str]) -> i32 {
    mmfuse(args).status.code().expect("exit code")
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn filtered_check_passes_and_lists_only_scan_checks() {
    let out = mmfuse(&["check", "--filter", "ss1d"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().filter(|l| l.starts_with("PASS") || l.starts_with("FAIL")).collect();
    assert!(lines.len() >= 5);
    assert!(lines.iter().all(|l| l.starts_with("PASS ss1d.")), "{text}");
}

#[test]
fn usage_and_io_errors_exit_2() {
    assert_eq!(code(&["check", "--filter", "no-such-check"]), 2);
    assert_eq!(code(&["frobnicate"]), 2);
    assert_eq!(code(&["bench", "--op", "fft"]), 2);
    assert_eq!(code(&["bench", "--lengths", "64,32", "--repeats", "1"]), 2);
    assert_eq!(code(&["forward", "--size", "48x48"]), 2);
    assert_eq!(code(&["forward", "--size", "64x64", "--weights", "/nonexistent/w.mmdw"]), 2);
    assert_eq!(code(&["fixtures", "verify", "--dir", "/nonexistent/fixtures"]), 2);
}

#[test]
fn failing_fixture_verify_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&["fixtures", "generate", "--dir", arg(dir.path())]), 0);
    assert_eq!(code(&["fixtures", "verify", "--dir", arg(dir.path())]), 0);
    std::fs::remove_file(dir.path().join("ss1d_scan.fixture")).unwrap();
    let out = mmfuse(&["fixtures", "verify", "--dir", arg(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("FAIL ss1d_scan: fixture file missing"), "{text}");
    assert!(text.contains("PASS encoder_forward"), "{text}");
}

#[test]
fn forward_dump_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    for p in [&a, &b] {
        let args = ["forward", "--size", "64x64", "--seed", "7", "--preset", "small", "--dump", arg(p)];
        assert_eq!(code(&args), 0);
    }
    let (ta, tb) = (std::fs::read_to_string(&a).unwrap(), std::fs::read_to_string(&b).unwrap());
    assert_eq!(ta, tb);
    let v: serde_json::Value = serde_json::from_str(&ta).unwrap();
    assert_eq!(v["levels"]["p3"]["shape"], serde_json::json!([1, 16, 8, 8]));
    assert_eq!(v["levels"]["n5"]["finite"], v["levels"]["n5"]["count"]);
}

#[test]
fn saved_weights_reproduce_seeded_forward() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path().join("w.mmdw");
    let init = ["init-weights", "--out", arg(&w), "--seed", "3", "--preset", "small", "--active-adapters"];
    assert_eq!(code(&init), 0);
    let seeded = mmfuse(&["forward", "--size", "64x64", "--seed", "3", "--preset", "small", "--active-adapters"]);
    let loaded = mmfuse(&["forward", "--size", "64x64", "--seed", "3", "--weights", arg(&w)]);
    assert_eq!(seeded.status.code(), Some(0));
    assert_eq!(loaded.status.code(), Some(0));
    let levels = |o: &Output| serde_json::from_slice::<serde_json::Value>(&o.stdout).unwrap()["levels"].clone();
    assert_eq!(levels(&seeded), levels(&loaded));
}

#[test]
fn single_length_bench_has_one_row_per_op() {
    let out = mmfuse(&["bench", "--op", "both", "--lengths", "64", "--channels", "4", "--repeats", "1", "--json"]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 2);
    assert!(v["ratios"].as_array().unwrap().is_empty());
}
