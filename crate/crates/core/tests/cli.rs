use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_density-match"))
        .args(args)
        .output()
        .unwrap()
}

fn run_with(command: &str, cfg: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        command,
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    run(&args)
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("config.toml");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn pdf_writes_curves_on_padded_auto_grid() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_with("pdf", &config("example.toml"), dir.path(), &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = json(&dir.path().join("pdf_summary.json"));
    assert!((summary["grid_lower"].as_f64().unwrap() - 28.0).abs() < 1e-12);
    assert!((summary["grid_upper"].as_f64().unwrap() - 52.0).abs() < 1e-12);
    assert!((summary["derived_integral"].as_f64().unwrap() - 1.0).abs() < 1e-3);
    assert!(summary["kde"]["relative_l2_to_derived"].as_f64().unwrap() <= 0.05);
    for name in ["derived_pdf.csv", "kde_pdf.csv", "target_pdf.csv"] {
        let text = std::fs::read_to_string(dir.path().join(name)).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("node,value"));
        assert_eq!(lines.count(), 2000);
    }
    let d = std::fs::read_to_string(dir.path().join("sensitivity.csv")).unwrap();
    assert!(d.starts_with("node,ds_1\n"));
}

#[test]
fn outputs_are_reproducible_for_a_seed() {
    let (a, b, c) = (
        tempfile::tempdir().unwrap(),
        tempfile::tempdir().unwrap(),
        tempfile::tempdir().unwrap(),
    );
    for dir in [&a, &b] {
        assert!(run_with("pdf", &config("example.toml"), dir.path(), &["--seed", "11"])
            .status
            .success());
        assert!(run_with("match", &config("fan.toml"), dir.path(), &["--seed", "11"])
            .status
            .success());
    }
    assert!(run_with("pdf", &config("example.toml"), c.path(), &["--seed", "12"])
        .status
        .success());
    for name in [
        "derived_pdf.csv",
        "kde_pdf.csv",
        "pdf_summary.json",
        "trace.json",
        "convergence.csv",
        "final_pdf.csv",
    ] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        assert_eq!(x, std::fs::read(b.path().join(name)).unwrap(), "{name}");
    }
    let read = |d: &tempfile::TempDir| std::fs::read(d.path().join("kde_pdf.csv")).unwrap();
    assert_ne!(read(&a), read(&c));
}

#[test]
fn missing_uncertainty_block_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(config("example.toml")).unwrap();
    let text = text.replace("[uncertainty]\nfamily = \"beta\"\nalpha = 1.7\nbeta = 3.2\n", "");
    let cfg = write_config(dir.path(), &text);
    for command in ["pdf", "match", "verify"] {
        let out = run_with(command, &cfg, &dir.path().join("out"), &[]);
        assert_eq!(out.status.code(), Some(2));
        assert!(String::from_utf8_lossy(&out.stderr).contains("uncertainty"));
    }
}

#[test]
fn invalid_values_and_unknown_keys_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(config("example.toml")).unwrap();
    let cfg = write_config(
        dir.path(),
        &text.replace("n_points = 2000", "n_points = 2000\nspacing = 0.1"),
    );
    let out = run_with("pdf", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("spacing"));
    let cfg = write_config(dir.path(), &text.replace("alpha = 1.7", "alpha = 0.2"));
    let out = run_with("pdf", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("uncertainty"));
    let out = run_with("pdf", &dir.path().join("absent.toml"), &dir.path().join("out"), &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn match_recovers_a_derived_target() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_with("match", &config("recover.toml"), dir.path(), &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = json(&dir.path().join("match_summary.json"));
    assert!(summary["final_normalized_distance"].as_f64().unwrap() <= 1e-6);
    assert!((summary["final_design"][0].as_f64().unwrap() - 5.0).abs() < 1e-3);
    let trace = json(&dir.path().join("trace.json"));
    let records = trace["records"].as_array().unwrap();
    assert!(records.len() <= 40);
    assert_eq!(records[0]["normalized_distance"].as_f64(), Some(1.0));
    let csv = std::fs::read_to_string(dir.path().join("convergence.csv")).unwrap();
    assert_eq!(csv.lines().count(), records.len() + 1);
    for name in ["initial_pdf.csv", "final_pdf.csv", "target_pdf.csv"] {
        assert!(dir.path().join(name).exists());
    }
}

#[test]
fn budget_of_one_gives_one_call() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(config("recover.toml")).unwrap();
    let cfg = write_config(
        dir.path(),
        &text.replace("max_function_calls = 40", "max_function_calls = 1"),
    );
    assert!(run_with("match", &cfg, &dir.path().join("out"), &[]).status.success());
    let trace = json(&dir.path().join("out/trace.json"));
    assert_eq!(trace["records"].as_array().unwrap().len(), 1);
}

#[test]
fn fan_match_lowers_variance_with_both_matchers() {
    for name in ["fan.toml", "fan_kde.toml"] {
        let dir = tempfile::tempdir().unwrap();
        let out = run_with("match", &config(name), dir.path(), &[]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let s = json(&dir.path().join("match_summary.json"));
        assert!(
            s["final_variance"].as_f64().unwrap() < s["initial_variance"].as_f64().unwrap(),
            "{name}"
        );
    }
}

#[test]
fn verify_passes_on_example_and_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_with("verify", &config("example.toml"), dir.path(), &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&dir.path().join("verify_report.json"));
    assert_eq!(report["all_passed"], Value::Bool(true));
    assert_eq!(report["checks"].as_array().unwrap().len(), 9);
    let hist = std::fs::read_to_string(dir.path().join("histogram.csv")).unwrap();
    assert!(hist.starts_with("edge_lo,edge_hi,density\n"));
    assert_eq!(hist.lines().count(), 201);
}

#[test]
fn verify_fails_with_sign_flipped_shift() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_with("verify", &config("flipped.toml"), dir.path(), &[]);
    assert_eq!(out.status.code(), Some(1));
    let report = json(&dir.path().join("verify_report.json"));
    let check = report["checks"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["name"] == "monotonic_gradient_fd")
        .unwrap();
    assert_eq!(check["passed"], Value::Bool(false));
}

#[test]
fn over_tight_tolerance_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(config("example.toml")).unwrap();
    let cfg = write_config(
        dir.path(),
        &format!("{text}\n[verify]\nfd_tolerance = 1e-12\nmc_samples = 100000\n"),
    );
    let out = run_with("verify", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("sensitivity_fd") && stderr.contains("monotonic_gradient_fd"),
        "{stderr}"
    );
    let report = json(&dir.path().join("out/verify_report.json"));
    assert_eq!(report["all_passed"], Value::Bool(false));
}
