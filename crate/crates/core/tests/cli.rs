mod common;

use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};

use tachorn::cli::{
    run, RunReport, EXIT_DATA, EXIT_NO_INPUT, EXIT_SAFE, EXIT_UNKNOWN, EXIT_UNSAFE, EXIT_USAGE,
};
use tachorn::schema::Verdict;

fn tachorn(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("tachorn").chain(args.iter().copied());
    let code = run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn model(name: &str) -> String {
    common::model_path(name).display().to_string()
}

fn stub(dir: &Path, answer: &str) -> PathBuf {
    let path = dir.join("solver");
    std::fs::write(&path, format!("#!/bin/sh\n{answer}\n")).unwrap();
    std::fs::set_permissions(&path, std::fs::Permissions::from_mode(0o755)).unwrap();
    path
}

#[test]
fn missing_model_file() {
    let (code, _, err) = tachorn(&["print", "/nonexistent/model.tan"]);
    assert_eq!(code, EXIT_NO_INPUT);
    assert!(err.contains("cannot read"), "{err}");
}

#[test]
fn usage_errors() {
    assert_eq!(tachorn(&[]).0, EXIT_USAGE);
    assert_eq!(tachorn(&["frobnicate"]).0, EXIT_USAGE);
    assert_eq!(tachorn(&["encode", &model("train")]).0, EXIT_USAGE);
    assert_eq!(tachorn(&["encode", &model("train"), "--schema", "(1,"]).0, EXIT_USAGE);
    assert_eq!(tachorn(&["--timeout", "-1", "print", &model("train")]).0, EXIT_USAGE);
    assert_eq!(tachorn(&["oracle", &model("train"), "--counts", "1"]).0, EXIT_USAGE);
    assert_eq!(tachorn(&["--help"]).0, EXIT_SAFE);
}

#[test]
fn malformed_model_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.tan");
    std::fs::write(&path, "system broken {").unwrap();
    let (code, _, err) = tachorn(&["print", path.to_str().unwrap()]);
    assert_eq!(code, EXIT_DATA);
    assert!(err.contains("bad.tan"), "{err}");
}

#[test]
fn print_round_trips() {
    let (code, out, _) = tachorn(&["print", &model("train")]);
    assert_eq!(code, EXIT_SAFE);
    let reparsed = tachorn::dsl::parse_model(&out).unwrap();
    assert_eq!(reparsed, common::load("train"));
    let (code, reduced, _) = tachorn(&["print", "--reduced", &model("temperature")]);
    assert_eq!(code, EXIT_SAFE);
    assert!(reduced.contains("barrier bip"), "{reduced}");
}

#[test]
fn encode_summary_and_script() {
    let (code, summary, _) =
        tachorn(&["encode", &model("train"), "--schema", "(1,2)", "--json", "--emit-smt", "/dev/null"]);
    assert_eq!(code, EXIT_SAFE);
    let v: serde_json::Value = serde_json::from_str(&summary).unwrap();
    assert_eq!(v["schema"], "(1,2)");
    let families = v["families"].as_object().unwrap();
    let total: u64 = families.values().map(|n| n.as_u64().unwrap()).sum();
    assert_eq!(v["clauses"].as_u64().unwrap(), total);

    let (code, a, _) = tachorn(&["encode", &model("train"), "--schema", "(1,2)", "--emit-smt", "-"]);
    assert_eq!(code, EXIT_SAFE);
    assert!(a.lines().any(|l| l == "(set-logic HORN)"), "{a}");
    assert!(a.trim_end().ends_with("(check-sat)"));
    let (_, b, _) = tachorn(&["encode", &model("train"), "--schema", "(1,2)"]);
    assert_eq!(a, b);
}

#[test]
fn encode_writes_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mutex.smt2");
    let (code, out, _) =
        tachorn(&["encode", &model("mutex"), "--schema", "(1,1)", "--emit-smt", path.to_str().unwrap()]);
    assert_eq!(code, EXIT_SAFE);
    assert!(out.contains("clauses for (1,1)"), "{out}");
    assert!(std::fs::read_to_string(&path).unwrap().contains("(check-sat)"));
}

#[test]
fn oracle_exit_codes() {
    let (code, out, _) = tachorn(&["oracle", &model("train"), "--counts", "1,2"]);
    assert_eq!(code, EXIT_SAFE);
    assert!(out.starts_with("unreachable"), "{out}");
    let (code, out, _) = tachorn(&["oracle", &model("train_unsafe"), "--counts", "1,2"]);
    assert_eq!(code, EXIT_UNSAFE);
    assert!(out.contains("reachable ("), "{out}");
    let (code, out, _) =
        tachorn(&["oracle", &model("train"), "--counts", "1,3", "--max-states", "50", "--json"]);
    assert_eq!(code, EXIT_UNKNOWN);
    assert!(out.contains("aborted"), "{out}");
}

#[test]
fn check_with_stub_solver() {
    let dir = tempfile::tempdir().unwrap();
    let sat = stub(dir.path(), "echo sat");
    let (code, out, _) =
        tachorn(&["--solver-cmd", sat.to_str().unwrap(), "--json", "check", &model("mutex")]);
    assert_eq!(code, EXIT_SAFE);
    let report: RunReport = serde_json::from_str(&out).unwrap();
    assert!(matches!(report.verdict, Verdict::Safe { .. }));
    assert_eq!(report.history.len(), 1);
    let again: RunReport = serde_json::from_str(&serde_json::to_string(&report).unwrap()).unwrap();
    assert_eq!(again, report);
}

#[test]
fn unsafe_check_writes_trace() {
    let dir = tempfile::tempdir().unwrap();
    let unsat = stub(dir.path(), "echo unsat");
    let trace = dir.path().join("t.trace");
    let (code, out, _) = tachorn(&[
        "--solver-cmd",
        unsat.to_str().unwrap(),
        "check",
        &model("temperature_unsafe"),
        "--trace-out",
        trace.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_UNSAFE);
    assert!(out.contains("verdict unsafe at (1,1,1)"), "{out}");
    let text = std::fs::read_to_string(&trace).unwrap();
    assert!(text.lines().last().unwrap().starts_with("error "), "{text}");
}

#[test]
fn config_file() {
    let dir = tempfile::tempdir().unwrap();
    let unsat = stub(dir.path(), "echo unsat");
    let cfg = dir.path().join("tachorn.toml");
    std::fs::write(&cfg, format!("solver_cmd = \"{}\"\ncap = 3\n", unsat.display())).unwrap();
    let (code, out, _) = tachorn(&["--config", cfg.to_str().unwrap(), "check", &model("mutex")]);
    assert_eq!(code, EXIT_UNKNOWN);
    assert!(out.contains("(schema_cap_reached)"), "{out}");

    std::fs::write(&cfg, "colour = \"blue\"\n").unwrap();
    let (code, _, err) = tachorn(&["--config", cfg.to_str().unwrap(), "print", &model("mutex")]);
    assert_eq!(code, EXIT_DATA);
    assert!(err.contains("colour"), "{err}");
}

#[test]
fn binary_exit_code() {
    let status = std::process::Command::new(env!("CARGO_BIN_EXE_tachorn"))
        .args(["oracle", &model("train_unsafe"), "--counts", "1,2"])
        .stdout(std::process::Stdio::null())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(EXIT_UNSAFE));
}
