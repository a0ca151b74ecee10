mod common;

use std::os::unix::fs::PermissionsExt;
use std::path::Path;
use std::time::{Duration, Instant};

use tachorn::encoder::{encode, EncodingConfig};
use tachorn::horn::to_smtlib;
use tachorn::solver::{run_solver, SolverConfig, SolverError, SolverStatus};

fn stub(dir: &Path, name: &str, body: &str) -> SolverConfig {
    let path = dir.join(name);
    std::fs::write(&path, format!("#!/bin/sh\n{body}\n")).unwrap();
    std::fs::set_permissions(&path, std::fs::Permissions::from_mode(0o755)).unwrap();
    SolverConfig::from_command_line(&path.to_string_lossy(), Duration::from_secs(5))
}

#[test]
fn stub_outcomes() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("sat", "echo sat", SolverStatus::Sat),
        ("unsat", "echo unsat", SolverStatus::Unsat),
        ("unknown", "echo unknown", SolverStatus::Unknown),
        ("garbled", "echo '(error \"line 1\")'", SolverStatus::Unknown),
        ("crash", "echo boom >&2; exit 3", SolverStatus::Crash { exit_code: Some(3), stderr: "boom".into() }),
    ];
    for (name, body, want) in cases {
        let cfg = stub(dir.path(), name, body);
        let r = run_solver("(check-sat)\n", &cfg).unwrap();
        assert_eq!(r.status, want, "{name}");
        assert!(r.model_text.is_none(), "{name}");
    }
}

#[test]
fn stub_timeout_respects_grace() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = stub(dir.path(), "slow", "sleep 30; echo sat");
    cfg.timeout = Duration::from_millis(500);
    let start = Instant::now();
    let r = run_solver("(check-sat)\n", &cfg).unwrap();
    assert_eq!(r.status, SolverStatus::Timeout);
    assert!(start.elapsed() < cfg.timeout + Duration::from_secs(2), "{:?}", start.elapsed());
}

#[test]
fn sat_answer_keeps_model_text() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = stub(dir.path(), "model", "echo sat; echo '(define-fun R ((x Int)) Bool true)'");
    cfg.get_model = true;
    let r = run_solver("(check-sat)\n", &cfg).unwrap();
    assert_eq!(r.status, SolverStatus::Sat);
    assert_eq!(r.model_text.as_deref(), Some("(define-fun R ((x Int)) Bool true)"));
}

#[test]
fn script_path_placeholder() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cat");
    std::fs::write(&path, "#!/bin/sh\nhead -n 1 \"$2\"\n").unwrap();
    std::fs::set_permissions(&path, std::fs::Permissions::from_mode(0o755)).unwrap();
    let cfg =
        SolverConfig::from_command_line(&format!("{} -x {{file}}", path.display()), Duration::from_secs(5));
    let r = run_solver("unsat\n", &cfg).unwrap();
    assert_eq!(r.status, SolverStatus::Unsat);
}

#[test]
fn empty_command() {
    let cfg = SolverConfig { command: vec![], ..SolverConfig::default() };
    assert!(matches!(run_solver("", &cfg), Err(SolverError::EmptyCommand)));
}

#[test]
fn real_solver_basics() {
    if !common::have_solver() {
        return;
    }
    let cfg = SolverConfig { timeout: Duration::from_secs(60), ..SolverConfig::default() };
    let empty = run_solver("(set-logic HORN)\n(check-sat)\n", &cfg).unwrap();
    assert_eq!(empty.status, SolverStatus::Sat);
    let contradiction = "(set-logic HORN)\n(assert (forall ((x Int)) (=> true false)))\n(check-sat)\n";
    assert_eq!(run_solver(contradiction, &cfg).unwrap().status, SolverStatus::Unsat);

    let mutex = common::load("mutex");
    let weak = encode(&mutex, &"{(1,0),(0,1)}".parse().unwrap(), EncodingConfig::default()).unwrap();
    let strong = encode(&mutex, &"(1,1)".parse().unwrap(), EncodingConfig::default()).unwrap();
    assert_eq!(run_solver(&to_smtlib(&weak), &cfg).unwrap().status, SolverStatus::Unsat);
    assert_eq!(run_solver(&to_smtlib(&strong), &cfg).unwrap().status, SolverStatus::Sat);
}
