//! Running an external CHC solver on an SMT-LIB script.
//!
//! The script is written to a temporary file and the solver is started with
//! a command template in which `{file}` stands for the script path (the
//! path is appended when the template has no placeholder). The first line
//! of standard output decides the status.

use std::io::{Read, Write};
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Environment variable holding the default solver command.
pub const SOLVER_ENV: &str = "TACHORN_SOLVER";
/// Used when neither a command nor the environment variable is given.
pub const DEFAULT_SOLVER: &str = "z3 {file}";
const GRACE: Duration = Duration::from_millis(200);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Executable followed by its arguments.
    pub command: Vec<String>,
    pub timeout: Duration,
    pub working_dir: Option<PathBuf>,
    /// Append `(get-model)` so that a sat answer carries the relation
    /// definitions.
    pub get_model: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let cmd = std::env::var(SOLVER_ENV).unwrap_or_else(|_| DEFAULT_SOLVER.to_string());
        SolverConfig {
            command: split_command(&cmd),
            timeout: Duration::from_secs(60),
            working_dir: None,
            get_model: false,
        }
    }
}

impl SolverConfig {
    pub fn from_command_line(cmd: &str, timeout: Duration) -> Self {
        SolverConfig { command: split_command(cmd), timeout, ..SolverConfig::default() }
    }
}

/// Splits a command line on whitespace; single or double quotes group words.
pub fn split_command(cmd: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut quote: Option<char> = None;
    let mut has_word = false;
    for ch in cmd.chars() {
        match (quote, ch) {
            (Some(q), c) if c == q => quote = None,
            (Some(_), c) => cur.push(c),
            (None, '\'' | '"') => {
                quote = Some(ch);
                has_word = true;
            }
            (None, c) if c.is_whitespace() => {
                if has_word || !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                    has_word = false;
                }
            }
            (None, c) => cur.push(c),
        }
    }
    if has_word || !cur.is_empty() {
        out.push(cur);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum SolverStatus {
    Sat,
    Unsat,
    Unknown,
    Timeout,
    Crash { exit_code: Option<i32>, stderr: String },
}

impl SolverStatus {
    pub fn label(&self) -> &'static str {
        match self {
            SolverStatus::Sat => "sat",
            SolverStatus::Unsat => "unsat",
            SolverStatus::Unknown => "unknown",
            SolverStatus::Timeout => "timeout",
            SolverStatus::Crash { .. } => "crash",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverResult {
    #[serde(flatten)]
    pub status: SolverStatus,
    pub model_text: Option<String>,
    pub wall_time: Duration,
}

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("solver command is empty")]
    EmptyCommand,
    #[error("solver executable `{0}` not found")]
    SolverNotFound(String),
    #[error("could not start solver `{command}`: {source}")]
    SpawnFailure {
        command: String,
        #[source]
        source: std::io::Error,
    },
    #[error("could not write solver script: {0}")]
    Io(#[from] std::io::Error),
}

/// Runs the solver to completion, timeout, or cancellation. Cancellation is
/// reported as `Unknown`.
pub fn run_solver_with_cancel(
    script: &str,
    cfg: &SolverConfig,
    cancel: Option<&AtomicBool>,
) -> Result<SolverResult, SolverError> {
    let (program, template_args) = cfg.command.split_first().ok_or(SolverError::EmptyCommand)?;
    let mut file = tempfile::Builder::new().prefix("tachorn-").suffix(".smt2").tempfile()?;
    file.write_all(script.as_bytes())?;
    if cfg.get_model {
        file.write_all(b"(get-model)\n")?;
    }
    file.flush()?;
    let path = file.path().to_string_lossy().into_owned();
    let mut args: Vec<String> = template_args.iter().map(|a| a.replace("{file}", &path)).collect();
    if !cfg.command.iter().any(|a| a.contains("{file}")) {
        args.push(path.clone());
    }
    let mut cmd = Command::new(program);
    cmd.args(&args).stdin(Stdio::null()).stdout(Stdio::piped()).stderr(Stdio::piped());
    if let Some(dir) = &cfg.working_dir {
        cmd.current_dir(dir);
    }
    log::debug!("running solver: {} {}", program, args.join(" "));
    let start = Instant::now();
    let mut child = cmd.spawn().map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            SolverError::SolverNotFound(program.clone())
        } else {
            SolverError::SpawnFailure { command: program.clone(), source: e }
        }
    })?;
    let mut stdout = child.stdout.take().expect("piped stdout");
    let mut stderr = child.stderr.take().expect("piped stderr");
    let out_reader = std::thread::spawn(move || {
        let mut s = String::new();
        let _ = stdout.read_to_string(&mut s);
        s
    });
    let err_reader = std::thread::spawn(move || {
        let mut s = String::new();
        let _ = stderr.read_to_string(&mut s);
        s
    });
    let mut killed = None;
    let exit = loop {
        if let Some(status) = child.try_wait()? {
            break Some(status);
        }
        if start.elapsed() >= cfg.timeout {
            killed = Some(SolverStatus::Timeout);
        } else if cancel.is_some_and(|c| c.load(Ordering::Relaxed)) {
            killed = Some(SolverStatus::Unknown);
        }
        if killed.is_some() {
            let _ = child.kill();
            let _ = child.wait();
            break None;
        }
        std::thread::sleep(Duration::from_millis(5).min(GRACE));
    };
    let wall_time = start.elapsed();
    if let Some(status) = killed {
        // Descendants of the solver may still hold the pipes open, so the
        // reader threads are left to finish on their own.
        return Ok(SolverResult { status, model_text: None, wall_time });
    }
    let out = out_reader.join().unwrap_or_default();
    let err = err_reader.join().unwrap_or_default();
    if !err.trim().is_empty() {
        log::debug!("solver stderr: {}", err.trim());
    }
    drop(file);
    let exit = exit.expect("exited");
    let mut lines = out.lines().map(str::trim).skip_while(|l| l.is_empty());
    let first = lines.next().unwrap_or("");
    let status = match first {
        "sat" => SolverStatus::Sat,
        "unsat" => SolverStatus::Unsat,
        _ if !exit.success() => {
            SolverStatus::Crash { exit_code: exit.code(), stderr: err.trim().to_string() }
        }
        _ => SolverStatus::Unknown,
    };
    let model_text = match status {
        SolverStatus::Sat => {
            let rest: Vec<&str> = lines.collect();
            let rest = rest.join("\n");
            (!rest.trim().is_empty()).then_some(rest)
        }
        _ => None,
    };
    Ok(SolverResult { status, model_text, wall_time })
}

pub fn run_solver(script: &str, cfg: &SolverConfig) -> Result<SolverResult, SolverError> {
    run_solver_with_cancel(script, cfg, None)
}

/// Whether the configured executable can be started at all.
pub fn solver_available(cfg: &SolverConfig) -> bool {
    run_solver(
        "(set-logic HORN)\n(check-sat)\n",
        &SolverConfig { timeout: Duration::from_secs(10), get_model: false, ..cfg.clone() },
    )
    .is_ok_and(|r| r.status == SolverStatus::Sat)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_splitting() {
        assert_eq!(split_command("z3  -T:5 {file}"), vec!["z3", "-T:5", "{file}"]);
        assert_eq!(split_command("sh -c 'echo sat'"), vec!["sh", "-c", "echo sat"]);
        assert_eq!(split_command("a \"\" b"), vec!["a", "", "b"]);
    }

    #[test]
    fn missing_executable() {
        let cfg = SolverConfig::from_command_line("/nonexistent/solver", Duration::from_secs(1));
        assert!(matches!(run_solver("", &cfg), Err(SolverError::SolverNotFound(_))));
    }
}
