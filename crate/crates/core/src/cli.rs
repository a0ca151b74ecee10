//! Command-line front end. The `tachorn` binary is a thin wrapper around
//! [`run`], which keeps the whole command surface testable in-process.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::dsl::{parse_model_named, print_model};
use crate::encoder::{self, bip_to_barrier, BodyLiterals, EncodingConfig, ProcessIds, SymmetryGenerators};
use crate::horn::to_smtlib;
use crate::model::{validate_model, SystemModel, TimeModel};
use crate::oracle::{explore, Bounds, ExploreOutcome};
use crate::schema::{check, Attempt, CheckConfig, CheckError, InvariantSchema, Verdict};
use crate::solver::{split_command, SolverConfig, SolverError, SOLVER_ENV};

pub const EXIT_SAFE: i32 = 0;
pub const EXIT_UNSAFE: i32 = 1;
pub const EXIT_UNKNOWN: i32 = 2;
pub const EXIT_USAGE: i32 = 64;
pub const EXIT_DATA: i32 = 65;
pub const EXIT_NO_INPUT: i32 = 66;
pub const EXIT_UNAVAILABLE: i32 = 69;
pub const EXIT_SOFTWARE: i32 = 70;
pub const EXIT_CANT_CREATE: i32 = 73;

#[derive(Debug, Parser)]
#[command(name = "tachorn", version, about = "Verify networks of timed processes with Horn clauses")]
struct Cli {
    #[command(flatten)]
    opts: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalOpts {
    /// Solver command; `{file}` is replaced by the script path.
    #[arg(long, global = true)]
    solver_cmd: Option<String>,
    /// Per-query solver timeout in seconds.
    #[arg(long, global = true)]
    timeout: Option<f64>,
    /// Largest vector sum the refinement may reach.
    #[arg(long, global = true)]
    cap: Option<usize>,
    /// Override the time model declared in the model file.
    #[arg(long, global = true)]
    time_model: Option<TimeArg>,
    #[arg(long, global = true)]
    symmetry: Option<SymmetryArg>,
    #[arg(long, global = true)]
    body: Option<BodyArg>,
    #[arg(long, global = true)]
    ids: Option<IdsArg>,
    /// Print a machine-readable report on stdout.
    #[arg(long, global = true)]
    json: bool,
    /// Solve the current and the next schema concurrently.
    #[arg(long, global = true)]
    portfolio: bool,
    /// Settings file; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the refinement loop until a verdict is reached.
    Check {
        model: PathBuf,
        /// Where to write the error trace of an unsafe verdict.
        #[arg(long)]
        trace_out: Option<PathBuf>,
        /// Start from this schema instead of the weakest one.
        #[arg(long)]
        schema: Option<String>,
        /// Largest replicated instance count tried when confirming traces.
        #[arg(long)]
        n_max: Option<usize>,
        /// Depth bound of the trace search.
        #[arg(long)]
        d_max: Option<usize>,
    },
    /// Emit the Horn clauses for one schema.
    Encode {
        model: PathBuf,
        #[arg(long, conflicts_with = "k")]
        schema: Option<String>,
        /// Shorthand for the schema `(k)` of a homogeneous model.
        #[arg(long)]
        k: Option<usize>,
        /// Output file; standard output when absent or `-`.
        #[arg(long)]
        emit_smt: Option<PathBuf>,
    },
    /// Search a finite instantiation for an error trace.
    Oracle {
        model: PathBuf,
        /// Instance count per template, in declaration order.
        #[arg(long, value_delimiter = ',', required = true)]
        counts: Vec<usize>,
        #[arg(long, default_value_t = 40)]
        depth: usize,
        #[arg(long)]
        max_states: Option<usize>,
    },
    /// Print the parsed model.
    Print {
        model: PathBuf,
        /// Print the model after replacing interactions by a barrier.
        #[arg(long)]
        reduced: bool,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum TimeArg {
    Untimed,
    Discrete,
    Dense,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum SymmetryArg {
    Full,
    Transpositions,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum BodyArg {
    Context,
    All,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum IdsArg {
    Always,
    Referenced,
}

/// Contents of a `tachorn.toml` settings file.
#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    solver_cmd: Option<String>,
    timeout: Option<f64>,
    cap: Option<usize>,
    n_max: Option<usize>,
    d_max: Option<usize>,
    time_model: Option<TimeArg>,
    symmetry: Option<SymmetryArg>,
    body: Option<BodyArg>,
    ids: Option<IdsArg>,
    portfolio: Option<bool>,
}

/// Summary of a `check` run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub model: String,
    pub verdict: Verdict,
    pub history: Vec<Attempt>,
    /// Files written during the run.
    pub artifacts: Vec<String>,
}

struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Failure { code, message: message.into() }
    }
}

type CmdResult = Result<i32, Failure>;

struct Settings {
    solver: SolverConfig,
    encoding: EncodingConfig,
    cap: Option<usize>,
    n_max: Option<usize>,
    d_max: Option<usize>,
    time_model: Option<TimeModel>,
    portfolio: bool,
    json: bool,
}

fn settings(opts: &GlobalOpts) -> Result<Settings, Failure> {
    let file = match &opts.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::new(EXIT_NO_INPUT, format!("cannot read {}: {e}", path.display())))?;
            toml::from_str::<FileConfig>(&text)
                .map_err(|e| Failure::new(EXIT_DATA, format!("{}: {}", path.display(), e.message())))?
        }
        None => FileConfig::default(),
    };
    let mut solver = SolverConfig::default();
    if let Some(cmd) = opts.solver_cmd.as_ref().or(file.solver_cmd.as_ref()) {
        solver.command = split_command(cmd);
    }
    if solver.command.is_empty() {
        return Err(Failure::new(EXIT_USAGE, format!("empty solver command (check {SOLVER_ENV})")));
    }
    if let Some(t) = opts.timeout.or(file.timeout) {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Failure::new(EXIT_USAGE, "timeout must be a positive number of seconds"));
        }
        solver.timeout = Duration::from_secs_f64(t);
    }
    solver.get_model = true;
    let encoding = EncodingConfig {
        symmetry: match opts.symmetry.or(file.symmetry) {
            Some(SymmetryArg::Full) => SymmetryGenerators::AllPermutations,
            _ => SymmetryGenerators::Transpositions,
        },
        body: match opts.body.or(file.body) {
            Some(BodyArg::All) => BodyLiterals::AllSchema,
            _ => BodyLiterals::ContextOnly,
        },
        ids: match opts.ids.or(file.ids) {
            Some(IdsArg::Referenced) => ProcessIds::WhenReferenced,
            _ => ProcessIds::Always,
        },
    };
    let time_model = opts.time_model.or(file.time_model).map(|t| match t {
        TimeArg::Untimed => TimeModel::Untimed,
        TimeArg::Discrete => TimeModel::Discrete,
        TimeArg::Dense => TimeModel::DenseRational,
    });
    Ok(Settings {
        solver,
        encoding,
        cap: opts.cap.or(file.cap),
        n_max: file.n_max,
        d_max: file.d_max,
        time_model,
        portfolio: opts.portfolio || file.portfolio.unwrap_or(false),
        json: opts.json,
    })
}

fn load_model(path: &Path, settings: &Settings) -> Result<SystemModel, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        let code = if e.kind() == std::io::ErrorKind::NotFound { EXIT_NO_INPUT } else { EXIT_SOFTWARE };
        Failure::new(code, format!("cannot read {}: {e}", path.display()))
    })?;
    let name = path.display().to_string();
    let mut model =
        parse_model_named(&text, Some(&name)).map_err(|e| Failure::new(EXIT_DATA, e.to_string()))?;
    if let Some(tm) = settings.time_model {
        model.set_time_model(tm);
    }
    Ok(model)
}

fn parse_schema(text: &str) -> Result<InvariantSchema, Failure> {
    text.parse::<InvariantSchema>()
        .map_err(|e| Failure::new(EXIT_USAGE, format!("invalid schema `{text}`: {e}")))
}

fn check_error(e: CheckError) -> Failure {
    match e {
        CheckError::InvalidModel(_) | CheckError::Encode(_) => Failure::new(EXIT_DATA, e.to_string()),
        CheckError::Solver(SolverError::SolverNotFound(_)) => Failure::new(EXIT_UNAVAILABLE, e.to_string()),
        CheckError::Solver(_) => Failure::new(EXIT_SOFTWARE, e.to_string()),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    std::fs::write(path, contents)
        .map_err(|e| Failure::new(EXIT_CANT_CREATE, format!("cannot write {}: {e}", path.display())))
}

fn json_line<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::new(EXIT_SOFTWARE, e.to_string()))?;
    writeln!(out, "{text}").map_err(|e| Failure::new(EXIT_SOFTWARE, e.to_string()))
}

fn text(out: &mut dyn Write, s: &str) -> Result<(), Failure> {
    out.write_all(s.as_bytes()).map_err(|e| Failure::new(EXIT_SOFTWARE, e.to_string()))
}

/// Renders a report as the table printed by `check`.
pub fn render_report(report: &RunReport) -> String {
    let mut s = format!("model {}\n", report.model);
    let width = report.history.iter().map(|a| a.schema.to_string().len()).max().unwrap_or(6).max(6);
    s.push_str(&format!("{:<width$}  {:>7}  {:<8}  {:>9}\n", "schema", "clauses", "status", "time(ms)"));
    for a in &report.history {
        s.push_str(&format!(
            "{:<width$}  {:>7}  {:<8}  {:>9}\n",
            a.schema.to_string(),
            a.clause_count,
            a.status,
            a.wall_time_ms
        ));
    }
    match &report.verdict {
        Verdict::Safe { schema, .. } => s.push_str(&format!("verdict safe at {schema}\n")),
        Verdict::Unsafe { schema, trace } => s.push_str(&format!(
            "verdict unsafe at {schema} ({} steps, {} instances)\n",
            trace.steps.len(),
            trace.instances.len()
        )),
        Verdict::Unknown { schema, reason } => {
            let reason = serde_json::to_value(reason)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default();
            s.push_str(&format!("verdict unknown at {schema} ({reason})\n"))
        }
    }
    for a in &report.artifacts {
        s.push_str(&format!("wrote {a}\n"));
    }
    s
}

fn cmd_check(
    settings: &Settings,
    model_path: &Path,
    trace_out: Option<&Path>,
    schema: Option<&str>,
    n_max: Option<usize>,
    d_max: Option<usize>,
    out: &mut dyn Write,
) -> CmdResult {
    let model = load_model(model_path, settings)?;
    let mut cfg = CheckConfig {
        solver: settings.solver.clone(),
        encoding: settings.encoding,
        portfolio: settings.portfolio,
        ..CheckConfig::default()
    };
    if let Some(c) = settings.cap {
        cfg.cap = c;
    }
    if let Some(n) = n_max.or(settings.n_max) {
        cfg.n_max = n;
    }
    if let Some(d) = d_max.or(settings.d_max) {
        cfg.d_max = d;
    }
    if let Some(s) = schema {
        cfg.initial_schema = Some(parse_schema(s)?);
    }
    let outcome = check(&model, &cfg).map_err(check_error)?;
    let mut artifacts = Vec::new();
    if let Verdict::Unsafe { trace, .. } = &outcome.verdict {
        let path = match trace_out {
            Some(p) => p.to_path_buf(),
            None => {
                let stem = model_path.file_stem().map_or("model".into(), |s| s.to_string_lossy());
                PathBuf::from(format!("{stem}.trace"))
            }
        };
        // The trace refers to the reduced model, whose instance and
        // variable names it prints.
        let reduced = bip_to_barrier(&model).map_err(|e| Failure::new(EXIT_DATA, e.to_string()))?;
        write_file(&path, &trace.to_text(&reduced))?;
        artifacts.push(path.display().to_string());
    }
    let code = match outcome.verdict {
        Verdict::Safe { .. } => EXIT_SAFE,
        Verdict::Unsafe { .. } => EXIT_UNSAFE,
        Verdict::Unknown { .. } => EXIT_UNKNOWN,
    };
    let report = RunReport {
        model: model_path.display().to_string(),
        verdict: outcome.verdict,
        history: outcome.history,
        artifacts,
    };
    if settings.json {
        json_line(out, &report)?;
    } else {
        text(out, &render_report(&report))?;
    }
    Ok(code)
}

#[derive(Serialize)]
struct EncodeReport<'a> {
    model: String,
    schema: String,
    clauses: usize,
    families: std::collections::BTreeMap<&'a str, usize>,
    output: Option<String>,
}

fn cmd_encode(
    settings: &Settings,
    model_path: &Path,
    schema: Option<&str>,
    k: Option<usize>,
    emit: Option<&Path>,
    out: &mut dyn Write,
) -> CmdResult {
    let model = load_model(model_path, settings)?;
    let diags = validate_model(&model);
    if !diags.is_empty() {
        let msg: Vec<String> = diags.iter().map(|d| d.to_string()).collect();
        return Err(Failure::new(EXIT_DATA, msg.join("\n")));
    }
    let schema = match (schema, k) {
        (Some(s), _) => parse_schema(s)?,
        (None, Some(k)) => InvariantSchema::single(vec![k]),
        (None, None) => return Err(Failure::new(EXIT_USAGE, "encode needs --schema or --k")),
    };
    let reduced = bip_to_barrier(&model).map_err(|e| Failure::new(EXIT_DATA, e.to_string()))?;
    let hs = encoder::encode(&reduced, &schema, settings.encoding)
        .map_err(|e| Failure::new(EXIT_DATA, e.to_string()))?;
    let smt = to_smtlib(&hs);
    let target = emit.filter(|p| p.as_os_str() != "-");
    match target {
        Some(path) => write_file(path, &smt)?,
        None if !settings.json => return text(out, &smt).map(|_| EXIT_SAFE),
        None => {}
    }
    let report = EncodeReport {
        model: model_path.display().to_string(),
        schema: schema.to_string(),
        clauses: hs.clauses.len(),
        families: hs.family_counts().into_iter().map(|(f, n)| (f.tag(), n)).collect(),
        output: target.map(|p| p.display().to_string()),
    };
    if settings.json {
        json_line(out, &report)?;
    } else {
        let mut s = format!("{} clauses for {}\n", report.clauses, report.schema);
        for (f, n) in &report.families {
            s.push_str(&format!("  {f:<14} {n}\n"));
        }
        text(out, &s)?;
    }
    Ok(EXIT_SAFE)
}

fn cmd_oracle(
    settings: &Settings,
    model_path: &Path,
    counts: &[usize],
    depth: usize,
    max_states: Option<usize>,
    out: &mut dyn Write,
) -> CmdResult {
    let model = load_model(model_path, settings)?;
    let diags = validate_model(&model);
    if !diags.is_empty() {
        let msg: Vec<String> = diags.iter().map(|d| d.to_string()).collect();
        return Err(Failure::new(EXIT_DATA, msg.join("\n")));
    }
    let reduced = bip_to_barrier(&model).map_err(|e| Failure::new(EXIT_DATA, e.to_string()))?;
    let mut bounds = Bounds { depth, ..Bounds::default() };
    if let Some(m) = max_states {
        bounds.max_states = m;
    }
    let outcome = match explore(&reduced, counts, bounds) {
        Ok(o) => o,
        Err(e @ crate::oracle::OracleError::InvalidCounts { .. }) => {
            return Err(Failure::new(EXIT_USAGE, e.to_string()))
        }
        Err(e) => {
            if settings.json {
                json_line(out, &serde_json::json!({ "outcome": "aborted", "reason": e.to_string() }))?;
            } else {
                text(out, &format!("aborted: {e}\n"))?;
            }
            return Ok(EXIT_UNKNOWN);
        }
    };
    let code = match &outcome {
        ExploreOutcome::Reachable { .. } => EXIT_UNSAFE,
        ExploreOutcome::UnreachableWithinBounds { .. } => EXIT_SAFE,
    };
    if settings.json {
        json_line(out, &outcome)?;
    } else {
        match &outcome {
            ExploreOutcome::Reachable { trace, states_visited } => {
                text(out, &trace.to_text(&reduced))?;
                text(out, &format!("reachable ({states_visited} states visited)\n"))?;
            }
            ExploreOutcome::UnreachableWithinBounds { states_visited } => {
                text(out, &format!("unreachable within depth {depth} ({states_visited} states visited)\n"))?
            }
        }
    }
    Ok(code)
}

fn cmd_print(settings: &Settings, model_path: &Path, reduced: bool, out: &mut dyn Write) -> CmdResult {
    let mut model = load_model(model_path, settings)?;
    if reduced {
        model = bip_to_barrier(&model).map_err(|e| Failure::new(EXIT_DATA, e.to_string()))?;
    }
    if settings.json {
        json_line(out, &model)?;
    } else {
        text(out, &print_model(&model))?;
    }
    Ok(EXIT_SAFE)
}

/// Runs the command line `args` (program name first) and returns the exit
/// code. Reports go to `out`, diagnostics to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_SAFE };
            let rendered = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(err, "{rendered}");
            } else {
                let _ = write!(out, "{rendered}");
            }
            return code;
        }
    };
    let result = settings(&cli.opts).and_then(|s| match &cli.command {
        Command::Check { model, trace_out, schema, n_max, d_max } => {
            cmd_check(&s, model, trace_out.as_deref(), schema.as_deref(), *n_max, *d_max, out)
        }
        Command::Encode { model, schema, k, emit_smt } => {
            cmd_encode(&s, model, schema.as_deref(), *k, emit_smt.as_deref(), out)
        }
        Command::Oracle { model, counts, depth, max_states } => {
            cmd_oracle(&s, model, counts, *depth, *max_states, out)
        }
        Command::Print { model, reduced } => cmd_print(&s, model, *reduced, out),
    });
    match result {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(err, "tachorn: {}", f.message);
            f.code
        }
    }
}
