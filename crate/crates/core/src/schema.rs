//! Invariant schemata and the schema refinement loop.

use std::fmt;
use std::str::FromStr;

use std::sync::atomic::{AtomicBool, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::{bip_to_barrier, encode, EncodeError, EncodingConfig};
use crate::horn::to_smtlib;
use crate::model::{validate_model, Diagnostic, SystemModel, TransitionKind};
use crate::oracle::{explore, replay, uniform_counts, Bounds, ExploreOutcome, Trace};
use crate::solver::{run_solver_with_cancel, SolverConfig, SolverError, SolverResult, SolverStatus};

/// Antichain of vectors; entry `i` of a vector is the number of instances of
/// process type `i` one relation tracks.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct InvariantSchema {
    vectors: Vec<Vec<usize>>,
}

fn leq(a: &[usize], b: &[usize]) -> bool {
    a.iter().zip(b).all(|(x, y)| x <= y)
}

impl InvariantSchema {
    /// Builds the antichain of maximal vectors, in descending lexicographic
    /// order without duplicates.
    pub fn new(vectors: impl IntoIterator<Item = Vec<usize>>) -> Self {
        let mut vs: Vec<Vec<usize>> = vectors.into_iter().collect();
        vs.sort_by(|a, b| b.cmp(a));
        vs.dedup();
        let keep: Vec<Vec<usize>> =
            vs.iter().filter(|v| !vs.iter().any(|w| w != *v && leq(v, w))).cloned().collect();
        InvariantSchema { vectors: keep }
    }

    pub fn single(vector: Vec<usize>) -> Self {
        InvariantSchema { vectors: vec![vector] }
    }

    pub fn vectors(&self) -> &[Vec<usize>] {
        &self.vectors
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Vector length, or `None` when vectors disagree or there are none.
    pub fn dims(&self) -> Option<usize> {
        let n = self.vectors.first()?.len();
        self.vectors.iter().all(|v| v.len() == n).then_some(n)
    }

    pub fn is_antichain(&self) -> bool {
        self.vectors
            .iter()
            .enumerate()
            .all(|(i, v)| self.vectors.iter().enumerate().all(|(j, w)| i == j || !leq(v, w)))
    }

    /// Sum over all vectors of their entry sums.
    pub fn total(&self) -> usize {
        self.vectors.iter().flatten().sum()
    }

    /// Largest vector sum.
    pub fn max_vector_sum(&self) -> usize {
        self.vectors.iter().map(|v| v.iter().sum()).max().unwrap_or(0)
    }

    /// Largest entry for type `i` over all vectors.
    pub fn max_entry(&self, i: usize) -> usize {
        self.vectors.iter().map(|v| v[i]).max().unwrap_or(0)
    }

    /// Whether some vector is componentwise at least `v`.
    pub fn dominates(&self, v: &[usize]) -> bool {
        self.vectors.iter().any(|w| leq(v, w))
    }

    /// Vector sums in descending order, the measure that refinement
    /// strictly increases.
    pub fn sum_profile(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.vectors.iter().map(|v| v.iter().sum()).collect();
        s.sort_by(|a, b| b.cmp(a));
        s
    }
}

fn fmt_vec(v: &[usize]) -> String {
    let parts: Vec<String> = v.iter().map(|x| x.to_string()).collect();
    format!("({})", parts.join(","))
}

impl fmt::Display for InvariantSchema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.vectors.len() == 1 {
            return f.write_str(&fmt_vec(&self.vectors[0]));
        }
        let parts: Vec<String> = self.vectors.iter().map(|v| fmt_vec(v)).collect();
        write!(f, "{{{}}}", parts.join(","))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("invalid schema `{input}`: {reason}")]
pub struct SchemaParseError {
    pub input: String,
    pub reason: String,
}

impl FromStr for InvariantSchema {
    type Err = SchemaParseError;

    /// Accepts `(1,3)`, `{(1,0),(0,1)}` and `1,0;0,1`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = |reason: &str| SchemaParseError { input: s.to_string(), reason: reason.into() };
        let body: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        let body = body.strip_prefix('{').and_then(|b| b.strip_suffix('}')).unwrap_or(&body);
        let groups: Vec<String> = if body.contains('(') {
            body.split(')')
                .map(|g| g.trim_start_matches([',', ';']).trim_start_matches('(').to_string())
                .filter(|g| !g.is_empty())
                .collect()
        } else {
            body.split(';').map(str::to_string).collect()
        };
        let mut vectors = Vec::new();
        for g in groups {
            let v = g
                .split(',')
                .map(|x| x.parse::<usize>().map_err(|_| err("entries must be natural numbers")))
                .collect::<Result<Vec<_>, _>>()?;
            vectors.push(v);
        }
        let schema = InvariantSchema::new(vectors);
        if schema.is_empty() {
            return Err(err("no vectors"));
        }
        if schema.dims().is_none() {
            return Err(err("vectors differ in length"));
        }
        Ok(schema)
    }
}

impl From<InvariantSchema> for String {
    fn from(s: InvariantSchema) -> String {
        s.to_string()
    }
}

impl TryFrom<String> for InvariantSchema {
    type Error = SchemaParseError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

// ---------------------------------------------------------------------------
// Refinement

/// Pairwise interaction weights between process types: how often two types
/// meet in a channel pairing, a barrier or the error specification.
pub fn interaction_weights(model: &SystemModel) -> Vec<Vec<usize>> {
    let n = model.templates.len();
    let mut w = vec![vec![0usize; n]; n];
    let mut bump = |i: usize, j: usize, by: usize| {
        w[i][j] += by;
        if i != j {
            w[j][i] += by;
        }
    };
    for ch in &model.channels {
        for (i, a) in model.templates.iter().enumerate() {
            let sends = a.transitions_of(|k| *k == TransitionKind::Send(ch.clone())).count();
            for (j, b) in model.templates.iter().enumerate() {
                let recvs = b.transitions_of(|k| *k == TransitionKind::Receive(ch.clone())).count();
                if sends > 0 && recvs > 0 {
                    bump(i, j, sends * recvs);
                }
            }
        }
    }
    for b in &model.barriers {
        let kind = TransitionKind::Barrier(b.clone());
        let takers: Vec<usize> =
            (0..n).filter(|&i| model.templates[i].transitions.iter().any(|t| t.kind == kind)).collect();
        for (x, &i) in takers.iter().enumerate() {
            for &j in &takers[x + 1..] {
                bump(i, j, 1);
            }
        }
    }
    let counts = model.error_role_counts();
    for i in 0..n {
        for j in i + 1..n {
            if counts[i] > 0 && counts[j] > 0 {
                bump(i, j, 1);
            }
        }
    }
    w
}

/// One unit vector per template, raised to the number of error roles on
/// that template.
pub fn weakest_schema(model: &SystemModel) -> InvariantSchema {
    let counts = model.error_role_counts();
    let n = model.templates.len();
    InvariantSchema::new((0..n).map(|i| {
        let mut v = vec![0; n];
        v[i] = counts[i].max(1);
        v
    }))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Strengthened {
    Schema(InvariantSchema),
    /// Every stronger candidate exceeds the cap on vector sums, or the
    /// schema is already the strongest one for a finite model.
    CapReached,
}

/// Deterministic next schema: merge the two vectors whose types interact
/// most; with a single vector left, add one tracked instance to the
/// least-tracked replicated type.
pub fn strengthen(model: &SystemModel, schema: &InvariantSchema, cap: usize) -> Strengthened {
    let vs = schema.vectors();
    let w = interaction_weights(model);
    let score = |a: &[usize], b: &[usize]| -> usize {
        let mut s = 0;
        for (i, &x) in a.iter().enumerate() {
            for (j, &y) in b.iter().enumerate() {
                if x > 0 && y > 0 {
                    s += w[i][j];
                }
            }
        }
        s
    };
    let mut best: Option<(usize, usize, usize)> = None;
    for i in 0..vs.len() {
        for j in i + 1..vs.len() {
            let s = score(&vs[i], &vs[j]);
            if best.is_none_or(|(_, _, b)| s > b) {
                best = Some((i, j, s));
            }
        }
    }
    if let Some((i, j, _)) = best {
        let merged: Vec<usize> = vs[i].iter().zip(&vs[j]).map(|(a, b)| *a.max(b)).collect();
        if merged.iter().sum::<usize>() <= cap {
            let rest = vs.iter().enumerate().filter(|&(k, _)| k != i && k != j).map(|(_, v)| v.clone());
            return Strengthened::Schema(InvariantSchema::new(rest.chain([merged])));
        }
    }
    let counts = model.error_role_counts();
    let covering: Vec<usize> = (0..vs.len()).filter(|&k| leq(&counts, &vs[k])).collect();
    let pool: Vec<usize> = if covering.is_empty() { (0..vs.len()).collect() } else { covering };
    let mut pick: Option<(usize, usize)> = None;
    for &k in &pool {
        for (t, tmpl) in model.templates.iter().enumerate() {
            if !tmpl.is_replicated() || vs[k].iter().sum::<usize>() + 1 > cap {
                continue;
            }
            if pick.is_none_or(|(pk, pt)| vs[k][t] < vs[pk][pt]) {
                pick = Some((k, t));
            }
        }
    }
    match pick {
        Some((k, t)) => {
            let mut vectors = vs.to_vec();
            vectors[k][t] += 1;
            Strengthened::Schema(InvariantSchema::new(vectors))
        }
        None => Strengthened::CapReached,
    }
}

// ---------------------------------------------------------------------------
// Verification loop

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnknownReason {
    SchemaCapReached,
    SolverTimeout,
    SolverUnknown,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Safe {
        schema: InvariantSchema,
        /// Relation definitions as printed by the solver.
        witness: Option<String>,
    },
    Unsafe {
        schema: InvariantSchema,
        trace: Trace,
    },
    Unknown {
        schema: InvariantSchema,
        reason: UnknownReason,
    },
}

impl Verdict {
    /// An `Unsafe` verdict, provided the trace replays on `model`.
    pub fn certified_unsafe(model: &SystemModel, schema: InvariantSchema, trace: Trace) -> Option<Verdict> {
        replay(model, &trace).then_some(Verdict::Unsafe { schema, trace })
    }

    pub fn schema(&self) -> &InvariantSchema {
        match self {
            Verdict::Safe { schema, .. }
            | Verdict::Unsafe { schema, .. }
            | Verdict::Unknown { schema, .. } => schema,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Verdict::Safe { .. } => "safe",
            Verdict::Unsafe { .. } => "unsafe",
            Verdict::Unknown { .. } => "unknown",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub schema: InvariantSchema,
    pub clause_count: usize,
    pub status: String,
    pub wall_time_ms: u128,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub verdict: Verdict,
    pub history: Vec<Attempt>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckConfig {
    pub solver: SolverConfig,
    pub encoding: EncodingConfig,
    /// Largest admissible vector sum.
    pub cap: usize,
    /// Largest instance count per replicated template tried by the
    /// counterexample search.
    pub n_max: usize,
    pub d_max: usize,
    pub oracle_max_states: usize,
    pub portfolio: bool,
    pub initial_schema: Option<InvariantSchema>,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig {
            solver: SolverConfig { get_model: true, ..SolverConfig::default() },
            encoding: EncodingConfig::default(),
            cap: 6,
            n_max: 4,
            d_max: 40,
            oracle_max_states: 300_000,
            portfolio: false,
            initial_schema: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum CheckError {
    #[error("model is not well formed: {}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidModel(Vec<Diagnostic>),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// The model the loop works on: validated, with rendezvous interactions
/// replaced by a barrier. Traces in verdicts refer to this model.
pub fn prepare_model(model: &SystemModel) -> Result<SystemModel, CheckError> {
    let diags = validate_model(model);
    if !diags.is_empty() {
        return Err(CheckError::InvalidModel(diags));
    }
    Ok(bip_to_barrier(model)?)
}

/// Lazily computed shortest error trace over growing instantiations.
struct Witness<'a> {
    model: &'a SystemModel,
    cfg: &'a CheckConfig,
    done: bool,
    trace: Option<Trace>,
}

impl Witness<'_> {
    fn get(&mut self) -> Option<&Trace> {
        if !self.done {
            self.done = true;
            let bounds =
                Bounds { depth: self.cfg.d_max, max_states: self.cfg.oracle_max_states, ..Bounds::default() };
            let has_replicated = self.model.templates.iter().any(|t| t.is_replicated());
            let top = if has_replicated { self.cfg.n_max } else { 1 };
            for n in 1..=top {
                let counts = uniform_counts(self.model, n);
                match explore(self.model, &counts, bounds) {
                    Ok(ExploreOutcome::Reachable { trace, states_visited }) => {
                        log::info!("error trace with {n} instances per type ({states_visited} states)");
                        self.trace = Some(trace);
                        break;
                    }
                    Ok(ExploreOutcome::UnreachableWithinBounds { states_visited }) => {
                        log::info!("no error trace with {n} instances per type ({states_visited} states)");
                    }
                    Err(e) => log::info!("search with {n} instances per type stopped: {e}"),
                }
            }
        }
        self.trace.as_ref()
    }
}

struct Run {
    result: SolverResult,
    clause_count: usize,
}

fn run_schema(
    model: &SystemModel,
    schema: &InvariantSchema,
    cfg: &CheckConfig,
    cancel: Option<&AtomicBool>,
) -> Result<Run, CheckError> {
    let hs = encode(model, schema, cfg.encoding)?;
    let script = to_smtlib(&hs);
    let result = run_solver_with_cancel(&script, &cfg.solver, cancel)?;
    log::info!("schema {schema}: {} clauses, {}", hs.clauses.len(), result.status.label());
    Ok(Run { result, clause_count: hs.clauses.len() })
}

fn attempt(schema: &InvariantSchema, run: &Run) -> Attempt {
    Attempt {
        schema: schema.clone(),
        clause_count: run.clause_count,
        status: run.result.status.label().to_string(),
        wall_time_ms: run.result.wall_time.as_millis(),
    }
}

enum Assessment {
    Final(Verdict),
    Refine,
    Inconclusive(UnknownReason),
}

fn assess(model: &SystemModel, schema: &InvariantSchema, run: Run, witness: &mut Witness<'_>) -> Assessment {
    match run.result.status {
        SolverStatus::Sat => {
            Assessment::Final(Verdict::Safe { schema: schema.clone(), witness: run.result.model_text })
        }
        SolverStatus::Unsat => match witness.get() {
            Some(trace) if schema.dominates(&trace.participation(model)) => {
                let verdict = Verdict::certified_unsafe(model, schema.clone(), trace.clone())
                    .expect("oracle traces replay");
                Assessment::Final(verdict)
            }
            _ => Assessment::Refine,
        },
        SolverStatus::Timeout => Assessment::Inconclusive(UnknownReason::SolverTimeout),
        SolverStatus::Unknown | SolverStatus::Crash { .. } => {
            Assessment::Inconclusive(UnknownReason::SolverUnknown)
        }
    }
}

/// Runs the refinement loop on a prepared model (see [`prepare_model`]).
///
/// A solvable encoding proves safety. An unsolvable one is only reported
/// as unsafe once the shortest error trace found by the explicit search
/// involves no more instances of each type than one schema vector tracks;
/// otherwise the schema is strengthened. An inconclusive solver answer
/// earns one strengthening before the loop gives up.
pub fn check_prepared(model: &SystemModel, cfg: &CheckConfig) -> Result<CheckOutcome, CheckError> {
    let mut schema = cfg.initial_schema.clone().unwrap_or_else(|| weakest_schema(model));
    let mut history = Vec::new();
    let mut witness = Witness { model, cfg, done: false, trace: None };
    let mut retried = false;
    loop {
        let next = match strengthen(model, &schema, cfg.cap) {
            Strengthened::Schema(s) => Some(s),
            Strengthened::CapReached => None,
        };
        let mut rounds: Vec<(InvariantSchema, Run)> = Vec::new();
        match (&next, cfg.portfolio) {
            (Some(next_schema), true) => {
                let cancel = AtomicBool::new(false);
                let (cur, nxt) = std::thread::scope(|scope| {
                    let h = scope.spawn(|| run_schema(model, next_schema, cfg, Some(&cancel)));
                    let cur = run_schema(model, &schema, cfg, None);
                    if matches!(&cur, Ok(r) if r.result.status == SolverStatus::Sat) {
                        cancel.store(true, Ordering::Relaxed);
                    }
                    (cur, h.join().expect("solver thread"))
                });
                rounds.push((schema.clone(), cur?));
                let nxt = nxt?;
                if rounds[0].1.result.status != SolverStatus::Sat {
                    rounds.push((next_schema.clone(), nxt));
                }
            }
            _ => rounds.push((schema.clone(), run_schema(model, &schema, cfg, None)?)),
        }
        let mut safe = None;
        let mut inconclusive = None;
        let tried_next = rounds.len() == 2;
        for (s, run) in rounds {
            history.push(attempt(&s, &run));
            match assess(model, &s, run, &mut witness) {
                Assessment::Final(v @ Verdict::Unsafe { .. }) => {
                    return Ok(CheckOutcome { verdict: v, history });
                }
                Assessment::Final(v) => {
                    safe.get_or_insert(v);
                }
                Assessment::Inconclusive(r) => inconclusive = Some(r),
                Assessment::Refine => {}
            }
        }
        if let Some(v) = safe {
            return Ok(CheckOutcome { verdict: v, history });
        }
        let Some(next) = next else {
            let reason = inconclusive.unwrap_or(UnknownReason::SchemaCapReached);
            return Ok(CheckOutcome { verdict: Verdict::Unknown { schema, reason }, history });
        };
        if let Some(reason) = inconclusive {
            if retried {
                return Ok(CheckOutcome { verdict: Verdict::Unknown { schema, reason }, history });
            }
            retried = true;
        }
        schema = if tried_next {
            match strengthen(model, &next, cfg.cap) {
                Strengthened::Schema(s) => s,
                Strengthened::CapReached => {
                    let reason = inconclusive.unwrap_or(UnknownReason::SchemaCapReached);
                    return Ok(CheckOutcome { verdict: Verdict::Unknown { schema: next, reason }, history });
                }
            }
        } else {
            next
        };
    }
}

/// Validates, reduces rendezvous interactions and runs the refinement loop.
pub fn check(model: &SystemModel, cfg: &CheckConfig) -> Result<CheckOutcome, CheckError> {
    let prepared = prepare_model(model)?;
    check_prepared(&prepared, cfg)
}
