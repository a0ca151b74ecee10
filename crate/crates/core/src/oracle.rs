//! Explicit-state bounded reachability for finite instantiations.
//!
//! Breadth-first search over concrete states from every initial valuation.
//! Successors come from interleaved local steps, channel pairings, barrier
//! steps and time elapse. Time elapse only tries the delays at which some
//! clock comparison changes its truth value, which keeps the branching
//! small without losing any distinct guard configuration. The search can
//! confirm that an error is reachable; it never proves safety.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constraint::{CmpOp, Constraint, EvalError, Formula, Term, VarRef};
use crate::model::{SystemModel, TimeModel, TransitionKind, DENOMINATOR_VAR, TIME_VAR};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bounds {
    /// Maximum number of steps from an initial state.
    pub depth: usize,
    /// Largest single time delay.
    pub time_horizon: i64,
    /// Range for values that are not fixed by an equation.
    pub value_box: (i64, i64),
    pub max_states: usize,
    /// Cap on per-instance choice combinations in one barrier step.
    pub max_barrier_choices: usize,
}

impl Default for Bounds {
    fn default() -> Self {
        Bounds {
            depth: 40,
            time_horizon: 10_000,
            value_box: (0, 100),
            max_states: 2_000_000,
            max_barrier_choices: 100_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("state explosion: more than {limit} {what}")]
    StateExplosionAbort { what: &'static str, limit: usize },
    #[error("instance counts {counts:?} do not fit the model")]
    InvalidCounts { counts: Vec<usize> },
    #[error("evaluation failed: {0}")]
    Eval(#[from] EvalError),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InstanceInfo {
    pub template: String,
    pub id: i64,
    pub replicated: bool,
}

impl fmt::Display for InstanceInfo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.replicated {
            write!(f, "{}#{}", self.template, self.id)
        } else {
            f.write_str(&self.template)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConcreteState {
    pub globals: Vec<i64>,
    /// Local valuation of every instance, in instance order.
    pub locals: Vec<Vec<i64>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepLabel {
    Local {
        instance: usize,
        transition: usize,
    },
    /// A step of the selector transition added by the rendezvous reduction.
    IactAssign {
        instance: usize,
        transition: usize,
        value: i64,
    },
    TimeElapse {
        delta: i64,
    },
    Comm {
        channel: String,
        sender: usize,
        send_transition: usize,
        receiver: usize,
        recv_transition: usize,
        /// Globals after the send and before the receive.
        intermediate_globals: Vec<i64>,
    },
    /// `choices[i]` is the transition taken by instance `i`, `None` for the
    /// implicit neutral transition.
    Barrier {
        barrier: String,
        choices: Vec<Option<usize>>,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceStep {
    pub label: StepLabel,
    pub state: ConcreteState,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trace {
    pub model: String,
    pub globals: Vec<String>,
    pub instances: Vec<InstanceInfo>,
    pub initial: ConcreteState,
    pub steps: Vec<TraceStep>,
    /// Instance bound to each error role in the final state.
    pub error_binding: Vec<usize>,
}

impl Trace {
    pub fn final_state(&self) -> &ConcreteState {
        self.steps.last().map_or(&self.initial, |s| &s.state)
    }

    /// State before step `i` (0-based).
    pub fn pre_state(&self, i: usize) -> &ConcreteState {
        if i == 0 {
            &self.initial
        } else {
            &self.steps[i - 1].state
        }
    }

    /// Number of distinct instances per template that change local state,
    /// send, receive or are bound by the error specification.
    pub fn participation(&self, model: &SystemModel) -> Vec<usize> {
        let mut seen: HashSet<usize> = self.error_binding.iter().copied().collect();
        for (i, step) in self.steps.iter().enumerate() {
            match &step.label {
                StepLabel::Local { instance, .. } => {
                    seen.insert(*instance);
                }
                StepLabel::Comm { sender, receiver, .. } => {
                    seen.insert(*sender);
                    seen.insert(*receiver);
                }
                StepLabel::Barrier { .. } => {
                    let pre = self.pre_state(i);
                    for (k, l) in step.state.locals.iter().enumerate() {
                        if *l != pre.locals[k] {
                            seen.insert(k);
                        }
                    }
                }
                StepLabel::IactAssign { .. } | StepLabel::TimeElapse { .. } => {}
            }
        }
        let mut out = vec![0; model.templates.len()];
        for i in seen {
            if let Some(t) = model.template_index(&self.instances[i].template) {
                out[t] += 1;
            }
        }
        out
    }

    /// Line-oriented rendering, one line per state and label.
    pub fn to_text(&self, model: &SystemModel) -> String {
        let mut out = format!("trace {}\n", self.model);
        let names: Vec<String> = self.instances.iter().map(|i| i.to_string()).collect();
        out.push_str(&format!("instances {}\n", names.join(" ")));
        out.push_str(&format!("state 0 {}\n", self.render_state(model, &self.initial)));
        for (i, step) in self.steps.iter().enumerate() {
            out.push_str(&format!("step {} {}\n", i + 1, self.render_label(model, &step.label)));
            out.push_str(&format!("state {} {}\n", i + 1, self.render_state(model, &step.state)));
        }
        let roles: Vec<String> = model
            .error
            .roles
            .iter()
            .zip(&self.error_binding)
            .map(|(r, &i)| format!("{}={}", r.name, names[i]))
            .collect();
        out.push_str(&format!("error {}\n", roles.join(" ")));
        out
    }

    fn render_state(&self, model: &SystemModel, s: &ConcreteState) -> String {
        let mut parts: Vec<String> =
            self.globals.iter().zip(&s.globals).map(|(g, v)| format!("{g}={v}")).collect();
        for (inst, vals) in self.instances.iter().zip(&s.locals) {
            let t = model.template_index(&inst.template).map(|t| &model.templates[t]);
            for (j, v) in vals.iter().enumerate() {
                let name = t.and_then(|t| t.locals.get(j)).map_or("?", |l| l.name.as_str());
                parts.push(format!("{inst}.{name}={v}"));
            }
        }
        parts.join(" ")
    }

    fn render_label(&self, _model: &SystemModel, l: &StepLabel) -> String {
        let name = |i: &usize| self.instances.get(*i).map_or_else(|| format!("?{i}"), |x| x.to_string());
        match l {
            StepLabel::Local { instance, transition } => {
                format!("local {} #{transition}", name(instance))
            }
            StepLabel::IactAssign { instance, transition, value } => {
                format!("select {} #{transition} value {value}", name(instance))
            }
            StepLabel::TimeElapse { delta } => format!("elapse {delta}"),
            StepLabel::Comm { channel, sender, send_transition, receiver, recv_transition, .. } => {
                format!(
                    "comm {channel} {} #{send_transition} -> {} #{recv_transition}",
                    name(sender),
                    name(receiver)
                )
            }
            StepLabel::Barrier { barrier, choices } => {
                let cs: Vec<String> = choices
                    .iter()
                    .enumerate()
                    .map(|(i, c)| match c {
                        Some(t) => format!("{}#{t}", name(&i)),
                        None => format!("{}#-", name(&i)),
                    })
                    .collect();
                format!("barrier {barrier} {}", cs.join(" "))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum ExploreOutcome {
    Reachable { trace: Trace, states_visited: usize },
    UnreachableWithinBounds { states_visited: usize },
}

// ---------------------------------------------------------------------------
// Compiled constraints

/// Variable reference relative to one instance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum Ref {
    Global(usize),
    Local(usize),
    GlobalPost(usize),
    LocalPost(usize),
    SelfId,
    Peer(usize),
}

impl fmt::Display for Ref {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

type CFormula = Formula<Ref>;

fn compile(model: &SystemModel, template: usize, c: &Constraint) -> CFormula {
    let t = &model.templates[template];
    let roles = &model.error.roles;
    c.subst(&mut |v: &VarRef| {
        Term::Var(match v {
            VarRef::Global(g) => Ref::Global(model.global_index(g).expect("declared global")),
            VarRef::GlobalPrimed(g) => Ref::GlobalPost(model.global_index(g).expect("declared global")),
            VarRef::Local(l) => Ref::Local(t.local_index(l).expect("declared local")),
            VarRef::LocalPrimed(l) => Ref::LocalPost(t.local_index(l).expect("declared local")),
            VarRef::SelfId => Ref::SelfId,
            VarRef::PeerId(r) => Ref::Peer(roles.iter().position(|x| &x.name == r).expect("declared role")),
        })
    })
}

#[derive(Clone, Debug)]
struct CTransition {
    index: usize,
    kind: TransitionKind,
    guard: CFormula,
    update: CFormula,
    writes_globals: Vec<usize>,
    writes_locals: Vec<usize>,
}

#[derive(Clone, Debug)]
struct CTemplate {
    transitions: Vec<CTransition>,
    init: CFormula,
    tinv: CFormula,
}

/// Everything needed to evaluate constraints of one instance.
struct Env<'a> {
    globals: &'a [i64],
    locals: &'a [i64],
    id: i64,
    peers: &'a [i64],
    post_globals: &'a [Option<i64>],
    post_locals: &'a [Option<i64>],
}

impl Env<'_> {
    fn get(&self, r: &Ref) -> Option<i64> {
        match *r {
            Ref::Global(i) => self.globals.get(i).copied(),
            Ref::Local(i) => self.locals.get(i).copied(),
            Ref::GlobalPost(i) => self.post_globals.get(i).copied().flatten(),
            Ref::LocalPost(i) => self.post_locals.get(i).copied().flatten(),
            Ref::SelfId => Some(self.id),
            Ref::Peer(k) => self.peers.get(k).copied(),
        }
    }
}

fn holds(f: &CFormula, env: &Env<'_>) -> Result<bool, EvalError> {
    f.eval(&|r: &Ref| env.get(r))
}

/// Solves `f` for the unknown references by equation propagation, then
/// enumerates whatever is left within `value_box`. Returns every complete
/// assignment (in the order of `unknown`) that satisfies `f`.
fn solve(
    f: &CFormula,
    unknown: &[Ref],
    lookup: &dyn Fn(&Ref) -> Option<i64>,
    value_box: (i64, i64),
    limit: usize,
) -> Result<Vec<Vec<i64>>, OracleError> {
    let mut vals: Vec<Option<i64>> = vec![None; unknown.len()];
    let get = |vals: &[Option<i64>], r: &Ref| -> Option<i64> {
        match unknown.iter().position(|u| u == r) {
            Some(i) => vals[i],
            None => lookup(r),
        }
    };
    let eqs: Vec<(&Term<Ref>, &Term<Ref>)> = f
        .conjuncts()
        .into_iter()
        .filter_map(|c| match c {
            Formula::Cmp(CmpOp::Eq, a, b) => Some((a, b)),
            _ => None,
        })
        .collect();
    loop {
        let mut changed = false;
        for (a, b) in &eqs {
            let d = Term::sub((*a).clone(), (*b).clone());
            let mut open = Vec::new();
            d.for_each_var(&mut |r| {
                if unknown.contains(r) && get(&vals, r).is_none() && !open.contains(r) {
                    open.push(*r);
                }
            });
            if open.len() != 1 {
                continue;
            }
            let target = open[0];
            let Ok((c, o)) = d.affine_in(&|r: &Ref| *r == target, &|r: &Ref| get(&vals, r)) else {
                continue;
            };
            if c != 0 && o % c == 0 {
                let i = unknown.iter().position(|u| *u == target).unwrap();
                vals[i] = Some(-o / c);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let free: Vec<usize> = (0..unknown.len()).filter(|&i| vals[i].is_none()).collect();
    let width = (value_box.1 - value_box.0 + 1).max(0) as usize;
    let combos = (0..free.len()).try_fold(1usize, |acc, _| acc.checked_mul(width));
    match combos {
        Some(n) if n <= limit => {}
        _ => return Err(OracleError::StateExplosionAbort { what: "candidate valuations", limit }),
    }
    let mut out = Vec::new();
    let mut cursor = vec![value_box.0; free.len()];
    loop {
        for (k, &i) in free.iter().enumerate() {
            vals[i] = Some(cursor[k]);
        }
        if f.eval(&|r: &Ref| get(&vals, r))? {
            out.push(vals.iter().map(|v| v.unwrap()).collect());
        }
        let mut k = 0;
        while k < cursor.len() {
            cursor[k] += 1;
            if cursor[k] <= value_box.1 {
                break;
            }
            cursor[k] = value_box.0;
            k += 1;
        }
        if k == cursor.len() {
            break;
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// The explorer

struct Explorer<'a> {
    model: &'a SystemModel,
    bounds: Bounds,
    templates: Vec<CTemplate>,
    /// Error role constraints compiled against their template.
    roles: Vec<(usize, CFormula)>,
    instances: Vec<InstanceInfo>,
    inst_template: Vec<usize>,
    time_slot: Option<usize>,
    /// Atoms whose truth value can change as time passes, per template.
    clock_atoms: Vec<Vec<(Term<Ref>, Term<Ref>)>>,
    selector: Option<(usize, Vec<(usize, usize)>)>,
    /// Per template and local: the largest constant a clock is compared
    /// with, when every clock constraint has the form `val(x) op k`.
    clock_caps: Option<Vec<Vec<Option<i64>>>>,
}

/// Linear coefficients of `t`, with the denominator variable read as 1.
fn linear(t: &Term<Ref>, unit: Option<usize>) -> Option<(HashMap<Ref, i64>, i64)> {
    let mut vars = Vec::new();
    t.for_each_var(&mut |r| {
        if !vars.contains(r) && Some(*r) != unit.map(Ref::Global) {
            vars.push(*r)
        }
    });
    let mut coeffs = HashMap::new();
    for v in &vars {
        let c = t.coefficient_sum(&|r: &Ref| r == v);
        if c != 0 {
            coeffs.insert(*v, c);
        }
    }
    let lookup = |r: &Ref| if Some(*r) == unit.map(Ref::Global) { Some(1) } else { Some(0) };
    let k = t.eval(&lookup).ok()?;
    Some((coeffs, k))
}

/// Clock caps for the visited-set key; `None` when some constraint uses
/// time in another shape.
fn clock_caps(
    model: &SystemModel,
    templates: &[CTemplate],
    roles: &[(usize, CFormula)],
) -> Option<Vec<Vec<Option<i64>>>> {
    let c = model.global_index(TIME_VAR)?;
    let unit = model.global_index(DENOMINATOR_VAR);
    let mut caps: Vec<Vec<Option<i64>>> =
        model.templates.iter().map(|t| t.locals.iter().map(|l| l.is_clock.then_some(0)).collect()).collect();
    let is_clock = |ti: usize, l: usize| model.templates[ti].locals[l].is_clock;
    let mut ok = true;
    let mut visit = |ti: usize, f: &CFormula, caps: &mut Vec<Vec<Option<i64>>>, update: bool| {
        f.for_each_atom(&mut |a| {
            let d = match a {
                Formula::Cmp(_, x, y) => Term::sub(x.clone(), y.clone()),
                Formula::Divides(_, t) => t.clone(),
                Formula::Distinct(ts) => {
                    for t in ts {
                        t.for_each_var(&mut |r| {
                            if matches!(r, Ref::Global(g) | Ref::GlobalPost(g) if *g == c)
                                || matches!(r, Ref::Local(l) | Ref::LocalPost(l) if is_clock(ti, *l))
                            {
                                ok = false;
                            }
                        });
                    }
                    return;
                }
                _ => return,
            };
            let Some((coeffs, k)) = linear(&d, unit) else {
                ok = false;
                return;
            };
            let timed: Vec<(&Ref, &i64)> = coeffs
                .iter()
                .filter(|(r, _)| match **r {
                    Ref::Global(g) | Ref::GlobalPost(g) => g == c,
                    Ref::Local(l) | Ref::LocalPost(l) => is_clock(ti, l),
                    _ => false,
                })
                .collect();
            if timed.is_empty() {
                return;
            }
            if timed.len() != 2 || coeffs.len() != 2 {
                ok = false;
                return;
            }
            let kc = coeffs.get(&Ref::Global(c)).copied();
            let clock = timed.iter().find_map(|(r, v)| match r {
                Ref::Local(l) if !update => Some((*l, **v)),
                Ref::LocalPost(l) if update => Some((*l, **v)),
                _ => None,
            });
            match (kc, clock) {
                (Some(kc), Some((l, kx))) if kc == -kx => {
                    if update {
                        if k != 0 || !matches!(a, Formula::Cmp(CmpOp::Eq, _, _)) {
                            ok = false;
                        }
                    } else if let Some(cap) = caps[ti][l].as_mut() {
                        *cap = (*cap).max((k.abs() + kc.abs() - 1) / kc.abs());
                    }
                }
                _ => ok = false,
            }
        });
    };
    for (ti, t) in templates.iter().enumerate() {
        visit(ti, &t.tinv, &mut caps, false);
        for tr in &t.transitions {
            visit(ti, &tr.guard, &mut caps, false);
            visit(ti, &tr.update, &mut caps, true);
        }
    }
    for (ti, f) in roles {
        visit(*ti, f, &mut caps, false);
    }
    ok.then_some(caps)
}

fn refs_written(f: &CFormula) -> (Vec<usize>, Vec<usize>) {
    let mut g = Vec::new();
    let mut l = Vec::new();
    f.for_each_var(&mut |r| match *r {
        Ref::GlobalPost(i) if !g.contains(&i) => g.push(i),
        Ref::LocalPost(i) if !l.contains(&i) => l.push(i),
        _ => {}
    });
    g.sort_unstable();
    l.sort_unstable();
    (g, l)
}

impl<'a> Explorer<'a> {
    fn new(model: &'a SystemModel, counts: &[usize], bounds: Bounds) -> Result<Self, OracleError> {
        if counts.len() != model.templates.len()
            || model.templates.iter().zip(counts).any(|(t, &c)| !t.is_replicated() && c > 1)
        {
            return Err(OracleError::InvalidCounts { counts: counts.to_vec() });
        }
        let templates: Vec<CTemplate> = (0..model.templates.len())
            .map(|ti| {
                let t = &model.templates[ti];
                CTemplate {
                    transitions: t
                        .transitions
                        .iter()
                        .enumerate()
                        .map(|(index, tr)| {
                            let update = compile(model, ti, &tr.update);
                            let (writes_globals, writes_locals) = refs_written(&update);
                            CTransition {
                                index,
                                kind: tr.kind.clone(),
                                guard: compile(model, ti, &tr.guard),
                                update,
                                writes_globals,
                                writes_locals,
                            }
                        })
                        .collect(),
                    init: compile(model, ti, &t.init),
                    tinv: compile(model, ti, &t.time_invariant),
                }
            })
            .collect();
        let roles: Vec<(usize, CFormula)> = model
            .error
            .roles
            .iter()
            .map(|r| {
                let ti = model.template_index(&r.template).expect("declared template");
                (ti, compile(model, ti, &r.constraint))
            })
            .collect();
        let mut instances = Vec::new();
        let mut inst_template = Vec::new();
        for (ti, t) in model.templates.iter().enumerate() {
            for j in 0..counts[ti] {
                instances.push(InstanceInfo {
                    template: t.name.clone(),
                    id: j as i64,
                    replicated: t.is_replicated(),
                });
                inst_template.push(ti);
            }
        }
        let time_slot = if model.is_timed() { model.global_index(TIME_VAR) } else { None };
        let clock_atoms = (0..templates.len())
            .map(|ti| {
                let mut atoms = Vec::new();
                if let Some(c) = time_slot {
                    let mut add = |f: &CFormula| {
                        f.for_each_atom(&mut |a| {
                            if let Formula::Cmp(_, x, y) = a {
                                let d = Term::sub(x.clone(), y.clone());
                                let mut timed = false;
                                let mut plain = true;
                                d.for_each_var(&mut |r| match r {
                                    Ref::Global(i) if *i == c => timed = true,
                                    Ref::Global(_) | Ref::Local(_) | Ref::SelfId => {}
                                    _ => plain = false,
                                });
                                if timed && plain {
                                    atoms.push((x.clone(), y.clone()));
                                }
                            }
                        })
                    };
                    let ct = &templates[ti];
                    add(&ct.tinv);
                    for tr in &ct.transitions {
                        add(&tr.guard);
                    }
                    for (rt, f) in &roles {
                        if *rt == ti {
                            add(f);
                        }
                    }
                }
                atoms
            })
            .collect();
        let selector = model
            .bip
            .as_ref()
            .and_then(|b| model.global_index(&b.selector).map(|g| (g, b.selector_transitions.clone())));
        let clock_caps = if time_slot.is_some() { clock_caps(model, &templates, &roles) } else { None };
        Ok(Explorer {
            model,
            bounds,
            templates,
            roles,
            instances,
            inst_template,
            time_slot,
            clock_atoms,
            selector,
            clock_caps,
        })
    }

    /// Key under which a state is recorded as visited. With clock caps
    /// available, states that differ only by a time shift or by clock
    /// values beyond every constant share a key.
    fn key(&self, s: &ConcreteState) -> ConcreteState {
        let (Some(c), Some(caps)) = (self.time_slot, &self.clock_caps) else { return s.clone() };
        let now = s.globals[c];
        let mut k = s.clone();
        k.globals[c] = 0;
        for (i, &ti) in self.inst_template.iter().enumerate() {
            for (l, cap) in caps[ti].iter().enumerate() {
                if let Some(cap) = cap {
                    k.locals[i][l] = (now - s.locals[i][l]).min(cap + 1);
                }
            }
        }
        k
    }

    fn env<'b>(&self, s: &'b ConcreteState, i: usize) -> Env<'b> {
        Env {
            globals: &s.globals,
            locals: &s.locals[i],
            id: self.instances[i].id,
            peers: &[],
            post_globals: &[],
            post_locals: &[],
        }
    }

    fn initial_states(&self) -> Result<Vec<ConcreteState>, OracleError> {
        let ng = self.model.globals.len();
        let mut slots: Vec<(Option<usize>, usize)> = (0..ng).map(|g| (None, g)).collect();
        for (i, &ti) in self.inst_template.iter().enumerate() {
            for l in 0..self.model.templates[ti].locals.len() {
                slots.push((Some(i), l));
            }
        }
        // Rename every instance's Init into one formula over state slots,
        // using post references as the unknowns.
        let slot_of =
            |inst: Option<usize>, idx: usize| slots.iter().position(|&(a, b)| a == inst && b == idx).unwrap();
        let mut parts = Vec::new();
        for (i, &ti) in self.inst_template.iter().enumerate() {
            let id = self.instances[i].id;
            parts.push(self.templates[ti].init.subst(&mut |r: &Ref| match *r {
                Ref::Global(g) => Term::Var(Ref::GlobalPost(slot_of(None, g))),
                Ref::Local(l) => Term::Var(Ref::GlobalPost(slot_of(Some(i), l))),
                Ref::SelfId => Term::Const(id),
                other => Term::Var(other),
            }));
        }
        if self.model.time_model == TimeModel::DenseRational {
            let u = self.model.global_index(DENOMINATOR_VAR).expect("denominator");
            parts.push(Formula::eq(Term::Var(Ref::GlobalPost(u)), Term::Const(1)));
        }
        let f = Formula::and(parts);
        let unknown: Vec<Ref> = (0..slots.len()).map(Ref::GlobalPost).collect();
        let sols = solve(&f, &unknown, &|_| None, self.bounds.value_box, self.bounds.max_states)?;
        Ok(sols
            .into_iter()
            .map(|vals| {
                let mut st = ConcreteState {
                    globals: vals[..ng].to_vec(),
                    locals: self
                        .inst_template
                        .iter()
                        .map(|&ti| vec![0; self.model.templates[ti].locals.len()])
                        .collect(),
                };
                for (k, &(inst, idx)) in slots.iter().enumerate().skip(ng) {
                    st.locals[inst.unwrap()][idx] = vals[k];
                }
                st
            })
            .collect())
    }

    /// Possible effects of transition `tr` of instance `i` from `s`. With
    /// `keep_globals` false the global part of the result is left unchanged.
    fn fire(
        &self,
        s: &ConcreteState,
        i: usize,
        tr: &CTransition,
        keep_globals: bool,
    ) -> Result<Vec<ConcreteState>, OracleError> {
        if !holds(&tr.guard, &self.env(s, i))? {
            return Ok(Vec::new());
        }
        let unknown: Vec<Ref> = tr
            .writes_globals
            .iter()
            .map(|&g| Ref::GlobalPost(g))
            .chain(tr.writes_locals.iter().map(|&l| Ref::LocalPost(l)))
            .collect();
        let env = self.env(s, i);
        let lookup = |r: &Ref| match r {
            Ref::GlobalPost(g) => Some(s.globals[*g]),
            Ref::LocalPost(l) => Some(s.locals[i][*l]),
            other => env.get(other),
        };
        let sols = solve(&tr.update, &unknown, &lookup, self.bounds.value_box, self.bounds.max_states)?;
        Ok(sols
            .into_iter()
            .map(|vals| {
                let mut next = s.clone();
                for (k, r) in unknown.iter().enumerate() {
                    match *r {
                        Ref::GlobalPost(g) if keep_globals => next.globals[g] = vals[k],
                        Ref::LocalPost(l) => next.locals[i][l] = vals[k],
                        _ => {}
                    }
                }
                next
            })
            .collect())
    }

    fn tinv_holds(&self, s: &ConcreteState) -> Result<bool, OracleError> {
        for (i, &ti) in self.inst_template.iter().enumerate() {
            if !holds(&self.templates[ti].tinv, &self.env(s, i))? {
                return Ok(false);
            }
        }
        Ok(true)
    }

    fn time_deltas(&self, s: &ConcreteState) -> Result<Vec<i64>, OracleError> {
        let Some(c) = self.time_slot else { return Ok(Vec::new()) };
        let now = s.globals[c];
        let mut out = vec![1];
        for (i, &ti) in self.inst_template.iter().enumerate() {
            let env = self.env(s, i);
            for (a, b) in &self.clock_atoms[ti] {
                let d = Term::sub(a.clone(), b.clone());
                let (k, o) = d.affine_in(&|r: &Ref| *r == Ref::Global(c), &|r: &Ref| env.get(r))?;
                if k == 0 {
                    continue;
                }
                // k * t + o = 0 at t = -o / k
                let lo = (-o).div_euclid(k);
                for t in [lo, lo + 1] {
                    out.push(t - now);
                }
            }
        }
        out.retain(|&d| d >= 1 && d <= self.bounds.time_horizon);
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }

    fn error_binding(&self, s: &ConcreteState) -> Result<Option<Vec<usize>>, OracleError> {
        if self.roles.is_empty() {
            return Ok(None);
        }
        let mut binding = Vec::new();
        self.bind(s, &mut binding)
    }

    fn bind(&self, s: &ConcreteState, binding: &mut Vec<usize>) -> Result<Option<Vec<usize>>, OracleError> {
        if binding.len() == self.roles.len() {
            let ids: Vec<i64> = binding.iter().map(|&i| self.instances[i].id).collect();
            for (j, (_, f)) in self.roles.iter().enumerate() {
                let i = binding[j];
                let env = Env { peers: &ids, ..self.env(s, i) };
                if !holds(f, &env)? {
                    return Ok(None);
                }
            }
            return Ok(Some(binding.clone()));
        }
        let ti = self.roles[binding.len()].0;
        for i in 0..self.instances.len() {
            if self.inst_template[i] != ti || binding.contains(&i) {
                continue;
            }
            // Reject early when the role does not mention other roles.
            let (_, f) = &self.roles[binding.len()];
            if !f.mentions(|r| matches!(r, Ref::Peer(_))) && !holds(f, &self.env(s, i))? {
                continue;
            }
            binding.push(i);
            let r = self.bind(s, binding)?;
            binding.pop();
            if r.is_some() {
                return Ok(r);
            }
        }
        Ok(None)
    }

    fn successors(&self, s: &ConcreteState) -> Result<Vec<(StepLabel, ConcreteState)>, OracleError> {
        let mut out = Vec::new();
        // local steps
        for (i, &ti) in self.inst_template.iter().enumerate() {
            for tr in &self.templates[ti].transitions {
                if tr.kind != TransitionKind::Local {
                    continue;
                }
                let is_selector =
                    self.selector.as_ref().filter(|(_, ts)| ts.contains(&(ti, tr.index))).map(|(g, _)| *g);
                for next in self.fire(s, i, tr, true)? {
                    let label = match is_selector {
                        Some(g) => StepLabel::IactAssign {
                            instance: i,
                            transition: tr.index,
                            value: next.globals[g],
                        },
                        None => StepLabel::Local { instance: i, transition: tr.index },
                    };
                    out.push((label, next));
                }
            }
        }
        // channels
        for ch in &self.model.channels {
            let send = TransitionKind::Send(ch.clone());
            let recv = TransitionKind::Receive(ch.clone());
            for (si, &st) in self.inst_template.iter().enumerate() {
                for str_ in self.templates[st].transitions.iter().filter(|t| t.kind == send) {
                    for mid in self.fire(s, si, str_, true)? {
                        for (ri, &rt) in self.inst_template.iter().enumerate() {
                            if ri == si {
                                continue;
                            }
                            for rtr in self.templates[rt].transitions.iter().filter(|t| t.kind == recv) {
                                for next in self.fire(&mid, ri, rtr, true)? {
                                    out.push((
                                        StepLabel::Comm {
                                            channel: ch.clone(),
                                            sender: si,
                                            send_transition: str_.index,
                                            receiver: ri,
                                            recv_transition: rtr.index,
                                            intermediate_globals: mid.globals.clone(),
                                        },
                                        next,
                                    ));
                                }
                            }
                        }
                    }
                }
            }
        }
        // barriers
        for b in &self.model.barriers {
            let kind = TransitionKind::Barrier(b.clone());
            let mut per_inst: Vec<Vec<(Option<usize>, Vec<i64>)>> = Vec::new();
            for (i, &ti) in self.inst_template.iter().enumerate() {
                let own: Vec<&CTransition> =
                    self.templates[ti].transitions.iter().filter(|t| t.kind == kind).collect();
                let mut opts = Vec::new();
                if own.is_empty() {
                    opts.push((None, s.locals[i].clone()));
                }
                for tr in own {
                    for next in self.fire(s, i, tr, false)? {
                        opts.push((Some(tr.index), next.locals[i].clone()));
                    }
                }
                if opts.is_empty() {
                    per_inst.clear();
                    break;
                }
                per_inst.push(opts);
            }
            if per_inst.len() != self.instances.len() {
                continue;
            }
            let total = per_inst
                .iter()
                .try_fold(1usize, |acc, o| acc.checked_mul(o.len()))
                .filter(|&n| n <= self.bounds.max_barrier_choices);
            if total.is_none() {
                return Err(OracleError::StateExplosionAbort {
                    what: "barrier choice combinations",
                    limit: self.bounds.max_barrier_choices,
                });
            }
            let mut idx = vec![0usize; per_inst.len()];
            loop {
                let mut next = s.clone();
                let mut choices = Vec::new();
                for (i, &k) in idx.iter().enumerate() {
                    let (c, l) = &per_inst[i][k];
                    choices.push(*c);
                    next.locals[i] = l.clone();
                }
                out.push((StepLabel::Barrier { barrier: b.clone(), choices }, next));
                let mut k = 0;
                while k < idx.len() {
                    idx[k] += 1;
                    if idx[k] < per_inst[k].len() {
                        break;
                    }
                    idx[k] = 0;
                    k += 1;
                }
                if k == idx.len() {
                    break;
                }
            }
        }
        // time
        if let Some(c) = self.time_slot {
            for delta in self.time_deltas(s)? {
                let mut next = s.clone();
                next.globals[c] += delta;
                if self.tinv_holds(&next)? {
                    out.push((StepLabel::TimeElapse { delta }, next));
                }
            }
        }
        Ok(out)
    }

    fn trace(
        &self,
        states: &[ConcreteState],
        parents: &[Option<(usize, StepLabel)>],
        last: usize,
        binding: Vec<usize>,
    ) -> Trace {
        let mut steps = Vec::new();
        let mut cur = last;
        while let Some((p, label)) = &parents[cur] {
            steps.push(TraceStep { label: label.clone(), state: states[cur].clone() });
            cur = *p;
        }
        steps.reverse();
        Trace {
            model: self.model.name.clone(),
            globals: self.model.globals.clone(),
            instances: self.instances.clone(),
            initial: states[cur].clone(),
            steps,
            error_binding: binding,
        }
    }

    fn explore(&self) -> Result<ExploreOutcome, OracleError> {
        let mut states: Vec<ConcreteState> = Vec::new();
        let mut parents: Vec<Option<(usize, StepLabel)>> = Vec::new();
        let mut index: HashMap<ConcreteState, usize> = HashMap::new();
        let mut queue: VecDeque<(usize, usize)> = VecDeque::new();
        if self.roles.is_empty() {
            return Ok(ExploreOutcome::UnreachableWithinBounds { states_visited: 0 });
        }
        for s in self.initial_states()? {
            let key = self.key(&s);
            if index.contains_key(&key) {
                continue;
            }
            let k = states.len();
            index.insert(key, k);
            states.push(s.clone());
            parents.push(None);
            if let Some(b) = self.error_binding(&s)? {
                return Ok(ExploreOutcome::Reachable {
                    trace: self.trace(&states, &parents, k, b),
                    states_visited: states.len(),
                });
            }
            queue.push_back((k, 0));
        }
        while let Some((k, depth)) = queue.pop_front() {
            if depth >= self.bounds.depth {
                continue;
            }
            let s = states[k].clone();
            for (label, next) in self.successors(&s)? {
                let key = self.key(&next);
                if index.contains_key(&key) {
                    continue;
                }
                if states.len() >= self.bounds.max_states {
                    return Err(OracleError::StateExplosionAbort {
                        what: "states",
                        limit: self.bounds.max_states,
                    });
                }
                let n = states.len();
                index.insert(key, n);
                states.push(next.clone());
                parents.push(Some((k, label)));
                if let Some(b) = self.error_binding(&next)? {
                    return Ok(ExploreOutcome::Reachable {
                        trace: self.trace(&states, &parents, n, b),
                        states_visited: states.len(),
                    });
                }
                queue.push_back((n, depth + 1));
            }
        }
        Ok(ExploreOutcome::UnreachableWithinBounds { states_visited: states.len() })
    }
}

/// Breadth-first search for a state matching the error specification in
/// the instantiation with `counts[i]` instances of template `i`.
pub fn explore(model: &SystemModel, counts: &[usize], bounds: Bounds) -> Result<ExploreOutcome, OracleError> {
    Explorer::new(model, counts, bounds)?.explore()
}

/// Instance counts of the instantiation with `n` instances of every
/// replicated template and one of every singleton.
pub fn uniform_counts(model: &SystemModel, n: usize) -> Vec<usize> {
    model.templates.iter().map(|t| if t.is_replicated() { n } else { 1 }).collect()
}

// ---------------------------------------------------------------------------
// Replay

/// Variables that step `i` of a trace may change: `(globals, (instance,
/// local))`.
pub fn step_footprint(model: &SystemModel, trace: &Trace, i: usize) -> (Vec<usize>, Vec<(usize, usize)>) {
    let mut globals = Vec::new();
    let mut locals = Vec::new();
    let tmpl = |inst: usize| model.template_index(&trace.instances[inst].template);
    let mut add = |inst: usize, tr: usize| {
        let Some(ti) = tmpl(inst) else { return };
        let Some(t) = model.templates[ti].transitions.get(tr) else { return };
        let (g, l) = refs_written(&compile(model, ti, &t.update));
        if !matches!(t.kind, TransitionKind::Barrier(_)) {
            globals.extend(g);
        }
        locals.extend(l.into_iter().map(|l| (inst, l)));
    };
    match &trace.steps[i].label {
        StepLabel::Local { instance, transition } | StepLabel::IactAssign { instance, transition, .. } => {
            add(*instance, *transition)
        }
        StepLabel::Comm { sender, send_transition, receiver, recv_transition, .. } => {
            add(*sender, *send_transition);
            add(*receiver, *recv_transition);
        }
        StepLabel::Barrier { choices, .. } => {
            for (k, c) in choices.iter().enumerate() {
                if let Some(t) = c {
                    add(k, *t);
                }
            }
        }
        StepLabel::TimeElapse { .. } => {
            if let Some(c) = model.global_index(TIME_VAR) {
                globals.push(c);
            }
        }
    }
    globals.sort_unstable();
    globals.dedup();
    locals.sort_unstable();
    locals.dedup();
    (globals, locals)
}

struct Replayer<'a> {
    ex: Explorer<'a>,
}

impl Replayer<'_> {
    fn shape_ok(&self, s: &ConcreteState) -> bool {
        s.globals.len() == self.ex.model.globals.len()
            && s.locals.len() == self.ex.instances.len()
            && s.locals
                .iter()
                .zip(&self.ex.inst_template)
                .all(|(l, &ti)| l.len() == self.ex.model.templates[ti].locals.len())
    }

    /// Whether `tr` of instance `i` leads from `pre` to locals `post_locals`
    /// and (when `globals_after` is given) globals `globals_after`. When the
    /// globals are discarded, some global post-valuation must exist.
    fn step_ok(
        &self,
        pre_globals: &[i64],
        pre_locals: &[i64],
        i: usize,
        tr: &CTransition,
        post_locals: &[i64],
        globals_after: Option<&[i64]>,
    ) -> Result<bool, OracleError> {
        let env = Env {
            globals: pre_globals,
            locals: pre_locals,
            id: self.ex.instances[i].id,
            peers: &[],
            post_globals: &[],
            post_locals: &[],
        };
        if !holds(&tr.guard, &env)? {
            return Ok(false);
        }
        for (l, (a, b)) in pre_locals.iter().zip(post_locals).enumerate() {
            if a != b && !tr.writes_locals.contains(&l) {
                return Ok(false);
            }
        }
        let post_l: Vec<Option<i64>> = post_locals.iter().map(|v| Some(*v)).collect();
        match globals_after {
            Some(ga) => {
                for (g, (a, b)) in pre_globals.iter().zip(ga).enumerate() {
                    if a != b && !tr.writes_globals.contains(&g) {
                        return Ok(false);
                    }
                }
                let post_g: Vec<Option<i64>> = ga.iter().map(|v| Some(*v)).collect();
                let env = Env { post_globals: &post_g, post_locals: &post_l, ..env };
                Ok(holds(&tr.update, &env)?)
            }
            None => {
                let unknown: Vec<Ref> = tr.writes_globals.iter().map(|&g| Ref::GlobalPost(g)).collect();
                let env = Env { post_locals: &post_l, ..env };
                let lookup = |r: &Ref| match r {
                    Ref::GlobalPost(g) => Some(pre_globals[*g]),
                    other => env.get(other),
                };
                let sols = solve(
                    &tr.update,
                    &unknown,
                    &lookup,
                    self.ex.bounds.value_box,
                    self.ex.bounds.max_states,
                )?;
                Ok(!sols.is_empty())
            }
        }
    }

    fn transition(&self, i: usize, index: usize) -> Option<&CTransition> {
        self.ex.templates[self.ex.inst_template[i]].transitions.get(index)
    }

    fn others_unchanged(&self, pre: &ConcreteState, post: &ConcreteState, except: &[usize]) -> bool {
        (0..pre.locals.len()).all(|k| except.contains(&k) || pre.locals[k] == post.locals[k])
    }

    fn step(
        &self,
        pre: &ConcreteState,
        label: &StepLabel,
        post: &ConcreteState,
    ) -> Result<bool, OracleError> {
        let n = self.ex.instances.len();
        match label {
            StepLabel::Local { instance, transition } => {
                let i = *instance;
                if i >= n {
                    return Ok(false);
                }
                let Some(tr) = self.transition(i, *transition) else { return Ok(false) };
                if tr.kind != TransitionKind::Local || self.is_selector(i, *transition) {
                    return Ok(false);
                }
                Ok(self.others_unchanged(pre, post, &[i])
                    && self.step_ok(
                        &pre.globals,
                        &pre.locals[i],
                        i,
                        tr,
                        &post.locals[i],
                        Some(&post.globals),
                    )?)
            }
            StepLabel::IactAssign { instance, transition, value } => {
                let i = *instance;
                if i >= n || !self.is_selector(i, *transition) {
                    return Ok(false);
                }
                let Some(tr) = self.transition(i, *transition) else { return Ok(false) };
                let g = self.ex.selector.as_ref().unwrap().0;
                Ok(post.globals[g] == *value
                    && self.others_unchanged(pre, post, &[i])
                    && self.step_ok(
                        &pre.globals,
                        &pre.locals[i],
                        i,
                        tr,
                        &post.locals[i],
                        Some(&post.globals),
                    )?)
            }
            StepLabel::TimeElapse { delta } => {
                let Some(c) = self.ex.time_slot else { return Ok(false) };
                if *delta < 0 || post.globals[c] != pre.globals[c] + delta {
                    return Ok(false);
                }
                let same_globals =
                    pre.globals.iter().zip(&post.globals).enumerate().all(|(g, (a, b))| g == c || a == b);
                Ok(same_globals && pre.locals == post.locals && self.ex.tinv_holds(post)?)
            }
            StepLabel::Comm {
                channel,
                sender,
                send_transition,
                receiver,
                recv_transition,
                intermediate_globals,
            } => {
                let (s, r) = (*sender, *receiver);
                if s >= n || r >= n || s == r || intermediate_globals.len() != pre.globals.len() {
                    return Ok(false);
                }
                let (Some(st), Some(rt)) =
                    (self.transition(s, *send_transition), self.transition(r, *recv_transition))
                else {
                    return Ok(false);
                };
                if st.kind != TransitionKind::Send(channel.clone())
                    || rt.kind != TransitionKind::Receive(channel.clone())
                {
                    return Ok(false);
                }
                Ok(self.others_unchanged(pre, post, &[s, r])
                    && self.step_ok(
                        &pre.globals,
                        &pre.locals[s],
                        s,
                        st,
                        &post.locals[s],
                        Some(intermediate_globals),
                    )?
                    && self.step_ok(
                        intermediate_globals,
                        &pre.locals[r],
                        r,
                        rt,
                        &post.locals[r],
                        Some(&post.globals),
                    )?)
            }
            StepLabel::Barrier { barrier, choices } => {
                if choices.len() != n || pre.globals != post.globals {
                    return Ok(false);
                }
                let kind = TransitionKind::Barrier(barrier.clone());
                if !self.ex.model.barriers.contains(barrier) {
                    return Ok(false);
                }
                for (i, c) in choices.iter().enumerate() {
                    let ti = self.ex.inst_template[i];
                    let has_own = self.ex.templates[ti].transitions.iter().any(|t| t.kind == kind);
                    match c {
                        None => {
                            if has_own || pre.locals[i] != post.locals[i] {
                                return Ok(false);
                            }
                        }
                        Some(t) => {
                            let Some(tr) = self.transition(i, *t) else { return Ok(false) };
                            if tr.kind != kind
                                || !self.step_ok(
                                    &pre.globals,
                                    &pre.locals[i],
                                    i,
                                    tr,
                                    &post.locals[i],
                                    None,
                                )?
                            {
                                return Ok(false);
                            }
                        }
                    }
                }
                Ok(true)
            }
        }
    }

    fn is_selector(&self, i: usize, transition: usize) -> bool {
        let ti = self.ex.inst_template[i];
        self.ex.selector.as_ref().is_some_and(|(_, ts)| ts.contains(&(ti, transition)))
    }

    fn run(&self, trace: &Trace) -> Result<bool, OracleError> {
        if !self.shape_ok(&trace.initial) || trace.steps.iter().any(|s| !self.shape_ok(&s.state)) {
            return Ok(false);
        }
        for (i, &ti) in self.ex.inst_template.iter().enumerate() {
            if !holds(&self.ex.templates[ti].init, &self.ex.env(&trace.initial, i))? {
                return Ok(false);
            }
        }
        if self.ex.model.time_model == TimeModel::DenseRational {
            let u = self.ex.model.global_index(DENOMINATOR_VAR).expect("denominator");
            if trace.initial.globals[u] < 1 {
                return Ok(false);
            }
        }
        let mut pre = &trace.initial;
        for st in &trace.steps {
            if !self.step(pre, &st.label, &st.state)? {
                return Ok(false);
            }
            pre = &st.state;
        }
        // error binding: injective, matching templates, constraints hold
        let b = &trace.error_binding;
        if self.ex.roles.is_empty() || b.len() != self.ex.roles.len() {
            return Ok(false);
        }
        let mut seen = HashSet::new();
        for (j, &i) in b.iter().enumerate() {
            if i >= self.ex.instances.len()
                || !seen.insert(i)
                || self.ex.inst_template[i] != self.ex.roles[j].0
            {
                return Ok(false);
            }
        }
        let ids: Vec<i64> = b.iter().map(|&i| self.ex.instances[i].id).collect();
        let fin = trace.final_state();
        for (j, (_, f)) in self.ex.roles.iter().enumerate() {
            let env = Env { peers: &ids, ..self.ex.env(fin, b[j]) };
            if !holds(f, &env)? {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

/// Whether every step of `trace` obeys its rule, starting from an initial
/// state and ending in a state matching the error specification.
pub fn replay(model: &SystemModel, trace: &Trace) -> bool {
    if trace.model != model.name || trace.globals != model.globals {
        return false;
    }
    let mut counts = vec![0usize; model.templates.len()];
    for (k, inst) in trace.instances.iter().enumerate() {
        let Some(ti) = model.template_index(&inst.template) else { return false };
        let t = &model.templates[ti];
        if inst.replicated != t.is_replicated() || (!inst.replicated && inst.id != 0) || inst.id < 0 {
            return false;
        }
        // instances must be grouped by template in model order
        if k > 0 {
            let prev = model.template_index(&trace.instances[k - 1].template).unwrap();
            if prev > ti {
                return false;
            }
        }
        counts[ti] += 1;
    }
    let ids: HashSet<(&str, i64)> = trace.instances.iter().map(|i| (i.template.as_str(), i.id)).collect();
    if ids.len() != trace.instances.len() {
        return false;
    }
    let Ok(ex) = Explorer::new(model, &counts, Bounds::default()) else { return false };
    let mut ex = ex;
    ex.instances = trace.instances.clone();
    Replayer { ex }.run(trace).unwrap_or(false)
}
