//! System model: process templates with guarded transitions, shared
//! variables, channels, barriers, ports and a coverability error spec.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::constraint::{CmpOp, Constraint, Formula, Term, VarRef};

/// Name of the global time numerator in timed models.
pub const TIME_VAR: &str = "C";
/// Name of the time denominator in dense-time models.
pub const DENOMINATOR_VAR: &str = "U";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Multiplicity {
    Singleton,
    Replicated,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TimeModel {
    Untimed,
    Discrete,
    /// Rational time as numerator `C` over a positive constant denominator `U`.
    DenseRational,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TransitionKind {
    Local,
    Send(String),
    Receive(String),
    Barrier(String),
    Port(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuardedTransition {
    pub kind: TransitionKind,
    /// Over unprimed variables only.
    pub guard: Constraint,
    /// Relates primed to unprimed variables. A variable whose primed form
    /// does not occur keeps its value.
    pub update: Constraint,
}

impl GuardedTransition {
    pub fn new(kind: TransitionKind, guard: Constraint, update: Constraint) -> Self {
        GuardedTransition { kind, guard, update }
    }

    /// Always-enabled transition that changes nothing.
    pub fn neutral(kind: TransitionKind) -> Self {
        GuardedTransition { kind, guard: Formula::True, update: Formula::True }
    }

    pub fn writes_global(&self, name: &str) -> bool {
        self.update.mentions(|v| matches!(v, VarRef::GlobalPrimed(n) if n == name))
    }

    pub fn writes_local(&self, name: &str) -> bool {
        self.update.mentions(|v| matches!(v, VarRef::LocalPrimed(n) if n == name))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalDecl {
    pub name: String,
    pub is_clock: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcessTemplate {
    pub name: String,
    pub multiplicity: Multiplicity,
    pub locals: Vec<LocalDecl>,
    pub init: Constraint,
    pub transitions: Vec<GuardedTransition>,
    pub time_invariant: Constraint,
}

impl ProcessTemplate {
    pub fn new(name: impl Into<String>, multiplicity: Multiplicity) -> Self {
        ProcessTemplate {
            name: name.into(),
            multiplicity,
            locals: Vec::new(),
            init: Formula::True,
            transitions: Vec::new(),
            time_invariant: Formula::True,
        }
    }

    pub fn is_replicated(&self) -> bool {
        self.multiplicity == Multiplicity::Replicated
    }

    pub fn local_index(&self, name: &str) -> Option<usize> {
        self.locals.iter().position(|l| l.name == name)
    }

    pub fn transitions_of<'a>(
        &'a self,
        pred: impl Fn(&TransitionKind) -> bool + 'a,
    ) -> impl Iterator<Item = (usize, &'a GuardedTransition)> + 'a {
        self.transitions.iter().enumerate().filter(move |(_, t)| pred(&t.kind))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PortDecl {
    pub name: String,
    pub owner: String,
}

/// One coverability role: some instance of `template` whose state satisfies
/// `constraint`. Roles on the same replicated template denote distinct
/// instances.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorRole {
    pub name: String,
    pub template: String,
    pub constraint: Constraint,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorSpec {
    pub roles: Vec<ErrorRole>,
}

impl ErrorSpec {
    pub fn is_empty(&self) -> bool {
        self.roles.is_empty()
    }
}

/// Bookkeeping left behind by [`crate::encoder::bip_to_barrier`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BipReduction {
    pub selector: String,
    pub barrier: String,
    /// Interactions in label order: interaction `i` has selector value `i + 1`.
    pub interactions: Vec<Vec<String>>,
    /// `(template, transition)` of every selector-assigning transition.
    pub selector_transitions: Vec<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemModel {
    pub name: String,
    pub time_model: TimeModel,
    /// Global variables, including `C` (and `U`) for timed models.
    pub globals: Vec<String>,
    pub templates: Vec<ProcessTemplate>,
    pub channels: Vec<String>,
    pub barriers: Vec<String>,
    pub ports: Vec<PortDecl>,
    pub interactions: Vec<Vec<String>>,
    pub error: ErrorSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bip: Option<BipReduction>,
}

impl SystemModel {
    pub fn new(name: impl Into<String>, time_model: TimeModel) -> Self {
        let mut m = SystemModel {
            name: name.into(),
            time_model,
            globals: Vec::new(),
            templates: Vec::new(),
            channels: Vec::new(),
            barriers: Vec::new(),
            ports: Vec::new(),
            interactions: Vec::new(),
            error: ErrorSpec::default(),
            bip: None,
        };
        m.set_time_model(time_model);
        m
    }

    /// Switches the time model, adding or removing the reserved time globals.
    pub fn set_time_model(&mut self, tm: TimeModel) {
        self.globals.retain(|g| g != TIME_VAR && g != DENOMINATOR_VAR);
        match tm {
            TimeModel::Untimed => {}
            TimeModel::Discrete => self.globals.insert(0, TIME_VAR.to_string()),
            TimeModel::DenseRational => {
                self.globals.insert(0, DENOMINATOR_VAR.to_string());
                self.globals.insert(0, TIME_VAR.to_string());
            }
        }
        self.time_model = tm;
    }

    pub fn is_timed(&self) -> bool {
        self.time_model != TimeModel::Untimed
    }

    pub fn template_index(&self, name: &str) -> Option<usize> {
        self.templates.iter().position(|t| t.name == name)
    }

    pub fn global_index(&self, name: &str) -> Option<usize> {
        self.globals.iter().position(|g| g == name)
    }

    pub fn is_reserved_global(&self, name: &str) -> bool {
        match self.time_model {
            TimeModel::Untimed => false,
            TimeModel::Discrete => name == TIME_VAR,
            TimeModel::DenseRational => name == TIME_VAR || name == DENOMINATOR_VAR,
        }
    }

    pub fn port_owner(&self, port: &str) -> Option<&str> {
        self.ports.iter().find(|p| p.name == port).map(|p| p.owner.as_str())
    }

    /// Number of error roles bound to each template.
    pub fn error_role_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.templates.len()];
        for r in &self.error.roles {
            if let Some(i) = self.template_index(&r.template) {
                counts[i] += 1;
            }
        }
        counts
    }

    pub fn all_singleton(&self) -> bool {
        self.templates.iter().all(|t| !t.is_replicated())
    }

    pub fn is_homogeneous(&self) -> bool {
        self.templates.len() == 1 && self.templates[0].is_replicated()
    }
}

// ---------------------------------------------------------------------------
// Validation

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Diagnostic {
    DuplicateName {
        kind: String,
        name: String,
    },
    DuplicatePortOwner(String),
    UndeclaredChannel(String),
    UndeclaredBarrier(String),
    UndeclaredPort(String),
    UndeclaredTemplate(String),
    UndeclaredVariable {
        context: String,
        name: String,
    },
    PrimedOutsideUpdate {
        context: String,
        name: String,
    },
    SelfIdInSingleton(String),
    PeerIdOutsideErrorSpec {
        context: String,
    },
    UnknownPeerRole(String),
    NonConvexTimeInvariant(String),
    EmptyInteraction(usize),
    UndeclaredInteractionPort {
        interaction: usize,
        port: String,
    },
    InteractionSharedOwner {
        interaction: usize,
        template: String,
    },
    PortTransitionOnForeignPort {
        template: String,
        port: String,
    },
    /// A local and a port transition of the template may be enabled in the
    /// same state; their guards are not syntactically disjoint.
    PossibleLocalPortOverlap {
        template: String,
        local: usize,
        port: usize,
    },
    SingletonRoleReused(String),
    NonPositiveDivisor {
        context: String,
    },
    /// Only time elapse may change `C`; `U` is constant.
    ReservedGlobalWritten {
        context: String,
        name: String,
    },
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Diagnostic::*;
        match self {
            DuplicateName { kind, name } => write!(f, "duplicate {kind} name `{name}`"),
            DuplicatePortOwner(p) => write!(f, "port `{p}` is owned by more than one template"),
            UndeclaredChannel(c) => write!(f, "undeclared channel `{c}`"),
            UndeclaredBarrier(b) => write!(f, "undeclared barrier `{b}`"),
            UndeclaredPort(p) => write!(f, "undeclared port `{p}`"),
            UndeclaredTemplate(t) => write!(f, "undeclared template `{t}`"),
            UndeclaredVariable { context, name } => {
                write!(f, "{context}: undeclared variable `{name}`")
            }
            PrimedOutsideUpdate { context, name } => {
                write!(f, "{context}: primed variable `{name}'` outside an update")
            }
            SelfIdInSingleton(t) => write!(f, "singleton template `{t}` refers to `self`"),
            PeerIdOutsideErrorSpec { context } => {
                write!(f, "{context}: role ids may only be used in the error spec")
            }
            UnknownPeerRole(r) => write!(f, "unknown error role `{r}`"),
            NonConvexTimeInvariant(t) => write!(
                f,
                "time invariant of `{t}` is not a conjunction of time bounds, time-free \
                 formulas and time-free-guarded bounds"
            ),
            EmptyInteraction(i) => write!(f, "interaction #{} is empty", i + 1),
            UndeclaredInteractionPort { interaction, port } => {
                write!(f, "interaction #{} uses undeclared port `{port}`", interaction + 1)
            }
            InteractionSharedOwner { interaction, template } => {
                write!(f, "interaction #{} uses two ports of template `{template}`", interaction + 1)
            }
            PortTransitionOnForeignPort { template, port } => {
                write!(f, "template `{template}` has a transition on port `{port}` it does not own")
            }
            PossibleLocalPortOverlap { template, local, port } => write!(
                f,
                "template `{template}`: local transition #{local} and port transition #{port} \
                 may be enabled in the same state (possible overlap)"
            ),
            SingletonRoleReused(t) => {
                write!(f, "error spec binds singleton template `{t}` to more than one role")
            }
            NonPositiveDivisor { context } => write!(f, "{context}: divisor must be positive"),
            ReservedGlobalWritten { context, name } => {
                write!(f, "{context}: the reserved time variable `{name}` cannot be assigned")
            }
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Site {
    Guard,
    Update,
    Init,
    TimeInvariant,
    Error,
}

struct Scope<'a> {
    model: &'a SystemModel,
    template: Option<&'a ProcessTemplate>,
    context: String,
    site: Site,
}

impl Scope<'_> {
    fn check(&self, c: &Constraint, out: &mut Vec<Diagnostic>) {
        let mut seen = BTreeSet::new();
        c.for_each_var(&mut |v| {
            if !seen.insert(v.clone()) {
                return;
            }
            match v {
                VarRef::Global(n) | VarRef::GlobalPrimed(n) => {
                    if self.model.global_index(n).is_none() {
                        out.push(Diagnostic::UndeclaredVariable {
                            context: self.context.clone(),
                            name: n.clone(),
                        });
                    }
                }
                VarRef::Local(n) | VarRef::LocalPrimed(n) => {
                    if self.template.and_then(|t| t.local_index(n)).is_none() {
                        out.push(Diagnostic::UndeclaredVariable {
                            context: self.context.clone(),
                            name: n.clone(),
                        });
                    }
                }
                VarRef::SelfId => {
                    if let Some(t) = self.template {
                        if !t.is_replicated() {
                            out.push(Diagnostic::SelfIdInSingleton(t.name.clone()));
                        }
                    }
                }
                VarRef::PeerId(r) => {
                    if self.site != Site::Error {
                        out.push(Diagnostic::PeerIdOutsideErrorSpec { context: self.context.clone() });
                    } else if !self.model.error.roles.iter().any(|role| &role.name == r) {
                        out.push(Diagnostic::UnknownPeerRole(r.clone()));
                    }
                }
            }
            if v.is_primed() && self.site != Site::Update {
                let name = match v {
                    VarRef::GlobalPrimed(n) | VarRef::LocalPrimed(n) => n.clone(),
                    _ => unreachable!(),
                };
                out.push(Diagnostic::PrimedOutsideUpdate { context: self.context.clone(), name });
            }
        });
        c.for_each_atom(&mut |a| {
            if let Formula::Divides(k, _) = a {
                if *k <= 0 {
                    out.push(Diagnostic::NonPositiveDivisor { context: self.context.clone() });
                }
            }
        });
    }
}

fn push_duplicates<'a>(
    kind: &str,
    names: impl IntoIterator<Item = &'a String>,
    seen: &mut BTreeSet<String>,
    out: &mut Vec<Diagnostic>,
) {
    for n in names {
        if !seen.insert(n.clone()) {
            out.push(Diagnostic::DuplicateName { kind: kind.into(), name: n.clone() });
        }
    }
}

/// Checks well-formedness; an empty result means the model is well-formed.
pub fn validate_model(model: &SystemModel) -> Vec<Diagnostic> {
    let mut out = Vec::new();

    // Templates, channels, barriers and ports share one namespace.
    let mut names = BTreeSet::new();
    push_duplicates("template", model.templates.iter().map(|t| &t.name), &mut names, &mut out);
    push_duplicates("channel", model.channels.iter(), &mut names, &mut out);
    push_duplicates("barrier", model.barriers.iter(), &mut names, &mut out);
    let mut port_seen = BTreeSet::new();
    for p in &model.ports {
        if !port_seen.insert(p.name.clone()) {
            if !out.contains(&Diagnostic::DuplicatePortOwner(p.name.clone())) {
                out.push(Diagnostic::DuplicatePortOwner(p.name.clone()));
            }
        } else if !names.insert(p.name.clone()) {
            out.push(Diagnostic::DuplicateName { kind: "port".into(), name: p.name.clone() });
        }
        if model.template_index(&p.owner).is_none() {
            out.push(Diagnostic::UndeclaredTemplate(p.owner.clone()));
        }
    }
    let mut gseen = BTreeSet::new();
    push_duplicates("global", model.globals.iter(), &mut gseen, &mut out);

    for t in &model.templates {
        let mut lseen = BTreeSet::new();
        push_duplicates("local", t.locals.iter().map(|l| &l.name), &mut lseen, &mut out);
        let scope = |site, context: String| Scope { model, template: Some(t), context, site };
        scope(Site::Init, format!("init of `{}`", t.name)).check(&t.init, &mut out);
        scope(Site::TimeInvariant, format!("tinv of `{}`", t.name)).check(&t.time_invariant, &mut out);
        if !time_invariant_is_convex(&t.time_invariant) {
            out.push(Diagnostic::NonConvexTimeInvariant(t.name.clone()));
        }
        for (i, tr) in t.transitions.iter().enumerate() {
            let ctx = format!("transition #{i} of `{}`", t.name);
            scope(Site::Guard, format!("guard of {ctx}")).check(&tr.guard, &mut out);
            scope(Site::Update, format!("update of {ctx}")).check(&tr.update, &mut out);
            for g in &model.globals {
                if model.is_reserved_global(g) && tr.writes_global(g) {
                    out.push(Diagnostic::ReservedGlobalWritten {
                        context: format!("update of {ctx}"),
                        name: g.clone(),
                    });
                }
            }
            match &tr.kind {
                TransitionKind::Local => {}
                TransitionKind::Send(c) | TransitionKind::Receive(c) => {
                    if !model.channels.contains(c) {
                        push_once(&mut out, Diagnostic::UndeclaredChannel(c.clone()));
                    }
                }
                TransitionKind::Barrier(b) => {
                    if !model.barriers.contains(b) {
                        push_once(&mut out, Diagnostic::UndeclaredBarrier(b.clone()));
                    }
                }
                TransitionKind::Port(p) => match model.port_owner(p) {
                    None => push_once(&mut out, Diagnostic::UndeclaredPort(p.clone())),
                    Some(owner) if owner != t.name => out.push(Diagnostic::PortTransitionOnForeignPort {
                        template: t.name.clone(),
                        port: p.clone(),
                    }),
                    Some(_) => {}
                },
            }
        }
        check_local_port_overlap(t, &mut out);
    }

    for (i, inter) in model.interactions.iter().enumerate() {
        if inter.is_empty() {
            out.push(Diagnostic::EmptyInteraction(i));
        }
        let mut owners = BTreeSet::new();
        for p in inter {
            match model.port_owner(p) {
                None => out.push(Diagnostic::UndeclaredInteractionPort { interaction: i, port: p.clone() }),
                Some(o) => {
                    if !owners.insert(o.to_string()) {
                        out.push(Diagnostic::InteractionSharedOwner {
                            interaction: i,
                            template: o.to_string(),
                        });
                    }
                }
            }
        }
    }

    let mut singleton_roles = BTreeMap::<&str, usize>::new();
    for role in &model.error.roles {
        match model.template_index(&role.template) {
            None => out.push(Diagnostic::UndeclaredTemplate(role.template.clone())),
            Some(ti) => {
                let t = &model.templates[ti];
                if !t.is_replicated() {
                    let c = singleton_roles.entry(&t.name).or_default();
                    *c += 1;
                    if *c == 2 {
                        out.push(Diagnostic::SingletonRoleReused(t.name.clone()));
                    }
                }
                Scope {
                    model,
                    template: Some(t),
                    context: format!("error role `{}`", role.name),
                    site: Site::Error,
                }
                .check(&role.constraint, &mut out);
            }
        }
    }
    let mut rseen = BTreeSet::new();
    push_duplicates("error role", model.error.roles.iter().map(|r| &r.name), &mut rseen, &mut out);
    out
}

fn push_once(out: &mut Vec<Diagnostic>, d: Diagnostic) {
    if !out.contains(&d) {
        out.push(d);
    }
}

fn mentions_time(f: &Constraint) -> bool {
    f.mentions(|v| matches!(v, VarRef::Global(n) if n == TIME_VAR))
}

fn is_time_bound(f: &Constraint) -> bool {
    match f {
        Formula::Cmp(op, _, _) => *op != CmpOp::Ne,
        Formula::And(items) => items.iter().all(is_time_bound),
        Formula::True => true,
        _ => false,
    }
}

/// Syntactic convexity in time: a conjunction of items, each either free of
/// `C`, a single non-`!=` comparison, or `P -> B` with `P` free of `C` and `B`
/// a conjunction of such comparisons.
pub fn time_invariant_is_convex(f: &Constraint) -> bool {
    f.conjuncts().into_iter().all(|item| {
        if !mentions_time(item) {
            return true;
        }
        match item {
            Formula::Cmp(op, _, _) => *op != CmpOp::Ne,
            Formula::Implies(p, b) => !mentions_time(p) && is_time_bound(b),
            _ => false,
        }
    })
}

/// Per-variable integer interval implied by the top-level conjuncts of a
/// guard that compare a single local variable with a constant.
fn guard_intervals(guard: &Constraint) -> HashMap<String, (i64, i64)> {
    let mut iv: HashMap<String, (i64, i64)> = HashMap::new();
    for c in guard.conjuncts() {
        let Formula::Cmp(op, a, b) = c else { continue };
        let (name, op, k) = match (a, b) {
            (Term::Var(VarRef::Local(n)), Term::Const(k)) => (n, *op, *k),
            (Term::Const(k), Term::Var(VarRef::Local(n))) => (n, flip(*op), *k),
            _ => continue,
        };
        let (lo, hi) = match op {
            CmpOp::Eq => (k, k),
            CmpOp::Le => (i64::MIN, k),
            CmpOp::Lt => (i64::MIN, k.saturating_sub(1)),
            CmpOp::Ge => (k, i64::MAX),
            CmpOp::Gt => (k.saturating_add(1), i64::MAX),
            CmpOp::Ne => continue,
        };
        let e = iv.entry(name.clone()).or_insert((i64::MIN, i64::MAX));
        e.0 = e.0.max(lo);
        e.1 = e.1.min(hi);
    }
    iv
}

fn flip(op: CmpOp) -> CmpOp {
    match op {
        CmpOp::Le => CmpOp::Ge,
        CmpOp::Lt => CmpOp::Gt,
        CmpOp::Ge => CmpOp::Le,
        CmpOp::Gt => CmpOp::Lt,
        o => o,
    }
}

fn guards_disjoint(a: &Constraint, b: &Constraint) -> bool {
    if matches!(a, Formula::False) || matches!(b, Formula::False) {
        return true;
    }
    let ia = guard_intervals(a);
    let ib = guard_intervals(b);
    ia.iter().any(|(v, (lo_a, hi_a))| {
        lo_a > hi_a || ib.get(v).is_some_and(|(lo_b, hi_b)| lo_a.max(lo_b) > hi_a.min(hi_b))
    })
}

fn check_local_port_overlap(t: &ProcessTemplate, out: &mut Vec<Diagnostic>) {
    for (li, l) in t.transitions_of(|k| *k == TransitionKind::Local) {
        for (pi, p) in t.transitions_of(|k| matches!(k, TransitionKind::Port(_))) {
            if !guards_disjoint(&l.guard, &p.guard) {
                out.push(Diagnostic::PossibleLocalPortOverlap {
                    template: t.name.clone(),
                    local: li,
                    port: pi,
                });
            }
        }
    }
}
