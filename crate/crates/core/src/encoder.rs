//! Compilation of a system model and an invariant schema into Horn clauses.
//!
//! One relation `R_a` is declared per schema vector `a`; its arguments are
//! the globals followed, per process type, by `a_i` tracked instances
//! (`id`, locals) of that type, where singleton types have no id argument.
//! Every clause is built over a *frame*: the instances whose variables the
//! clause mentions. Depending on the clause, the frame holds the tracked
//! instances of the head relation, every singleton, and fresh untracked
//! instances of replicated types. Body literals are the head relation on
//! the pre-state plus every schema relation instantiated over frame
//! instances that include a stepping instance; with
//! [`BodyLiterals::AllSchema`] every instantiation is added.
//!
//! The finite encoding (all singletons) and the homogeneous k-indexed
//! encoding (one replicated type) are the two degenerate cases of this
//! construction, so all entry points share it.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constraint::{Constraint, Formula, Term, VarRef};
use crate::horn::{
    ClauseFamily, HFormula, HTerm, Head, HornClause, HornMetadata, HornSystem, RelationApp, RelationSymbol,
};
use crate::model::{
    validate_model, BipReduction, Diagnostic, GuardedTransition, SystemModel, TimeModel, TransitionKind,
    DENOMINATOR_VAR, TIME_VAR,
};
use crate::schema::InvariantSchema;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum SymmetryGenerators {
    /// Every non-identity permutation of the tracked instances.
    AllPermutations,
    /// Transpositions `(1 j)`, which generate the full symmetric group.
    #[default]
    Transpositions,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum BodyLiterals {
    /// Only relations that involve a stepping (or error-bound) instance.
    #[default]
    ContextOnly,
    /// Every relation instantiation over the clause frame.
    AllSchema,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProcessIds {
    /// Every tracked instance of a replicated template carries its id.
    #[default]
    Always,
    /// Ids are only passed for templates whose constraints mention `self`
    /// or whose error roles are referred to by `id(..)`. Without such
    /// references the system is symmetric in the ids and dropping them
    /// loses no solutions.
    WhenReferenced,
}

/// Process ids always range over the non-negative integers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodingConfig {
    pub symmetry: SymmetryGenerators,
    pub body: BodyLiterals,
    #[serde(default)]
    pub ids: ProcessIds,
}

/// Which templates need id arguments under `cfg`.
pub fn id_arguments(model: &SystemModel, cfg: &EncodingConfig) -> Vec<bool> {
    model
        .templates
        .iter()
        .map(|t| {
            if !t.is_replicated() {
                return false;
            }
            if cfg.ids == ProcessIds::Always {
                return true;
            }
            let is_self = |v: &VarRef| *v == VarRef::SelfId;
            t.init.mentions(is_self)
                || t.time_invariant.mentions(is_self)
                || t.transitions.iter().any(|tr| tr.guard.mentions(is_self) || tr.update.mentions(is_self))
                || model.error.roles.iter().any(|r| {
                    (r.template == t.name && r.constraint.mentions(is_self))
                        || model.error.roles.iter().any(|o| {
                            o.constraint.mentions(
                                |v| matches!(v, VarRef::PeerId(p) if *p == r.name && r.template == t.name),
                            )
                        })
                })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("schema vectors have length {found}, the model has {expected} templates")]
    SchemaArityMismatch { expected: usize, found: usize },
    #[error("schema tracks {count} instances of singleton template `{template}`")]
    SingletonMultiplicityExceeded { template: String, count: usize },
    #[error("the schema is empty")]
    EmptySchema,
    #[error("the finite encoding needs a model whose templates are all singletons")]
    NotFinite,
    #[error("the homogeneous encoding needs a model with exactly one replicated template")]
    NotHomogeneous,
    #[error("the index k must be positive")]
    ZeroIndex,
    #[error("model violates the rendezvous assumptions: {}", format_diagnostics(.0))]
    AssumptionViolated(Vec<Diagnostic>),
}

fn format_diagnostics(d: &[Diagnostic]) -> String {
    d.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; ")
}

/// Name of the relation for a schema vector, e.g. `R_1_3`.
pub fn relation_name(vector: &[usize]) -> String {
    let parts: Vec<String> = vector.iter().map(|x| x.to_string()).collect();
    format!("R_{}", parts.join("_"))
}

// ---------------------------------------------------------------------------
// Frames and states

#[derive(Clone, Debug)]
struct Inst {
    ty: usize,
    label: String,
    has_id: bool,
}

impl Inst {
    fn id(&self) -> HTerm {
        if self.has_id {
            Term::Var(format!("{}!id", self.label))
        } else {
            Term::Const(0)
        }
    }
}

#[derive(Clone, Debug)]
struct State {
    globals: Vec<HTerm>,
    locals: Vec<Vec<HTerm>>,
}

#[derive(Clone, Copy)]
enum GlobalEffect {
    Keep,
    /// Global updates go to throwaway variables tagged with this number.
    Discard(usize),
}

struct Frame {
    insts: Vec<Inst>,
    /// Frame indices of the head relation's tracked instances, in argument order.
    tracked: Vec<usize>,
}

impl Frame {
    fn of_type(&self, ty: usize) -> Vec<usize> {
        (0..self.insts.len()).filter(|&i| self.insts[i].ty == ty).collect()
    }
}

fn combinations(items: &[usize], k: usize) -> Vec<Vec<usize>> {
    fn go(items: &[usize], k: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..items.len() {
            if items.len() - i < k - cur.len() {
                break;
            }
            cur.push(items[i]);
            go(items, k, i + 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if k <= items.len() {
        go(items, k, 0, &mut Vec::new(), &mut out);
    }
    out
}

/// Permutations of `0..k` in lexicographic order.
fn permutations(k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..k).collect();
    loop {
        out.push(cur.clone());
        let Some(i) = (1..k).rev().find(|&i| cur[i - 1] < cur[i]) else { break };
        let j = (i..k).rev().find(|&j| cur[j] > cur[i - 1]).unwrap();
        cur.swap(i - 1, j);
        cur[i..].reverse();
    }
    out
}

/// Generators used for the symmetry clauses of a type with `k` tracked slots.
pub fn symmetry_generators(k: usize, gens: SymmetryGenerators) -> Vec<Vec<usize>> {
    if k < 2 {
        return Vec::new();
    }
    match gens {
        SymmetryGenerators::Transpositions => (1..k)
            .map(|j| {
                let mut p: Vec<usize> = (0..k).collect();
                p.swap(0, j);
                p
            })
            .collect(),
        SymmetryGenerators::AllPermutations => permutations(k).into_iter().skip(1).collect(),
    }
}

struct Encoder<'a> {
    model: &'a SystemModel,
    schema: &'a InvariantSchema,
    cfg: EncodingConfig,
    ids: Vec<bool>,
}

impl<'a> Encoder<'a> {
    fn new(
        model: &'a SystemModel,
        schema: &'a InvariantSchema,
        cfg: EncodingConfig,
    ) -> Result<Self, EncodeError> {
        if schema.is_empty() {
            return Err(EncodeError::EmptySchema);
        }
        let n = model.templates.len();
        for v in schema.vectors() {
            if v.len() != n {
                return Err(EncodeError::SchemaArityMismatch { expected: n, found: v.len() });
            }
            for (i, t) in model.templates.iter().enumerate() {
                if !t.is_replicated() && v[i] > 1 {
                    return Err(EncodeError::SingletonMultiplicityExceeded {
                        template: t.name.clone(),
                        count: v[i],
                    });
                }
            }
        }
        let ids = id_arguments(model, &cfg);
        Ok(Encoder { model, schema, cfg, ids })
    }

    fn vector(&self, r: usize) -> &[usize] {
        &self.schema.vectors()[r]
    }

    fn relation(&self, r: usize) -> String {
        relation_name(self.vector(r))
    }

    fn declarations(&self) -> Vec<RelationSymbol> {
        (0..self.schema.len())
            .map(|r| {
                let v = self.vector(r);
                let arity = self.model.globals.len()
                    + self
                        .model
                        .templates
                        .iter()
                        .zip(v)
                        .zip(&self.ids)
                        .map(|((t, &a), &id)| a * (usize::from(id) + t.locals.len()))
                        .sum::<usize>();
                RelationSymbol { name: self.relation(r), arity, vector: v.to_vec() }
            })
            .collect()
    }

    /// Frame with the tracked instances of vector `r` (if any), optionally
    /// every singleton, and `fresh[i]` untracked instances of each
    /// replicated type `i`. Untracked instances come first within a type.
    fn frame(&self, r: Option<usize>, with_singletons: bool, fresh: &[usize]) -> Frame {
        let mut insts = Vec::new();
        let mut tracked = Vec::new();
        for (ty, t) in self.model.templates.iter().enumerate() {
            let a = r.map_or(0, |r| self.vector(r)[ty]);
            if t.is_replicated() {
                for j in 0..fresh.get(ty).copied().unwrap_or(0) {
                    insts.push(Inst { ty, label: format!("{}.f{}", t.name, j + 1), has_id: self.ids[ty] });
                }
                for j in 0..a {
                    tracked.push(insts.len());
                    insts.push(Inst { ty, label: format!("{}.t{}", t.name, j + 1), has_id: self.ids[ty] });
                }
            } else if a == 1 || with_singletons {
                if a == 1 {
                    tracked.push(insts.len());
                }
                insts.push(Inst { ty, label: t.name.clone(), has_id: false });
            }
        }
        Frame { insts, tracked }
    }

    fn pre_state(&self, frame: &Frame) -> State {
        State {
            globals: self.model.globals.iter().map(|g| Term::Var(g.clone())).collect(),
            locals: frame
                .insts
                .iter()
                .map(|inst| {
                    self.model.templates[inst.ty]
                        .locals
                        .iter()
                        .map(|l| Term::Var(format!("{}.{}", inst.label, l.name)))
                        .collect()
                })
                .collect(),
        }
    }

    /// Distinct ids per replicated type and non-negative ids.
    fn id_constraint(&self, frame: &Frame) -> HFormula {
        let mut parts = Vec::new();
        for ty in 0..self.model.templates.len() {
            let ids: Vec<HTerm> = frame
                .of_type(ty)
                .into_iter()
                .filter(|&i| frame.insts[i].has_id)
                .map(|i| frame.insts[i].id())
                .collect();
            if ids.len() >= 2 {
                parts.push(Formula::Distinct(ids.clone()));
            }
            for id in ids {
                parts.push(Formula::ge(id, Term::Const(0)));
            }
        }
        Formula::and(parts)
    }

    fn global_index(&self, name: &str) -> usize {
        self.model.global_index(name).expect("validated model")
    }

    fn local_index(&self, inst: &Inst, name: &str) -> usize {
        self.model.templates[inst.ty].local_index(name).expect("validated model")
    }

    /// Translates a model constraint over instance `fi` of the frame.
    /// `primed` maps primed variables; `peer` resolves error role ids.
    fn translate(
        &self,
        c: &Constraint,
        frame: &Frame,
        st: &State,
        fi: usize,
        primed: &mut dyn FnMut(&VarRef) -> HTerm,
        peer: &dyn Fn(&str) -> HTerm,
    ) -> HFormula {
        let inst = &frame.insts[fi];
        c.subst(&mut |v: &VarRef| match v {
            VarRef::Global(g) => st.globals[self.global_index(g)].clone(),
            VarRef::Local(l) => st.locals[fi][self.local_index(inst, l)].clone(),
            VarRef::SelfId => inst.id(),
            VarRef::PeerId(r) => peer(r),
            VarRef::GlobalPrimed(_) | VarRef::LocalPrimed(_) => primed(v),
        })
    }

    /// Applies transition `tr` of frame instance `fi` in state `st`. Returns
    /// the guard and update constraint and the successor state.
    fn apply(
        &self,
        frame: &Frame,
        st: &State,
        fi: usize,
        tr: &GuardedTransition,
        version: usize,
        effect: GlobalEffect,
    ) -> (HFormula, State) {
        let inst = &frame.insts[fi];
        let mut next = st.clone();
        let no_peer = |_: &str| Term::Const(0);
        let guard = self.translate(&tr.guard, frame, st, fi, &mut |_| Term::Const(0), &no_peer);
        let mut written_globals = BTreeSet::new();
        let mut written_locals = BTreeSet::new();
        let update = self.translate(
            &tr.update,
            frame,
            st,
            fi,
            &mut |v| match v {
                VarRef::GlobalPrimed(g) => {
                    written_globals.insert(g.clone());
                    match effect {
                        GlobalEffect::Keep => Term::Var(format!("{g}!{version}")),
                        GlobalEffect::Discard(tag) => Term::Var(format!("{g}!b{tag}")),
                    }
                }
                VarRef::LocalPrimed(l) => {
                    written_locals.insert(l.clone());
                    Term::Var(format!("{}.{}!{}", inst.label, l, version))
                }
                _ => unreachable!(),
            },
            &no_peer,
        );
        if let GlobalEffect::Keep = effect {
            for g in written_globals {
                next.globals[self.global_index(&g)] = Term::Var(format!("{g}!{version}"));
            }
        }
        for l in written_locals {
            next.locals[fi][self.local_index(inst, &l)] =
                Term::Var(format!("{}.{}!{}", inst.label, l, version));
        }
        (Formula::and([guard, update]), next)
    }

    /// Application of relation `r` to frame instances `insts` (ordered by
    /// type, then slot).
    fn app(&self, r: usize, frame: &Frame, insts: &[usize], st: &State) -> RelationApp {
        let mut args = st.globals.clone();
        for &i in insts {
            if frame.insts[i].has_id {
                args.push(frame.insts[i].id());
            }
            args.extend(st.locals[i].iter().cloned());
        }
        RelationApp { relation: self.relation(r), args }
    }

    /// All instantiations of vector `r` over the frame.
    fn instantiations(&self, r: usize, frame: &Frame) -> Vec<Vec<usize>> {
        let v = self.vector(r);
        let mut acc: Vec<Vec<usize>> = vec![Vec::new()];
        for (ty, &a) in v.iter().enumerate() {
            if a == 0 {
                continue;
            }
            let choices = combinations(&frame.of_type(ty), a);
            let mut next = Vec::new();
            for prefix in &acc {
                for c in &choices {
                    let mut p = prefix.clone();
                    p.extend(c);
                    next.push(p);
                }
            }
            acc = next;
        }
        acc
    }

    fn body(&self, frame: &Frame, st: &State, head: Option<usize>, active: &[usize]) -> Vec<RelationApp> {
        let mut out = Vec::new();
        let mut seen = BTreeSet::new();
        if let Some(h) = head {
            let mut key = frame.tracked.clone();
            key.sort_unstable();
            seen.insert((h, key));
            out.push(self.app(h, frame, &frame.tracked, st));
        }
        for r in 0..self.schema.len() {
            for inst in self.instantiations(r, frame) {
                let touches = inst.iter().any(|i| active.contains(i));
                if !touches && self.cfg.body == BodyLiterals::ContextOnly {
                    continue;
                }
                let mut key = inst.clone();
                key.sort_unstable();
                if seen.insert((r, key)) {
                    out.push(self.app(r, frame, &inst, st));
                }
            }
        }
        out
    }

    fn clause(
        head: Head,
        constraint: HFormula,
        body: Vec<RelationApp>,
        family: ClauseFamily,
        note: String,
    ) -> HornClause {
        HornClause { head, constraint, body, family, note }
    }

    // -- clause families ---------------------------------------------------

    fn symmetry_clauses(&self, r: usize, out: &mut Vec<HornClause>) {
        let frame = self.frame(Some(r), false, &[]);
        let st = self.pre_state(&frame);
        for (ty, t) in self.model.templates.iter().enumerate() {
            let slots: Vec<usize> =
                frame.tracked.iter().copied().filter(|&i| frame.insts[i].ty == ty).collect();
            if !t.is_replicated() {
                continue;
            }
            for perm in symmetry_generators(slots.len(), self.cfg.symmetry) {
                let mut order = Vec::new();
                for &i in &frame.tracked {
                    if frame.insts[i].ty == ty {
                        let pos = slots.iter().position(|&s| s == i).unwrap();
                        order.push(slots[perm[pos]]);
                    } else {
                        order.push(i);
                    }
                }
                let head = self.app(r, &frame, &order, &st);
                let body = vec![self.app(r, &frame, &frame.tracked, &st)];
                let perm1: Vec<String> = perm.iter().map(|p| (p + 1).to_string()).collect();
                out.push(Self::clause(
                    Head::Relation(head),
                    self.id_constraint(&frame),
                    body,
                    ClauseFamily::Symmetry,
                    format!("{} {}: permutation ({})", self.relation(r), t.name, perm1.join(" ")),
                ));
            }
        }
    }

    fn init_clause(&self, r: usize, out: &mut Vec<HornClause>) {
        let frame = self.frame(Some(r), true, &[]);
        let st = self.pre_state(&frame);
        let mut parts = vec![self.id_constraint(&frame)];
        if self.model.time_model == TimeModel::DenseRational {
            parts.push(Formula::ge(Term::Var(DENOMINATOR_VAR.into()), Term::Const(1)));
        }
        for fi in 0..frame.insts.len() {
            let init = &self.model.templates[frame.insts[fi].ty].init;
            parts.push(self.translate(init, &frame, &st, fi, &mut |_| Term::Const(0), &|_| Term::Const(0)));
        }
        let head = self.app(r, &frame, &frame.tracked, &st);
        out.push(Self::clause(
            Head::Relation(head),
            Formula::and(parts),
            Vec::new(),
            ClauseFamily::Init,
            self.relation(r),
        ));
    }

    fn step_clauses(&self, r: usize, out: &mut Vec<HornClause>) {
        let v = self.vector(r).to_vec();
        let n = self.model.templates.len();
        for (ty, t) in self.model.templates.iter().enumerate() {
            let mut placements = Vec::new();
            if v[ty] >= 1 {
                placements.push(true);
            }
            if t.is_replicated() || v[ty] == 0 {
                placements.push(false);
            }
            for tracked in placements {
                let mut fresh = vec![0; n];
                if !tracked && t.is_replicated() {
                    fresh[ty] = 1;
                }
                let frame = self.frame(Some(r), true, &fresh);
                let stepper = frame.of_type(ty).into_iter().find(|&i| frame.tracked.contains(&i) == tracked);
                let Some(stepper) = stepper else { continue };
                let st = self.pre_state(&frame);
                let family = if tracked { ClauseFamily::StepTracked } else { ClauseFamily::StepEnv };
                for (ti, tr) in t.transitions_of(|k| *k == TransitionKind::Local) {
                    let (c, post) = self.apply(&frame, &st, stepper, tr, 1, GlobalEffect::Keep);
                    let head = self.app(r, &frame, &frame.tracked, &post);
                    let body = self.body(&frame, &st, Some(r), &[stepper]);
                    out.push(Self::clause(
                        Head::Relation(head),
                        Formula::and([self.id_constraint(&frame), c]),
                        body,
                        family,
                        format!(
                            "{}: {} takes transition #{ti}",
                            self.relation(r),
                            frame.insts[stepper].label
                        ),
                    ));
                }
            }
        }
    }

    fn time_clause(&self, r: usize, out: &mut Vec<HornClause>) {
        let frame = self.frame(Some(r), false, &[]);
        let st = self.pre_state(&frame);
        let c = self.global_index(TIME_VAR);
        let mut post = st.clone();
        let advanced: HTerm = Term::Var(format!("{TIME_VAR}!1"));
        post.globals[c] = advanced.clone();
        let mut parts = vec![self.id_constraint(&frame), Formula::ge(advanced, st.globals[c].clone())];
        for fi in 0..frame.insts.len() {
            let tinv = &self.model.templates[frame.insts[fi].ty].time_invariant;
            parts.push(self.translate(tinv, &frame, &post, fi, &mut |_| Term::Const(0), &|_| Term::Const(0)));
        }
        let active: Vec<usize> = (0..frame.insts.len()).collect();
        let head = self.app(r, &frame, &frame.tracked, &post);
        let body = self.body(&frame, &st, Some(r), &active);
        out.push(Self::clause(
            Head::Relation(head),
            Formula::and(parts),
            body,
            ClauseFamily::Time,
            self.relation(r),
        ));
    }

    fn channel_clauses(&self, r: usize, out: &mut Vec<HornClause>) {
        let v = self.vector(r).to_vec();
        let n = self.model.templates.len();
        let options = |ty: usize| -> Vec<bool> {
            let t = &self.model.templates[ty];
            let mut o = Vec::new();
            if v[ty] >= 1 {
                o.push(true);
            }
            if t.is_replicated() || v[ty] == 0 {
                o.push(false);
            }
            o
        };
        for ch in &self.model.channels {
            for (sty, st_t) in self.model.templates.iter().enumerate() {
                for (si, send) in st_t.transitions_of(|k| *k == TransitionKind::Send(ch.clone())) {
                    for (rty, rt_t) in self.model.templates.iter().enumerate() {
                        for (ri, recv) in rt_t.transitions_of(|k| *k == TransitionKind::Receive(ch.clone())) {
                            for s_tracked in options(sty) {
                                for r_tracked in options(rty) {
                                    if let Some(c) = self.channel_clause(
                                        r,
                                        (sty, si, send, s_tracked),
                                        (rty, ri, recv, r_tracked),
                                        n,
                                        ch,
                                    ) {
                                        out.push(c);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    #[allow(clippy::type_complexity)]
    fn channel_clause(
        &self,
        r: usize,
        (sty, si, send, s_tracked): (usize, usize, &GuardedTransition, bool),
        (rty, ri, recv, r_tracked): (usize, usize, &GuardedTransition, bool),
        n: usize,
        ch: &str,
    ) -> Option<HornClause> {
        let v = self.vector(r);
        let replicated = |ty: usize| self.model.templates[ty].is_replicated();
        if sty == rty && !replicated(sty) {
            return None;
        }
        if sty == rty && s_tracked && r_tracked && v[sty] < 2 {
            return None;
        }
        let mut fresh = vec![0; n];
        if !s_tracked && replicated(sty) {
            fresh[sty] += 1;
        }
        if !r_tracked && replicated(rty) {
            fresh[rty] += 1;
        }
        let frame = self.frame(Some(r), true, &fresh);
        let pick = |ty: usize, tracked: bool, skip: Option<usize>| {
            frame.of_type(ty).into_iter().find(|&i| frame.tracked.contains(&i) == tracked && Some(i) != skip)
        };
        let sender = pick(sty, s_tracked, None)?;
        let receiver = pick(rty, r_tracked, Some(sender))?;
        let st = self.pre_state(&frame);
        let (c1, mid) = self.apply(&frame, &st, sender, send, 1, GlobalEffect::Keep);
        let (c2, post) = self.apply(&frame, &mid, receiver, recv, 2, GlobalEffect::Keep);
        let family = match (s_tracked, r_tracked) {
            (true, true) => ClauseFamily::CommBoth,
            (true, false) => ClauseFamily::CommSender,
            (false, true) => ClauseFamily::CommReceiver,
            (false, false) => ClauseFamily::CommNeither,
        };
        let head = self.app(r, &frame, &frame.tracked, &post);
        let body = self.body(&frame, &st, Some(r), &[sender, receiver]);
        Some(Self::clause(
            Head::Relation(head),
            Formula::and([self.id_constraint(&frame), c1, c2]),
            body,
            family,
            format!(
                "{}: {ch} from {} (#{si}) to {} (#{ri})",
                self.relation(r),
                frame.insts[sender].label,
                frame.insts[receiver].label
            ),
        ))
    }

    fn barrier_clauses(&self, r: usize, out: &mut Vec<HornClause>) {
        let frame = self.frame(Some(r), true, &[]);
        let st = self.pre_state(&frame);
        let active: Vec<usize> = (0..frame.insts.len()).collect();
        for b in &self.model.barriers {
            let kind = TransitionKind::Barrier(b.clone());
            let neutral = GuardedTransition::neutral(kind.clone());
            let choices: Vec<Vec<(Option<usize>, &GuardedTransition)>> = frame
                .insts
                .iter()
                .map(|inst| {
                    let t = &self.model.templates[inst.ty];
                    let own: Vec<_> = t.transitions_of(|k| *k == kind).map(|(i, tr)| (Some(i), tr)).collect();
                    if own.is_empty() {
                        vec![(None, &neutral)]
                    } else {
                        own
                    }
                })
                .collect();
            let mut idx = vec![0usize; choices.len()];
            loop {
                let mut parts = vec![self.id_constraint(&frame)];
                let mut post = st.clone();
                let mut picked = Vec::new();
                for (fi, &ci) in idx.iter().enumerate() {
                    let (ti, tr) = choices[fi][ci];
                    let (c, p) = self.apply(&frame, &st, fi, tr, 1, GlobalEffect::Discard(fi + 1));
                    parts.push(c);
                    post.locals[fi] = p.locals[fi].clone();
                    picked.push(match ti {
                        Some(i) => format!("{}#{i}", frame.insts[fi].label),
                        None => format!("{}:neutral", frame.insts[fi].label),
                    });
                }
                let head = self.app(r, &frame, &frame.tracked, &post);
                let body = self.body(&frame, &st, Some(r), &active);
                out.push(Self::clause(
                    Head::Relation(head),
                    Formula::and(parts),
                    body,
                    ClauseFamily::Barrier,
                    format!("{}: {b} [{}]", self.relation(r), picked.join(" ")),
                ));
                // odometer over per-instance choices
                let mut k = 0;
                loop {
                    if k == idx.len() {
                        break;
                    }
                    idx[k] += 1;
                    if idx[k] < choices[k].len() {
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
    }

    fn error_clause(&self, out: &mut Vec<HornClause>) {
        let roles = &self.model.error.roles;
        if roles.is_empty() {
            return;
        }
        let counts = self.model.error_role_counts();
        let n = self.model.templates.len();
        let mut sizes = vec![0; n];
        for ty in 0..n {
            if self.model.templates[ty].is_replicated() {
                sizes[ty] = counts[ty].max(self.schema.max_entry(ty));
            }
        }
        let frame = self.frame(None, true, &sizes);
        let st = self.pre_state(&frame);
        let mut bound: Vec<usize> = Vec::new();
        let mut used = BTreeSet::new();
        for role in roles {
            let ty = self.model.template_index(&role.template).expect("validated model");
            let fi = frame.of_type(ty).into_iter().find(|i| !used.contains(i)).expect("frame size");
            used.insert(fi);
            bound.push(fi);
        }
        let peer = |name: &str| -> HTerm {
            match roles.iter().position(|r| r.name == name) {
                Some(j) => frame.insts[bound[j]].id(),
                None => Term::Const(0),
            }
        };
        let mut parts = vec![self.id_constraint(&frame)];
        for (j, role) in roles.iter().enumerate() {
            parts.push(self.translate(
                &role.constraint,
                &frame,
                &st,
                bound[j],
                &mut |_| Term::Const(0),
                &peer,
            ));
        }
        let body = self.body(&frame, &st, None, &bound);
        let names: Vec<String> = roles
            .iter()
            .zip(&bound)
            .map(|(r, &fi)| format!("{}={}", r.name, frame.insts[fi].label))
            .collect();
        out.push(Self::clause(Head::False, Formula::and(parts), body, ClauseFamily::Error, names.join(" ")));
    }

    fn base_system(&self) -> HornSystem {
        HornSystem {
            relations: self.declarations(),
            clauses: Vec::new(),
            metadata: HornMetadata {
                model: self.model.name.clone(),
                schema: self.schema.to_string(),
                has_error_spec: !self.model.error.is_empty(),
            },
        }
    }

    fn core_clauses(&self, r: usize, out: &mut Vec<HornClause>) {
        self.symmetry_clauses(r, out);
        self.init_clause(r, out);
        self.step_clauses(r, out);
    }

    fn encode_all(&self) -> HornSystem {
        let mut hs = self.base_system();
        for r in 0..self.schema.len() {
            self.core_clauses(r, &mut hs.clauses);
            if self.model.is_timed() {
                self.time_clause(r, &mut hs.clauses);
            }
            self.channel_clauses(r, &mut hs.clauses);
            self.barrier_clauses(r, &mut hs.clauses);
        }
        self.error_clause(&mut hs.clauses);
        hs
    }
}

// ---------------------------------------------------------------------------
// Entry points

/// Encodes a model of singleton processes; schema vectors are 0/1 vectors.
pub fn encode_finite(
    model: &SystemModel,
    schema: &InvariantSchema,
    cfg: EncodingConfig,
) -> Result<HornSystem, EncodeError> {
    if !model.all_singleton() {
        return Err(EncodeError::NotFinite);
    }
    Ok(Encoder::new(model, schema, cfg)?.encode_all())
}

/// Encodes a model with a single replicated template using a k-indexed
/// invariant.
pub fn encode_homogeneous(
    model: &SystemModel,
    k: usize,
    cfg: EncodingConfig,
) -> Result<HornSystem, EncodeError> {
    if !model.is_homogeneous() {
        return Err(EncodeError::NotHomogeneous);
    }
    if k == 0 {
        return Err(EncodeError::ZeroIndex);
    }
    let schema = InvariantSchema::single(vec![k]);
    Ok(Encoder::new(model, &schema, cfg)?.encode_all())
}

/// Encodes an arbitrary mix of singleton and replicated templates.
pub fn encode_heterogeneous(
    model: &SystemModel,
    schema: &InvariantSchema,
    cfg: EncodingConfig,
) -> Result<HornSystem, EncodeError> {
    Ok(Encoder::new(model, schema, cfg)?.encode_all())
}

/// Encodes with whichever entry point matches the shape of the model.
pub fn encode(
    model: &SystemModel,
    schema: &InvariantSchema,
    cfg: EncodingConfig,
) -> Result<HornSystem, EncodeError> {
    if model.all_singleton() {
        encode_finite(model, schema, cfg)
    } else if model.is_homogeneous() && schema.len() == 1 {
        encode_homogeneous(model, schema.vectors()[0][0], cfg)
    } else {
        encode_heterogeneous(model, schema, cfg)
    }
}

/// Appends the time-elapse clause of every relation.
pub fn add_time_clauses(
    hs: &mut HornSystem,
    model: &SystemModel,
    schema: &InvariantSchema,
    cfg: EncodingConfig,
) -> Result<(), EncodeError> {
    let enc = Encoder::new(model, schema, cfg)?;
    if model.is_timed() {
        for r in 0..schema.len() {
            enc.time_clause(r, &mut hs.clauses);
        }
    }
    Ok(())
}

/// Appends the channel communication clauses of every relation.
pub fn add_channel_clauses(
    hs: &mut HornSystem,
    model: &SystemModel,
    schema: &InvariantSchema,
    cfg: EncodingConfig,
) -> Result<(), EncodeError> {
    let enc = Encoder::new(model, schema, cfg)?;
    for r in 0..schema.len() {
        enc.channel_clauses(r, &mut hs.clauses);
    }
    Ok(())
}

/// Appends the barrier clauses of every relation.
pub fn add_barrier_clauses(
    hs: &mut HornSystem,
    model: &SystemModel,
    schema: &InvariantSchema,
    cfg: EncodingConfig,
) -> Result<(), EncodeError> {
    let enc = Encoder::new(model, schema, cfg)?;
    for r in 0..schema.len() {
        enc.barrier_clauses(r, &mut hs.clauses);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Rendezvous interactions as barrier synchronisation

fn fresh_name(taken: &BTreeSet<String>, base: &str) -> String {
    if !taken.contains(base) {
        return base.to_string();
    }
    (1..).map(|i| format!("{base}_{i}")).find(|n| !taken.contains(n)).unwrap()
}

fn selector_in(selector: &str, values: &[usize]) -> Constraint {
    Formula::or(
        values
            .iter()
            .map(|&v| Formula::eq(Term::Var(VarRef::Global(selector.to_string())), Term::Const(v as i64))),
    )
}

/// Replaces rendezvous interactions by one barrier plus a global selector
/// variable naming the interaction about to fire. Interaction `i` (in list
/// order) gets selector value `i + 1`.
pub fn bip_to_barrier(model: &SystemModel) -> Result<SystemModel, EncodeError> {
    let diags = validate_model(model);
    if !diags.is_empty() {
        return Err(EncodeError::AssumptionViolated(diags));
    }
    if model.interactions.is_empty() {
        return Ok(model.clone());
    }
    let mut taken: BTreeSet<String> = crate::dsl::declared_names(model);
    taken.extend(model.templates.iter().map(|t| t.name.clone()));
    let selector = fresh_name(&taken, "iact");
    taken.insert(selector.clone());
    let barrier = fresh_name(&taken, "bip");
    let count = model.interactions.len();
    let all: Vec<usize> = (1..=count).collect();
    let mut out = model.clone();
    out.globals.push(selector.clone());
    out.barriers.push(barrier.clone());
    let selector_var = || Term::Var(VarRef::Global(selector.clone()));
    let range = |t: Term<VarRef>| {
        Formula::and([Formula::ge(t.clone(), Term::Const(1)), Formula::le(t, Term::Const(count as i64))])
    };
    let mut assign = Vec::new();
    let port_values = |port: &str| -> Vec<usize> {
        model
            .interactions
            .iter()
            .enumerate()
            .filter(|(_, i)| i.iter().any(|p| p == port))
            .map(|(v, _)| v + 1)
            .collect()
    };
    for (ti, t) in out.templates.iter_mut().enumerate() {
        let owned: Vec<&str> =
            model.ports.iter().filter(|p| p.owner == t.name).map(|p| p.name.as_str()).collect();
        for tr in t.transitions.iter_mut() {
            if let TransitionKind::Port(p) = &tr.kind {
                let values = port_values(p);
                tr.guard = Formula::and([tr.guard.clone(), selector_in(&selector, &values)]);
                tr.kind = TransitionKind::Barrier(barrier.clone());
            }
        }
        let idle: Vec<usize> = all
            .iter()
            .copied()
            .filter(|&v| !model.interactions[v - 1].iter().any(|p| owned.contains(&p.as_str())))
            .collect();
        if !idle.is_empty() {
            // A non-participant may only wait at the barrier once it has no
            // local move left.
            let busy = Formula::or(
                model.templates[ti]
                    .transitions
                    .iter()
                    .filter(|tr| tr.kind == TransitionKind::Local)
                    .map(|tr| tr.guard.clone()),
            );
            let selected = if idle.len() == count { Formula::True } else { selector_in(&selector, &idle) };
            let guard = Formula::and([selected, Formula::not(busy)]);
            t.transitions.push(GuardedTransition::new(
                TransitionKind::Barrier(barrier.clone()),
                guard,
                Formula::True,
            ));
        }
        t.transitions.push(GuardedTransition::new(
            TransitionKind::Local,
            Formula::True,
            range(Term::Var(VarRef::GlobalPrimed(selector.clone()))),
        ));
        assign.push((ti, t.transitions.len() - 1));
        t.init = Formula::and([t.init.clone(), range(selector_var())]);
    }
    out.ports.clear();
    out.interactions.clear();
    out.bip = Some(BipReduction {
        selector,
        barrier,
        interactions: model.interactions.clone(),
        selector_transitions: assign,
    });
    Ok(out)
}

/// Clause counts by family, keyed by family tag.
pub fn family_summary(hs: &HornSystem) -> HashMap<&'static str, usize> {
    hs.family_counts().into_iter().map(|(f, n)| (f.tag(), n)).collect()
}
