//! Horn clauses over uninterpreted integer relations and their SMT-LIB2
//! rendering in the `HORN` logic.

use std::collections::{BTreeMap, HashSet};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::constraint::{CmpOp, Formula, Term};

/// Clause variables are plain names.
pub type HTerm = Term<String>;
pub type HFormula = Formula<String>;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationSymbol {
    pub name: String,
    /// All arguments are integers.
    pub arity: usize,
    /// Schema vector the relation was created for.
    pub vector: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationApp {
    pub relation: String,
    pub args: Vec<HTerm>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Head {
    Relation(RelationApp),
    False,
}

/// Origin of a clause in the encoding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClauseFamily {
    /// Permuting the tracked instances of one replicated type.
    Symmetry,
    /// Initial states.
    Init,
    /// A tracked instance takes a local step.
    StepTracked,
    /// An untracked instance takes a local step.
    StepEnv,
    /// Reaching the error states is impossible.
    Error,
    /// Time elapse.
    Time,
    /// Channel communication, sender and receiver tracked.
    CommBoth,
    /// Channel communication, only the sender tracked.
    CommSender,
    /// Channel communication, only the receiver tracked.
    CommReceiver,
    /// Channel communication between two untracked instances.
    CommNeither,
    /// Barrier synchronisation.
    Barrier,
}

impl ClauseFamily {
    pub const ALL: [ClauseFamily; 11] = [
        ClauseFamily::Symmetry,
        ClauseFamily::Init,
        ClauseFamily::StepTracked,
        ClauseFamily::StepEnv,
        ClauseFamily::Error,
        ClauseFamily::Time,
        ClauseFamily::CommBoth,
        ClauseFamily::CommSender,
        ClauseFamily::CommReceiver,
        ClauseFamily::CommNeither,
        ClauseFamily::Barrier,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            ClauseFamily::Symmetry => "symmetry",
            ClauseFamily::Init => "init",
            ClauseFamily::StepTracked => "step-tracked",
            ClauseFamily::StepEnv => "step-env",
            ClauseFamily::Error => "error",
            ClauseFamily::Time => "time",
            ClauseFamily::CommBoth => "comm-both",
            ClauseFamily::CommSender => "comm-sender",
            ClauseFamily::CommReceiver => "comm-receiver",
            ClauseFamily::CommNeither => "comm-neither",
            ClauseFamily::Barrier => "barrier",
        }
    }
}

impl fmt::Display for ClauseFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HornClause {
    pub head: Head,
    pub constraint: HFormula,
    pub body: Vec<RelationApp>,
    pub family: ClauseFamily,
    /// Short human-readable description, emitted as a comment.
    pub note: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HornMetadata {
    pub model: String,
    pub schema: String,
    /// Whether the source model has an error spec (and so needs an error clause).
    pub has_error_spec: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HornSystem {
    pub relations: Vec<RelationSymbol>,
    pub clauses: Vec<HornClause>,
    pub metadata: HornMetadata,
}

impl HornSystem {
    pub fn relation(&self, name: &str) -> Option<&RelationSymbol> {
        self.relations.iter().find(|r| r.name == name)
    }

    pub fn clauses_of(&self, family: ClauseFamily) -> impl Iterator<Item = &HornClause> {
        self.clauses.iter().filter(move |c| c.family == family)
    }

    /// Clause count per family, for every family that occurs.
    pub fn family_counts(&self) -> BTreeMap<ClauseFamily, usize> {
        let mut out = BTreeMap::new();
        for c in &self.clauses {
            *out.entry(c.family).or_default() += 1;
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum HornDiagnostic {
    UndeclaredRelation { clause: usize, relation: String },
    ArityMismatch { clause: usize, relation: String, expected: usize, found: usize },
    DuplicateRelation(String),
    MissingErrorClause,
}

impl fmt::Display for HornDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HornDiagnostic::UndeclaredRelation { clause, relation } => {
                write!(f, "clause #{clause}: undeclared relation `{relation}`")
            }
            HornDiagnostic::ArityMismatch { clause, relation, expected, found } => write!(
                f,
                "clause #{clause}: `{relation}` applied to {found} arguments, declared with {expected}"
            ),
            HornDiagnostic::DuplicateRelation(r) => write!(f, "relation `{r}` declared twice"),
            HornDiagnostic::MissingErrorClause => write!(f, "no clause with head `false`"),
        }
    }
}

/// Reports undeclared relations, arity mismatches and duplicate
/// declarations; an empty result means the system is well-formed.
pub fn check_wellformed(hs: &HornSystem) -> Vec<HornDiagnostic> {
    let mut out = Vec::new();
    let mut arity = BTreeMap::new();
    for r in &hs.relations {
        if arity.insert(r.name.as_str(), r.arity).is_some() {
            out.push(HornDiagnostic::DuplicateRelation(r.name.clone()));
        }
    }
    for (i, c) in hs.clauses.iter().enumerate() {
        let head = match &c.head {
            Head::Relation(a) => Some(a),
            Head::False => None,
        };
        for app in c.body.iter().chain(head) {
            match arity.get(app.relation.as_str()) {
                None => {
                    out.push(HornDiagnostic::UndeclaredRelation { clause: i, relation: app.relation.clone() })
                }
                Some(&n) if n != app.args.len() => out.push(HornDiagnostic::ArityMismatch {
                    clause: i,
                    relation: app.relation.clone(),
                    expected: n,
                    found: app.args.len(),
                }),
                Some(_) => {}
            }
        }
    }
    if hs.metadata.has_error_spec && !hs.clauses.iter().any(|c| c.head == Head::False) {
        out.push(HornDiagnostic::MissingErrorClause);
    }
    out
}

// ---------------------------------------------------------------------------
// SMT-LIB2

fn is_simple_symbol(s: &str) -> bool {
    const EXTRA: &str = "~!@$%^&*_-+=<>.?/";
    !s.is_empty()
        && !s.starts_with(|c: char| c.is_ascii_digit())
        && s.chars().all(|c| c.is_ascii_alphanumeric() || EXTRA.contains(c))
}

/// Renders a name as an SMT-LIB symbol, quoting it when necessary.
pub fn smt_symbol(name: &str) -> String {
    if is_simple_symbol(name) {
        name.to_string()
    } else {
        format!("|{}|", name.replace(['|', '\\'], "_"))
    }
}

fn smt_int(k: i64) -> String {
    if k < 0 {
        format!("(- {})", k.unsigned_abs())
    } else {
        k.to_string()
    }
}

pub fn smt_term(out: &mut String, t: &HTerm) {
    match t {
        Term::Const(k) => out.push_str(&smt_int(*k)),
        Term::Var(v) => out.push_str(&smt_symbol(v)),
        Term::Add(a, b) | Term::Sub(a, b) => {
            out.push_str(if matches!(t, Term::Add(..)) { "(+ " } else { "(- " });
            smt_term(out, a);
            out.push(' ');
            smt_term(out, b);
            out.push(')');
        }
        Term::Neg(a) => {
            out.push_str("(- ");
            smt_term(out, a);
            out.push(')');
        }
        Term::Scale(k, a) => {
            out.push_str("(* ");
            out.push_str(&smt_int(*k));
            out.push(' ');
            smt_term(out, a);
            out.push(')');
        }
    }
}

fn smt_nary(out: &mut String, op: &str, items: &[HFormula], empty: &str) {
    match items {
        [] => out.push_str(empty),
        [one] => smt_formula(out, one),
        _ => {
            out.push('(');
            out.push_str(op);
            for it in items {
                out.push(' ');
                smt_formula(out, it);
            }
            out.push(')');
        }
    }
}

pub fn smt_formula(out: &mut String, f: &HFormula) {
    match f {
        Formula::True => out.push_str("true"),
        Formula::False => out.push_str("false"),
        Formula::Cmp(op, a, b) => {
            let sym = match op {
                CmpOp::Eq | CmpOp::Ne => "=",
                CmpOp::Le => "<=",
                CmpOp::Lt => "<",
                CmpOp::Ge => ">=",
                CmpOp::Gt => ">",
            };
            if *op == CmpOp::Ne {
                out.push_str("(not ");
            }
            out.push('(');
            out.push_str(sym);
            out.push(' ');
            smt_term(out, a);
            out.push(' ');
            smt_term(out, b);
            out.push(')');
            if *op == CmpOp::Ne {
                out.push(')');
            }
        }
        Formula::Divides(k, t) => {
            out.push_str("(= (mod ");
            smt_term(out, t);
            out.push(' ');
            out.push_str(&smt_int(*k));
            out.push_str(") 0)");
        }
        Formula::Distinct(ts) => {
            let mut pairs = Vec::new();
            for i in 0..ts.len() {
                for j in i + 1..ts.len() {
                    pairs.push(Formula::cmp(CmpOp::Ne, ts[i].clone(), ts[j].clone()));
                }
            }
            smt_nary(out, "and", &pairs, "true");
        }
        Formula::Not(a) => {
            out.push_str("(not ");
            smt_formula(out, a);
            out.push(')');
        }
        Formula::And(items) => smt_nary(out, "and", items, "true"),
        Formula::Or(items) => smt_nary(out, "or", items, "false"),
        Formula::Implies(a, b) => {
            out.push_str("(=> ");
            smt_formula(out, a);
            out.push(' ');
            smt_formula(out, b);
            out.push(')');
        }
    }
}

fn smt_app(out: &mut String, app: &RelationApp) {
    if app.args.is_empty() {
        out.push_str(&smt_symbol(&app.relation));
        return;
    }
    out.push('(');
    out.push_str(&smt_symbol(&app.relation));
    for a in &app.args {
        out.push(' ');
        smt_term(out, a);
    }
    out.push(')');
}

/// Variables of a clause in order of first occurrence: body literals,
/// then the constraint, then the head.
pub fn clause_variables(c: &HornClause) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    let mut visit = |v: &String| {
        if seen.insert(v.clone()) {
            out.push(v.clone());
        }
    };
    for app in &c.body {
        app.args.iter().for_each(|a| a.for_each_var(&mut visit));
    }
    c.constraint.for_each_var(&mut visit);
    if let Head::Relation(app) = &c.head {
        app.args.iter().for_each(|a| a.for_each_var(&mut visit));
    }
    out
}

fn write_clause(out: &mut String, c: &HornClause) {
    let vars = clause_variables(c);
    let mut body = String::new();
    let mut parts = Vec::new();
    for app in &c.body {
        let mut s = String::new();
        smt_app(&mut s, app);
        parts.push(s);
    }
    if c.constraint != Formula::True || parts.is_empty() {
        let mut s = String::new();
        smt_formula(&mut s, &c.constraint);
        parts.push(s);
    }
    if parts.len() == 1 {
        body.push_str(&parts[0]);
    } else {
        body.push_str("(and ");
        body.push_str(&parts.join(" "));
        body.push(')');
    }
    let mut head = String::new();
    match &c.head {
        Head::Relation(app) => smt_app(&mut head, app),
        Head::False => head.push_str("false"),
    }
    let _ = write!(out, "; [{}]", c.family.tag());
    if !c.note.is_empty() {
        let _ = write!(out, " {}", c.note.replace('\n', " "));
    }
    out.push('\n');
    if vars.is_empty() {
        let _ = writeln!(out, "(assert (=> {body} {head}))");
    } else {
        let decls: Vec<String> = vars.iter().map(|v| format!("({} Int)", smt_symbol(v))).collect();
        let _ = writeln!(out, "(assert (forall ({}) (=> {body} {head})))", decls.join(" "));
    }
}

/// Renders the system as an SMT-LIB2 script. Output depends only on the
/// value of `hs`: relations and clauses appear in insertion order.
pub fn to_smtlib(hs: &HornSystem) -> String {
    let mut out = String::new();
    if !hs.metadata.model.is_empty() {
        let _ = writeln!(out, "; model: {}", hs.metadata.model);
    }
    if !hs.metadata.schema.is_empty() {
        let _ = writeln!(out, "; schema: {}", hs.metadata.schema);
    }
    out.push_str("(set-logic HORN)\n");
    for r in &hs.relations {
        let sorts = vec!["Int"; r.arity].join(" ");
        let _ = writeln!(out, "(declare-fun {} ({}) Bool)", smt_symbol(&r.name), sorts);
    }
    for c in &hs.clauses {
        write_clause(&mut out, c);
    }
    out.push_str("(check-sat)\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(n: &str) -> HTerm {
        Term::Var(n.to_string())
    }

    fn minimal() -> HornSystem {
        HornSystem {
            relations: vec![RelationSymbol { name: "p".into(), arity: 1, vector: vec![1] }],
            clauses: vec![HornClause {
                head: Head::False,
                constraint: Formula::cmp(CmpOp::Lt, v("x"), Term::Const(0)),
                body: vec![RelationApp { relation: "p".into(), args: vec![v("x")] }],
                family: ClauseFamily::Error,
                note: String::new(),
            }],
            metadata: HornMetadata::default(),
        }
    }

    #[test]
    fn minimal_script() {
        let s = to_smtlib(&minimal());
        assert_eq!(
            s,
            "(set-logic HORN)\n\
             (declare-fun p (Int) Bool)\n\
             ; [error]\n\
             (assert (forall ((x Int)) (=> (and (p x) (< x 0)) false)))\n\
             (check-sat)\n"
        );
    }

    #[test]
    fn fact_clause() {
        let mut hs = minimal();
        hs.clauses = vec![HornClause {
            head: Head::Relation(RelationApp { relation: "p".into(), args: vec![v("x")] }),
            constraint: Formula::eq(v("x"), Term::Const(-3)),
            body: vec![],
            family: ClauseFamily::Init,
            note: "start".into(),
        }];
        assert!(
            to_smtlib(&hs).contains("; [init] start\n(assert (forall ((x Int)) (=> (= x (- 3)) (p x))))\n")
        );
    }

    #[test]
    fn distinct_is_expanded_pairwise() {
        let mut s = String::new();
        smt_formula(&mut s, &Formula::Distinct(vec![v("a"), v("b"), v("c")]));
        assert_eq!(s, "(and (not (= a b)) (not (= a c)) (not (= b c)))");
    }

    #[test]
    fn wellformedness() {
        assert_eq!(check_wellformed(&minimal()), vec![]);
        let mut hs = minimal();
        hs.clauses[0].body[0].args.push(v("y"));
        hs.clauses[0].body.push(RelationApp { relation: "q".into(), args: vec![] });
        assert_eq!(
            check_wellformed(&hs),
            vec![
                HornDiagnostic::ArityMismatch { clause: 0, relation: "p".into(), expected: 1, found: 2 },
                HornDiagnostic::UndeclaredRelation { clause: 0, relation: "q".into() },
            ]
        );
    }

    #[test]
    fn symbols_are_quoted_when_needed() {
        assert_eq!(smt_symbol("train.t1.loc!1"), "train.t1.loc!1");
        assert_eq!(smt_symbol("1x"), "|1x|");
        assert_eq!(smt_symbol("a b"), "|a b|");
    }
}
