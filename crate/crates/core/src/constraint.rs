//! Quantifier-free linear integer arithmetic.
//!
//! [`Term`] and [`Formula`] are generic over the variable type so the same
//! AST serves model constraints (over [`VarRef`]), compiled oracle
//! constraints (over slot indices) and Horn clause bodies (over clause
//! variable names). Terms are linear by construction: the only product is
//! [`Term::Scale`], a constant times a term.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Linear integer term.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Term<V> {
    Const(i64),
    Var(V),
    Add(Box<Term<V>>, Box<Term<V>>),
    Sub(Box<Term<V>>, Box<Term<V>>),
    Neg(Box<Term<V>>),
    Scale(i64, Box<Term<V>>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CmpOp {
    Eq,
    Ne,
    Le,
    Lt,
    Ge,
    Gt,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
            CmpOp::Le => "<=",
            CmpOp::Lt => "<",
            CmpOp::Ge => ">=",
            CmpOp::Gt => ">",
        }
    }

    pub fn holds(self, lhs: i64, rhs: i64) -> bool {
        match self {
            CmpOp::Eq => lhs == rhs,
            CmpOp::Ne => lhs != rhs,
            CmpOp::Le => lhs <= rhs,
            CmpOp::Lt => lhs < rhs,
            CmpOp::Ge => lhs >= rhs,
            CmpOp::Gt => lhs > rhs,
        }
    }
}

/// Quantifier-free formula. Build conjunctions and disjunctions through
/// [`Formula::and`] / [`Formula::or`], which keep them flat; the parser and
/// printer rely on that normal form for round-tripping.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Formula<V> {
    True,
    False,
    Cmp(CmpOp, Term<V>, Term<V>),
    /// `k | t`, k > 0.
    Divides(i64, Term<V>),
    /// Pairwise distinct values.
    Distinct(Vec<Term<V>>),
    Not(Box<Formula<V>>),
    And(Vec<Formula<V>>),
    Or(Vec<Formula<V>>),
    Implies(Box<Formula<V>>, Box<Formula<V>>),
}

/// Variable occurring in a model constraint.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VarRef {
    Global(String),
    Local(String),
    GlobalPrimed(String),
    LocalPrimed(String),
    /// Process id of the executing instance.
    SelfId,
    /// Process id bound to another error role.
    PeerId(String),
}

impl VarRef {
    pub fn is_primed(&self) -> bool {
        matches!(self, VarRef::GlobalPrimed(_) | VarRef::LocalPrimed(_))
    }
}

impl fmt::Display for VarRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VarRef::Global(n) | VarRef::Local(n) => write!(f, "{n}"),
            VarRef::GlobalPrimed(n) | VarRef::LocalPrimed(n) => write!(f, "{n}'"),
            VarRef::SelfId => write!(f, "self"),
            VarRef::PeerId(r) => write!(f, "id({r})"),
        }
    }
}

/// Model-level constraint.
pub type Constraint = Formula<VarRef>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("unbound variable `{0}`")]
    UnboundVariable(String),
    #[error("integer overflow")]
    Overflow,
}

impl<V> Term<V> {
    pub fn var(v: V) -> Self {
        Term::Var(v)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn add(a: Term<V>, b: Term<V>) -> Self {
        Term::Add(Box::new(a), Box::new(b))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn sub(a: Term<V>, b: Term<V>) -> Self {
        Term::Sub(Box::new(a), Box::new(b))
    }

    pub fn scale(k: i64, t: Term<V>) -> Self {
        Term::Scale(k, Box::new(t))
    }

    pub fn eval<F>(&self, lookup: &F) -> Result<i64, EvalError>
    where
        F: Fn(&V) -> Option<i64>,
        V: fmt::Display,
    {
        Ok(match self {
            Term::Const(c) => *c,
            Term::Var(v) => lookup(v).ok_or_else(|| EvalError::UnboundVariable(v.to_string()))?,
            Term::Add(a, b) => a.eval(lookup)?.checked_add(b.eval(lookup)?).ok_or(EvalError::Overflow)?,
            Term::Sub(a, b) => a.eval(lookup)?.checked_sub(b.eval(lookup)?).ok_or(EvalError::Overflow)?,
            Term::Neg(a) => a.eval(lookup)?.checked_neg().ok_or(EvalError::Overflow)?,
            Term::Scale(k, a) => k.checked_mul(a.eval(lookup)?).ok_or(EvalError::Overflow)?,
        })
    }

    /// Substitutes every variable by a term.
    pub fn subst<W, F>(&self, f: &mut F) -> Term<W>
    where
        F: FnMut(&V) -> Term<W>,
    {
        match self {
            Term::Const(c) => Term::Const(*c),
            Term::Var(v) => f(v),
            Term::Add(a, b) => Term::add(a.subst(f), b.subst(f)),
            Term::Sub(a, b) => Term::sub(a.subst(f), b.subst(f)),
            Term::Neg(a) => Term::Neg(Box::new(a.subst(f))),
            Term::Scale(k, a) => Term::scale(*k, a.subst(f)),
        }
    }

    pub fn map_vars<W, F>(&self, f: &mut F) -> Term<W>
    where
        F: FnMut(&V) -> W,
    {
        self.subst(&mut |v| Term::Var(f(v)))
    }

    pub fn for_each_var<F: FnMut(&V)>(&self, f: &mut F) {
        match self {
            Term::Const(_) => {}
            Term::Var(v) => f(v),
            Term::Add(a, b) | Term::Sub(a, b) => {
                a.for_each_var(f);
                b.for_each_var(f);
            }
            Term::Neg(a) | Term::Scale(_, a) => a.for_each_var(f),
        }
    }

    /// Evaluates the term as `coeff * x + offset`, where `x` is the single
    /// variable for which `is_target` holds and every other variable is
    /// looked up.
    pub fn affine_in<P, F>(&self, is_target: &P, lookup: &F) -> Result<(i64, i64), EvalError>
    where
        P: Fn(&V) -> bool,
        F: Fn(&V) -> Option<i64>,
        V: fmt::Display,
    {
        let ov = || EvalError::Overflow;
        Ok(match self {
            Term::Const(c) => (0, *c),
            Term::Var(v) if is_target(v) => (1, 0),
            Term::Var(v) => (0, lookup(v).ok_or_else(|| EvalError::UnboundVariable(v.to_string()))?),
            Term::Add(a, b) => {
                let (ca, oa) = a.affine_in(is_target, lookup)?;
                let (cb, ob) = b.affine_in(is_target, lookup)?;
                (ca.checked_add(cb).ok_or_else(ov)?, oa.checked_add(ob).ok_or_else(ov)?)
            }
            Term::Sub(a, b) => {
                let (ca, oa) = a.affine_in(is_target, lookup)?;
                let (cb, ob) = b.affine_in(is_target, lookup)?;
                (ca.checked_sub(cb).ok_or_else(ov)?, oa.checked_sub(ob).ok_or_else(ov)?)
            }
            Term::Neg(a) => {
                let (c, o) = a.affine_in(is_target, lookup)?;
                (c.checked_neg().ok_or_else(ov)?, o.checked_neg().ok_or_else(ov)?)
            }
            Term::Scale(k, a) => {
                let (c, o) = a.affine_in(is_target, lookup)?;
                (k.checked_mul(c).ok_or_else(ov)?, k.checked_mul(o).ok_or_else(ov)?)
            }
        })
    }

    /// Sum of the coefficients of all variables selected by `pred`.
    pub fn coefficient_sum<P: Fn(&V) -> bool>(&self, pred: &P) -> i64 {
        match self {
            Term::Const(_) => 0,
            Term::Var(v) => i64::from(pred(v)),
            Term::Add(a, b) => a.coefficient_sum(pred) + b.coefficient_sum(pred),
            Term::Sub(a, b) => a.coefficient_sum(pred) - b.coefficient_sum(pred),
            Term::Neg(a) => -a.coefficient_sum(pred),
            Term::Scale(k, a) => k * a.coefficient_sum(pred),
        }
    }
}

impl<V> Formula<V> {
    pub fn cmp(op: CmpOp, a: Term<V>, b: Term<V>) -> Self {
        Formula::Cmp(op, a, b)
    }

    pub fn eq(a: Term<V>, b: Term<V>) -> Self {
        Formula::Cmp(CmpOp::Eq, a, b)
    }

    pub fn le(a: Term<V>, b: Term<V>) -> Self {
        Formula::Cmp(CmpOp::Le, a, b)
    }

    pub fn ge(a: Term<V>, b: Term<V>) -> Self {
        Formula::Cmp(CmpOp::Ge, a, b)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(f: Formula<V>) -> Self {
        match f {
            Formula::True => Formula::False,
            Formula::False => Formula::True,
            f => Formula::Not(Box::new(f)),
        }
    }

    pub fn implies(a: Formula<V>, b: Formula<V>) -> Self {
        Formula::Implies(Box::new(a), Box::new(b))
    }

    /// Flattening conjunction; `True` items are dropped.
    pub fn and(items: impl IntoIterator<Item = Formula<V>>) -> Self {
        let mut out = Vec::new();
        for it in items {
            match it {
                Formula::True => {}
                Formula::And(inner) => out.extend(inner),
                other => out.push(other),
            }
        }
        match out.len() {
            0 => Formula::True,
            1 => out.pop().unwrap(),
            _ => Formula::And(out),
        }
    }

    /// Flattening disjunction; `False` items are dropped.
    pub fn or(items: impl IntoIterator<Item = Formula<V>>) -> Self {
        let mut out = Vec::new();
        for it in items {
            match it {
                Formula::False => {}
                Formula::Or(inner) => out.extend(inner),
                other => out.push(other),
            }
        }
        match out.len() {
            0 => Formula::False,
            1 => out.pop().unwrap(),
            _ => Formula::Or(out),
        }
    }

    /// Top-level conjuncts (a non-conjunction is its own single conjunct).
    pub fn conjuncts(&self) -> Vec<&Formula<V>> {
        match self {
            Formula::True => vec![],
            Formula::And(items) => items.iter().collect(),
            other => vec![other],
        }
    }

    pub fn eval<F>(&self, lookup: &F) -> Result<bool, EvalError>
    where
        F: Fn(&V) -> Option<i64>,
        V: fmt::Display,
    {
        Ok(match self {
            Formula::True => true,
            Formula::False => false,
            Formula::Cmp(op, a, b) => op.holds(a.eval(lookup)?, b.eval(lookup)?),
            Formula::Divides(k, t) => {
                let v = t.eval(lookup)?;
                *k != 0 && v.rem_euclid(*k) == 0
            }
            Formula::Distinct(ts) => {
                let vals = ts.iter().map(|t| t.eval(lookup)).collect::<Result<Vec<_>, _>>()?;
                let mut seen = BTreeSet::new();
                vals.into_iter().all(|v| seen.insert(v))
            }
            Formula::Not(f) => !f.eval(lookup)?,
            Formula::And(items) => {
                for it in items {
                    if !it.eval(lookup)? {
                        return Ok(false);
                    }
                }
                true
            }
            Formula::Or(items) => {
                for it in items {
                    if it.eval(lookup)? {
                        return Ok(true);
                    }
                }
                false
            }
            Formula::Implies(a, b) => !a.eval(lookup)? || b.eval(lookup)?,
        })
    }

    pub fn subst<W, F>(&self, f: &mut F) -> Formula<W>
    where
        F: FnMut(&V) -> Term<W>,
    {
        match self {
            Formula::True => Formula::True,
            Formula::False => Formula::False,
            Formula::Cmp(op, a, b) => Formula::Cmp(*op, a.subst(f), b.subst(f)),
            Formula::Divides(k, t) => Formula::Divides(*k, t.subst(f)),
            Formula::Distinct(ts) => Formula::Distinct(ts.iter().map(|t| t.subst(f)).collect()),
            Formula::Not(a) => Formula::Not(Box::new(a.subst(f))),
            Formula::And(items) => Formula::And(items.iter().map(|i| i.subst(f)).collect()),
            Formula::Or(items) => Formula::Or(items.iter().map(|i| i.subst(f)).collect()),
            Formula::Implies(a, b) => Formula::implies(a.subst(f), b.subst(f)),
        }
    }

    pub fn map_vars<W, F>(&self, f: &mut F) -> Formula<W>
    where
        F: FnMut(&V) -> W,
    {
        self.subst(&mut |v| Term::Var(f(v)))
    }

    pub fn for_each_var<F: FnMut(&V)>(&self, f: &mut F) {
        match self {
            Formula::True | Formula::False => {}
            Formula::Cmp(_, a, b) => {
                a.for_each_var(f);
                b.for_each_var(f);
            }
            Formula::Divides(_, t) => t.for_each_var(f),
            Formula::Distinct(ts) => ts.iter().for_each(|t| t.for_each_var(f)),
            Formula::Not(a) => a.for_each_var(f),
            Formula::And(items) | Formula::Or(items) => items.iter().for_each(|i| i.for_each_var(f)),
            Formula::Implies(a, b) => {
                a.for_each_var(f);
                b.for_each_var(f);
            }
        }
    }

    /// Visits every arithmetic atom (`Cmp`, `Divides`, `Distinct`).
    pub fn for_each_atom<'a, F: FnMut(&'a Formula<V>)>(&'a self, f: &mut F) {
        match self {
            Formula::True | Formula::False => {}
            Formula::Cmp(..) | Formula::Divides(..) | Formula::Distinct(_) => f(self),
            Formula::Not(a) => a.for_each_atom(f),
            Formula::And(items) | Formula::Or(items) => items.iter().for_each(|i| i.for_each_atom(f)),
            Formula::Implies(a, b) => {
                a.for_each_atom(f);
                b.for_each_atom(f);
            }
        }
    }

    pub fn vars(&self) -> BTreeSet<V>
    where
        V: Ord + Clone,
    {
        let mut out = BTreeSet::new();
        self.for_each_var(&mut |v| {
            out.insert(v.clone());
        });
        out
    }

    pub fn mentions<P: Fn(&V) -> bool>(&self, pred: P) -> bool {
        let mut hit = false;
        self.for_each_var(&mut |v| hit |= pred(v));
        hit
    }
}

/// Evaluates a model constraint under a valuation of its variables.
pub fn eval_constraint(c: &Constraint, env: &Valuation) -> Result<bool, EvalError> {
    c.eval(&|v: &VarRef| env.get(v).copied())
}

/// Variable assignment for [`eval_constraint`].
pub type Valuation = std::collections::HashMap<VarRef, i64>;

// ---------------------------------------------------------------------------
// Printing

fn term_prec<V>(t: &Term<V>) -> u8 {
    match t {
        Term::Add(..) | Term::Sub(..) => 1,
        Term::Scale(..) => 2,
        Term::Neg(_) => 3,
        Term::Const(c) if *c < 0 => 3,
        Term::Const(_) | Term::Var(_) => 4,
    }
}

/// Writes a term in the surface syntax, rendering variables with `var`.
pub fn write_term<V>(out: &mut String, t: &Term<V>, var: &dyn Fn(&V) -> String) {
    match t {
        Term::Const(c) => out.push_str(&c.to_string()),
        Term::Var(v) => out.push_str(&var(v)),
        Term::Add(a, b) | Term::Sub(a, b) => {
            write_term(out, a, var);
            out.push_str(if matches!(t, Term::Add(..)) { " + " } else { " - " });
            if term_prec(b) <= 1 {
                out.push('(');
                write_term(out, b, var);
                out.push(')');
            } else {
                write_term(out, b, var);
            }
        }
        Term::Scale(k, a) => {
            if *k < 0 {
                out.push_str(&format!("({k})"));
            } else {
                out.push_str(&k.to_string());
            }
            out.push_str(" * ");
            if term_prec(a) <= 2 {
                out.push('(');
                write_term(out, a, var);
                out.push(')');
            } else {
                write_term(out, a, var);
            }
        }
        Term::Neg(a) => {
            out.push('-');
            if term_prec(a) <= 3 || matches!(**a, Term::Const(_)) {
                out.push('(');
                write_term(out, a, var);
                out.push(')');
            } else {
                write_term(out, a, var);
            }
        }
    }
}

fn formula_prec<V>(f: &Formula<V>) -> u8 {
    match f {
        Formula::Implies(..) => 0,
        Formula::Or(_) => 1,
        Formula::And(_) => 2,
        Formula::Not(_) => 3,
        _ => 4,
    }
}

/// Writes a formula in the surface syntax.
pub fn write_formula<V>(out: &mut String, f: &Formula<V>, var: &dyn Fn(&V) -> String) {
    let child = |out: &mut String, c: &Formula<V>, min: u8| {
        if formula_prec(c) < min {
            out.push('(');
            write_formula(out, c, var);
            out.push(')');
        } else {
            write_formula(out, c, var);
        }
    };
    match f {
        Formula::True => out.push_str("true"),
        Formula::False => out.push_str("false"),
        Formula::Cmp(op, a, b) => {
            write_term(out, a, var);
            out.push(' ');
            out.push_str(op.symbol());
            out.push(' ');
            write_term(out, b, var);
        }
        Formula::Divides(k, t) => {
            out.push_str(&format!("{k} | "));
            if term_prec(t) < 4 {
                out.push('(');
                write_term(out, t, var);
                out.push(')');
            } else {
                write_term(out, t, var);
            }
        }
        Formula::Distinct(ts) => {
            out.push_str("dist(");
            for (i, t) in ts.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_term(out, t, var);
            }
            out.push(')');
        }
        Formula::Not(a) => {
            out.push('!');
            if matches!(**a, Formula::True | Formula::False | Formula::Distinct(_)) {
                write_formula(out, a, var);
            } else {
                out.push('(');
                write_formula(out, a, var);
                out.push(')');
            }
        }
        Formula::And(items) => {
            for (i, it) in items.iter().enumerate() {
                if i > 0 {
                    out.push_str(" && ");
                }
                // nested conjunctions only exist in non-normalized input
                child(out, it, 3);
            }
        }
        Formula::Or(items) => {
            for (i, it) in items.iter().enumerate() {
                if i > 0 {
                    out.push_str(" || ");
                }
                child(out, it, 2);
            }
        }
        Formula::Implies(a, b) => {
            child(out, a, 1);
            out.push_str(" -> ");
            child(out, b, 0);
        }
    }
}

impl<V: fmt::Display> fmt::Display for Term<V> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        write_term(&mut s, self, &|v| v.to_string());
        f.write_str(&s)
    }
}

impl<V: fmt::Display> fmt::Display for Formula<V> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        write_formula(&mut s, self, &|v| v.to_string());
        f.write_str(&s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(n: &str) -> Term<VarRef> {
        Term::Var(VarRef::Global(n.into()))
    }

    fn gp(n: &str) -> Term<VarRef> {
        Term::Var(VarRef::GlobalPrimed(n.into()))
    }

    fn env(pairs: &[(VarRef, i64)]) -> Valuation {
        pairs.iter().cloned().collect()
    }

    #[test]
    fn boundary_comparison() {
        let c = Formula::ge(g("x"), Term::Const(3));
        assert!(eval_constraint(&c, &env(&[(VarRef::Global("x".into()), 3)])).unwrap());
        assert!(!eval_constraint(&c, &env(&[(VarRef::Global("x".into()), 2)])).unwrap());
    }

    #[test]
    fn counter_increment_update() {
        let c = Formula::and([
            Formula::eq(g("n"), Term::Const(0)),
            Formula::eq(gp("n"), Term::add(g("n"), Term::Const(1))),
        ]);
        let e = env(&[(VarRef::Global("n".into()), 0), (VarRef::GlobalPrimed("n".into()), 1)]);
        assert!(eval_constraint(&c, &e).unwrap());
    }

    #[test]
    fn dist_rejects_repeated_ids() {
        let c: Constraint = Formula::Distinct(vec![Term::Const(1), Term::Const(1)]);
        assert!(!eval_constraint(&c, &Valuation::new()).unwrap());
        let c: Constraint = Formula::Distinct(vec![Term::Const(1), Term::Const(2), Term::Const(3)]);
        assert!(eval_constraint(&c, &Valuation::new()).unwrap());
    }

    #[test]
    fn unbound_variable_is_reported() {
        let c = Formula::le(g("y"), Term::Const(0));
        assert_eq!(eval_constraint(&c, &Valuation::new()), Err(EvalError::UnboundVariable("y".into())));
    }

    #[test]
    fn overflow_is_an_error() {
        let c: Constraint = Formula::le(Term::add(Term::Const(i64::MAX), Term::Const(1)), Term::Const(0));
        assert_eq!(eval_constraint(&c, &Valuation::new()), Err(EvalError::Overflow));
    }

    #[test]
    fn divisibility_uses_euclidean_remainder() {
        let c: Constraint = Formula::Divides(3, Term::Const(-6));
        assert!(eval_constraint(&c, &Valuation::new()).unwrap());
        let c: Constraint = Formula::Divides(3, Term::Const(-7));
        assert!(!eval_constraint(&c, &Valuation::new()).unwrap());
    }

    #[test]
    fn and_or_flatten() {
        let a: Formula<VarRef> = Formula::eq(g("a"), Term::Const(1));
        let b = Formula::eq(g("b"), Term::Const(1));
        let c = Formula::eq(g("c"), Term::Const(1));
        let nested = Formula::and([Formula::and([a.clone(), b.clone()]), Formula::True, c.clone()]);
        assert_eq!(nested, Formula::And(vec![a.clone(), b, c]));
        assert_eq!(Formula::and([a.clone()]), a);
        assert_eq!(Formula::<VarRef>::or([]), Formula::False);
    }

    #[test]
    fn affine_decomposition() {
        // C - x <= 5 with x = 7, as a function of C
        let t = Term::sub(g("C"), g("x"));
        let (k, o) = t.affine_in(&|v: &VarRef| *v == VarRef::Global("C".into()), &|_| Some(7)).unwrap();
        assert_eq!((k, o), (1, -7));
    }

    #[test]
    fn printing_parenthesizes_by_precedence() {
        let t = Term::sub(g("a"), Term::sub(g("b"), g("c")));
        assert_eq!(t.to_string(), "a - (b - c)");
        let t = Term::scale(2, Term::add(g("a"), Term::Const(1)));
        assert_eq!(t.to_string(), "2 * (a + 1)");
        let f = Formula::and([
            Formula::or([Formula::eq(g("a"), Term::Const(0)), Formula::eq(g("b"), Term::Const(0))]),
            Formula::implies(Formula::True, Formula::False),
        ]);
        assert_eq!(f.to_string(), "(a = 0 || b = 0) && (true -> false)");
        assert_eq!(Term::<VarRef>::Neg(Box::new(Term::Const(5))).to_string(), "-(5)");
    }
}
