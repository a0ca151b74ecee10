use std::collections::HashMap;

use proptest::prelude::*;
use tachorn::constraint::{eval_constraint, CmpOp, Constraint, EvalError, Formula, Term, Valuation, VarRef};
use tachorn::model::time_invariant_is_convex;

fn g(n: &str) -> Term<VarRef> {
    Term::Var(VarRef::Global(n.into()))
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
fn approach_update() {
    let n = VarRef::Global("n".into());
    let np = VarRef::GlobalPrimed("n".into());
    let c = Formula::and([
        Formula::eq(Term::Var(n.clone()), Term::Const(0)),
        Formula::eq(Term::Var(np.clone()), Term::add(Term::Var(n.clone()), Term::Const(1))),
    ]);
    assert!(eval_constraint(&c, &env(&[(n.clone(), 0), (np.clone(), 1)])).unwrap());
    assert!(!eval_constraint(&c, &env(&[(n, 0), (np, 2)])).unwrap());
}

#[test]
fn distinct_ids() {
    let c = Formula::Distinct(vec![Term::Var(VarRef::SelfId), Term::Var(VarRef::PeerId("b".into()))]);
    let e = env(&[(VarRef::SelfId, 1), (VarRef::PeerId("b".into()), 1)]);
    assert!(!eval_constraint(&c, &e).unwrap());
}

#[test]
fn unbound_variable() {
    let c = Formula::eq(g("x"), Term::Const(0));
    assert!(matches!(eval_constraint(&c, &Valuation::new()), Err(EvalError::UnboundVariable(_))));
}

// Reference evaluator, written independently of the library one.

fn ref_term(t: &Term<VarRef>, env: &HashMap<VarRef, i64>) -> i128 {
    match t {
        Term::Const(c) => *c as i128,
        Term::Var(v) => env[v] as i128,
        Term::Add(a, b) => ref_term(a, env) + ref_term(b, env),
        Term::Sub(a, b) => ref_term(a, env) - ref_term(b, env),
        Term::Neg(a) => -ref_term(a, env),
        Term::Scale(k, a) => *k as i128 * ref_term(a, env),
    }
}

fn ref_formula(f: &Constraint, env: &HashMap<VarRef, i64>) -> bool {
    match f {
        Formula::True => true,
        Formula::False => false,
        Formula::Cmp(op, a, b) => {
            let (x, y) = (ref_term(a, env), ref_term(b, env));
            match op {
                CmpOp::Eq => x == y,
                CmpOp::Ne => x != y,
                CmpOp::Le => x <= y,
                CmpOp::Lt => x < y,
                CmpOp::Ge => x >= y,
                CmpOp::Gt => x > y,
            }
        }
        Formula::Divides(k, t) => ref_term(t, env) % (*k as i128) == 0,
        Formula::Distinct(ts) => {
            let vals: Vec<i128> = ts.iter().map(|t| ref_term(t, env)).collect();
            (0..vals.len()).all(|i| (i + 1..vals.len()).all(|j| vals[i] != vals[j]))
        }
        Formula::Not(a) => !ref_formula(a, env),
        Formula::And(items) => items.iter().fold(true, |acc, x| acc & ref_formula(x, env)),
        Formula::Or(items) => items.iter().fold(false, |acc, x| acc | ref_formula(x, env)),
        Formula::Implies(a, b) => !ref_formula(a, env) || ref_formula(b, env),
    }
}

fn vars() -> Vec<VarRef> {
    vec![
        VarRef::Global("a".into()),
        VarRef::Global("b".into()),
        VarRef::Local("s".into()),
        VarRef::LocalPrimed("s".into()),
        VarRef::SelfId,
    ]
}

fn term() -> BoxedStrategy<Term<VarRef>> {
    let leaf = prop_oneof![
        (-20i64..20).prop_map(Term::Const),
        proptest::sample::select(vars()).prop_map(Term::Var),
    ];
    leaf.prop_recursive(3, 10, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Term::Add(Box::new(a), Box::new(b))),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Term::Sub(Box::new(a), Box::new(b))),
            inner.clone().prop_map(|a| Term::Neg(Box::new(a))),
            (-5i64..5, inner).prop_map(|(k, a)| Term::Scale(k, Box::new(a))),
        ]
    })
    .boxed()
}

fn formula() -> BoxedStrategy<Constraint> {
    let op = proptest::sample::select(vec![CmpOp::Eq, CmpOp::Ne, CmpOp::Le, CmpOp::Lt, CmpOp::Ge, CmpOp::Gt]);
    let atom = prop_oneof![
        Just(Formula::True),
        Just(Formula::False),
        (op, term(), term()).prop_map(|(o, a, b)| Formula::Cmp(o, a, b)),
        (1i64..7, term()).prop_map(|(k, t)| Formula::Divides(k, t)),
        proptest::collection::vec(term(), 0..4).prop_map(Formula::Distinct),
    ];
    atom.prop_recursive(4, 24, 3, |inner| {
        prop_oneof![
            inner.clone().prop_map(|a| Formula::Not(Box::new(a))),
            proptest::collection::vec(inner.clone(), 0..4).prop_map(Formula::And),
            proptest::collection::vec(inner.clone(), 0..4).prop_map(Formula::Or),
            (inner.clone(), inner).prop_map(|(a, b)| Formula::Implies(Box::new(a), Box::new(b))),
        ]
    })
    .boxed()
}

fn valuation() -> impl Strategy<Value = HashMap<VarRef, i64>> {
    proptest::collection::vec(-50i64..50, vars().len())
        .prop_map(|vals| vars().into_iter().zip(vals).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn evaluator_agrees_with_reference(f in formula(), e in valuation()) {
        prop_assert_eq!(eval_constraint(&f, &e).unwrap(), ref_formula(&f, &e), "{}", f);
    }
}

// Convexity of accepted time invariants.

fn clock_val() -> Term<VarRef> {
    Term::sub(g("C"), Term::Var(VarRef::Local("x".into())))
}

fn time_item() -> BoxedStrategy<Constraint> {
    let op = proptest::sample::select(vec![CmpOp::Eq, CmpOp::Ne, CmpOp::Le, CmpOp::Lt, CmpOp::Ge, CmpOp::Gt]);
    let loc = Term::Var(VarRef::Local("loc".into()));
    let bound = (op.clone(), 0i64..12).prop_map(|(o, k)| Formula::cmp(o, clock_val(), Term::Const(k)));
    let plain = (op.clone(), 0i64..3).prop_map({
        let loc = loc.clone();
        move |(o, k)| Formula::cmp(o, loc.clone(), Term::Const(k))
    });
    let guarded = (0i64..3, proptest::collection::vec(bound.clone(), 1..3)).prop_map(move |(k, bs)| {
        Formula::implies(Formula::eq(loc.clone(), Term::Const(k)), Formula::and(bs))
    });
    let disjunctive = (bound.clone(), bound.clone()).prop_map(|(a, b)| Formula::or([a, b]));
    prop_oneof![bound, plain, guarded, disjunctive].boxed()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn accepted_invariants_are_convex(
        items in proptest::collection::vec(time_item(), 1..4),
        x in 0i64..5,
        loc in 0i64..3,
    ) {
        let tinv = Formula::and(items);
        prop_assume!(time_invariant_is_convex(&tinv));
        let holds = |c: i64| {
            let e = env(&[
                (VarRef::Global("C".into()), c),
                (VarRef::Local("x".into()), x),
                (VarRef::Local("loc".into()), loc),
            ]);
            eval_constraint(&tinv, &e).unwrap()
        };
        let pts: Vec<i64> = (x..x + 20).filter(|&c| holds(c)).collect();
        if let (Some(lo), Some(hi)) = (pts.first(), pts.last()) {
            prop_assert_eq!(pts.len() as i64, hi - lo + 1, "{} at x={} loc={}", tinv, x, loc);
        }
    }
}

#[test]
fn disequality_on_time_is_rejected() {
    let f = Formula::cmp(CmpOp::Ne, clock_val(), Term::Const(3));
    assert!(!time_invariant_is_convex(&f));
    let d = Formula::or([Formula::le(clock_val(), Term::Const(1)), Formula::ge(clock_val(), Term::Const(5))]);
    assert!(!time_invariant_is_convex(&d));
}
