mod common;

use proptest::prelude::*;
use tachorn::constraint::{CmpOp, Constraint, Formula, Term, VarRef};
use tachorn::dsl::{parse_model, print_model};
use tachorn::model::{
    validate_model, Diagnostic, ErrorRole, GuardedTransition, LocalDecl, Multiplicity, ProcessTemplate,
    SystemModel, TimeModel, TransitionKind,
};

#[test]
fn corpus_parses_and_validates() {
    for name in common::corpus() {
        let m = common::load(&name);
        assert_eq!(validate_model(&m), vec![], "{name}");
    }
}

#[test]
fn corpus_round_trips() {
    for name in common::corpus() {
        let m = common::load(&name);
        let printed = print_model(&m);
        let back = parse_model(&printed).unwrap_or_else(|e| panic!("{name}: {e}\n{printed}"));
        assert_eq!(back, m, "{name}");
        assert_eq!(print_model(&back), printed, "{name}");
    }
}

#[test]
fn train_structure() {
    let m = common::load("train");
    let kinds: Vec<(&str, Multiplicity)> =
        m.templates.iter().map(|t| (t.name.as_str(), t.multiplicity)).collect();
    assert_eq!(kinds, vec![("controller", Multiplicity::Singleton), ("train", Multiplicity::Replicated)]);
    assert_eq!(m.channels, vec!["appr", "stop", "go", "leave"]);
}

#[test]
fn temperature_structure() {
    let m = common::load("temperature");
    assert_eq!(m.templates.len(), 3);
    assert!(m.all_singleton());
    let mut ports: Vec<&str> = m.ports.iter().map(|p| p.name.as_str()).collect();
    ports.sort();
    assert_eq!(ports, vec!["cool", "cool1", "cool2", "heat", "rest1", "rest2"]);
    assert!(!m.interactions.is_empty());
    for i in &m.interactions {
        assert!(i.iter().all(|p| m.port_owner(p).is_some()));
    }
}

#[test]
fn dropping_a_channel_declaration_is_diagnosed() {
    let text = std::fs::read_to_string(common::model_path("train")).unwrap();
    let text = text.replace("channel appr, stop, go, leave;", "channel appr, stop, leave;");
    let m = parse_model(&text).unwrap();
    assert_eq!(validate_model(&m), vec![Diagnostic::UndeclaredChannel("go".into())]);
}

#[test]
fn duplicate_port_owner_is_diagnosed() {
    let m = parse_model(
        "system p { port a of x; port a of y; template x { trans port a; } template y { trans port a; } }",
    )
    .unwrap();
    assert!(validate_model(&m).contains(&Diagnostic::DuplicatePortOwner("a".into())));
}

#[test]
fn empty_input_errors_at_origin() {
    let e = parse_model("").unwrap_err();
    assert_eq!((e.span.start_line, e.span.start_col), (1, 1));
}

#[test]
fn empty_template_body_round_trips() {
    let m = parse_model("system e { template t { } }").unwrap();
    assert_eq!(m.templates[0].transitions.len(), 0);
    assert_eq!(parse_model(&print_model(&m)).unwrap(), m);
}

#[test]
fn validation_is_deterministic_and_idempotent() {
    let text = std::fs::read_to_string(common::model_path("train")).unwrap().replace("go,", "");
    let m = parse_model(&text).unwrap();
    let first = validate_model(&m);
    assert!(!first.is_empty());
    assert_eq!(validate_model(&m), first);
    assert_eq!(validate_model(&m.clone()), first);
}

fn span_inside(text: &str, line: usize, col: usize) -> bool {
    let lines: Vec<&str> = text.split('\n').collect();
    line >= 1 && line <= lines.len() && col >= 1 && col <= lines[line - 1].chars().count() + 1
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn parse_errors_point_into_the_input(cut in 0usize..4000, which in 0usize..11) {
        let names = common::corpus();
        let text = std::fs::read_to_string(common::model_path(&names[which % names.len()])).unwrap();
        let chars: Vec<char> = text.chars().collect();
        let prefix: String = chars[..cut.min(chars.len())].iter().collect();
        if let Err(e) = parse_model(&prefix) {
            prop_assert!(span_inside(&prefix, e.span.start_line, e.span.start_col), "{e} in {prefix:?}");
            prop_assert!(e.span.start_line <= e.span.end_line);
        }
    }
}

// Random models over the grammar.

const GLOBALS: [&str; 3] = ["g", "h", "lock"];
const LOCALS: [&str; 2] = ["s", "v"];

fn var(replicated: bool, primed: bool) -> BoxedStrategy<VarRef> {
    let mut opts: Vec<VarRef> = Vec::new();
    for g in GLOBALS {
        opts.push(if primed { VarRef::GlobalPrimed(g.into()) } else { VarRef::Global(g.into()) });
    }
    for l in LOCALS {
        opts.push(if primed { VarRef::LocalPrimed(l.into()) } else { VarRef::Local(l.into()) });
    }
    if replicated && !primed {
        opts.push(VarRef::SelfId);
    }
    proptest::sample::select(opts).boxed()
}

fn term(replicated: bool) -> BoxedStrategy<Term<VarRef>> {
    let leaf = prop_oneof![(0i64..50).prop_map(Term::Const), var(replicated, false).prop_map(Term::Var),];
    leaf.prop_recursive(3, 12, 2, move |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Term::add(a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Term::sub(a, b)),
            (2i64..6, var(replicated, false)).prop_map(|(k, v)| Term::scale(k, Term::Var(v))),
        ]
    })
    .boxed()
}

fn cmp_op() -> impl Strategy<Value = CmpOp> {
    proptest::sample::select(vec![CmpOp::Eq, CmpOp::Ne, CmpOp::Le, CmpOp::Lt, CmpOp::Ge, CmpOp::Gt])
}

fn formula(replicated: bool) -> BoxedStrategy<Constraint> {
    let atom = prop_oneof![
        (cmp_op(), term(replicated), term(replicated)).prop_map(|(op, a, b)| Formula::cmp(op, a, b)),
        (2i64..5, term(replicated)).prop_map(|(k, t)| Formula::Divides(k, t)),
        proptest::collection::vec(term(replicated), 2..4).prop_map(Formula::Distinct),
    ];
    atom.prop_recursive(3, 16, 3, |inner| {
        prop_oneof![
            proptest::collection::vec(inner.clone(), 2..4).prop_map(Formula::and),
            proptest::collection::vec(inner.clone(), 2..4).prop_map(Formula::or),
            inner.clone().prop_map(Formula::not),
            (inner.clone(), inner).prop_map(|(a, b)| Formula::implies(a, b)),
        ]
    })
    .boxed()
}

fn update(replicated: bool) -> BoxedStrategy<Constraint> {
    let assign = (var(replicated, true), term(replicated)).prop_map(|(v, t)| Formula::eq(Term::Var(v), t));
    proptest::collection::btree_map(0usize..5, assign, 0..3)
        .prop_map(|m| Formula::and(m.into_values()))
        .boxed()
}

fn kind() -> impl Strategy<Value = TransitionKind> {
    prop_oneof![
        Just(TransitionKind::Local),
        Just(TransitionKind::Send("c".into())),
        Just(TransitionKind::Receive("c".into())),
        Just(TransitionKind::Barrier("b".into())),
    ]
}

fn transition(replicated: bool) -> impl Strategy<Value = GuardedTransition> {
    (kind(), prop::option::of(formula(replicated)), update(replicated))
        .prop_map(|(k, g, u)| GuardedTransition::new(k, g.unwrap_or(Formula::True), u))
}

fn template(name: &'static str) -> impl Strategy<Value = ProcessTemplate> {
    any::<bool>().prop_flat_map(move |replicated| {
        (prop::option::of(formula(replicated)), proptest::collection::vec(transition(replicated), 0..4))
            .prop_map(move |(init, transitions)| {
                let mult = if replicated { Multiplicity::Replicated } else { Multiplicity::Singleton };
                let mut t = ProcessTemplate::new(name, mult);
                t.locals =
                    LOCALS.iter().map(|l| LocalDecl { name: l.to_string(), is_clock: false }).collect();
                t.init = init.unwrap_or(Formula::True);
                t.transitions = transitions;
                t
            })
    })
}

fn model() -> impl Strategy<Value = SystemModel> {
    (template("a"), template("b"), prop::option::of(formula(false))).prop_map(|(a, b, err)| {
        let mut m = SystemModel::new("random", TimeModel::Untimed);
        m.globals = GLOBALS.iter().map(|g| g.to_string()).collect();
        m.channels = vec!["c".into()];
        m.barriers = vec!["b".into()];
        m.templates = vec![a, b];
        if let Some(e) = err {
            m.error.roles.push(ErrorRole { name: "r".into(), template: "a".into(), constraint: e });
        }
        m
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn random_models_round_trip(m in model()) {
        let printed = print_model(&m);
        let back = parse_model(&printed);
        prop_assert!(back.is_ok(), "{:?}\n{}", back, printed);
        prop_assert_eq!(back.unwrap(), m, "{}", printed);
    }
}
