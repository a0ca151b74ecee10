mod common;

use std::collections::{BTreeSet, HashSet};

use tachorn::dsl::parse_model;
use tachorn::encoder::{
    bip_to_barrier, encode, encode_finite, encode_heterogeneous, encode_homogeneous, symmetry_generators,
    BodyLiterals, EncodingConfig, SymmetryGenerators,
};
use tachorn::horn::{check_wellformed, to_smtlib, ClauseFamily, Head, HornSystem};
use tachorn::model::{SystemModel, TransitionKind};
use tachorn::schema::InvariantSchema;

fn families(hs: &HornSystem) -> BTreeSet<ClauseFamily> {
    hs.clauses.iter().map(|c| c.family).collect()
}

fn schema(s: &str) -> InvariantSchema {
    s.parse().unwrap()
}

#[test]
fn homogeneous_channel_families() {
    let m = parse_model(common::TOKEN_RING).unwrap();
    let hs = encode_homogeneous(&m, 2, EncodingConfig::default()).unwrap();
    use ClauseFamily::*;
    let want: BTreeSet<_> =
        [Symmetry, Init, StepTracked, StepEnv, Error, Time, CommBoth, CommSender, CommReceiver, CommNeither]
            .into_iter()
            .collect();
    assert_eq!(families(&hs), want);
    let hs1 = encode_homogeneous(&m, 1, EncodingConfig::default()).unwrap();
    assert_eq!(hs1.clauses_of(CommBoth).count(), 0);
    assert_eq!(hs1.clauses_of(Symmetry).count(), 0);
    assert!(hs1.clauses_of(CommSender).count() > 0);
}

#[test]
fn environment_step_conjoins_all_pairs() {
    let m = parse_model(common::TOKEN_RING).unwrap();
    let hs = encode_homogeneous(&m, 2, EncodingConfig::default()).unwrap();
    for c in hs.clauses_of(ClauseFamily::StepEnv) {
        assert_eq!(c.body.len(), 3, "{}", c.note);
    }
    for c in hs.clauses_of(ClauseFamily::CommNeither) {
        assert_eq!(c.body.len(), 6, "{}", c.note);
        let ids: BTreeSet<String> = c
            .body
            .iter()
            .flat_map(|a| a.args.iter().map(|t| t.to_string()))
            .filter(|v| v.ends_with("!id"))
            .collect();
        assert_eq!(ids.len(), 4, "{}", c.note);
    }
}

fn closure(k: usize, gens: &[Vec<usize>]) -> HashSet<Vec<usize>> {
    let id: Vec<usize> = (0..k).collect();
    let mut seen: HashSet<Vec<usize>> = HashSet::from([id.clone()]);
    let mut frontier = vec![id];
    while let Some(p) = frontier.pop() {
        for g in gens {
            let q: Vec<usize> = (0..k).map(|i| p[g[i]]).collect();
            if seen.insert(q.clone()) {
                frontier.push(q);
            }
        }
    }
    seen
}

#[test]
fn transpositions_generate_the_symmetric_group() {
    for k in 1..=4usize {
        let factorial: usize = (1..=k).product();
        for g in [SymmetryGenerators::Transpositions, SymmetryGenerators::AllPermutations] {
            assert_eq!(closure(k, &symmetry_generators(k, g)).len(), factorial, "k={k} {g:?}");
        }
        assert_eq!(symmetry_generators(k, SymmetryGenerators::Transpositions).len(), k.saturating_sub(1));
    }
}

#[test]
fn relation_arity() {
    let m = common::load("train");
    let hs = encode(&m, &schema("(1,3)"), EncodingConfig::default()).unwrap();
    let controller = m.templates[0].locals.len();
    let train = m.templates[1].locals.len();
    assert_eq!(hs.relations.len(), 1);
    assert_eq!(hs.relations[0].name, "R_1_3");
    assert_eq!(hs.relations[0].arity, m.globals.len() + controller + 3 * (1 + train));
}

#[test]
fn corpus_encodings_are_wellformed_and_deterministic() {
    for name in common::corpus() {
        let m = tachorn::schema::prepare_model(&common::load(&name)).unwrap();
        let s = tachorn::schema::weakest_schema(&m);
        let a = encode(&m, &s, EncodingConfig::default()).unwrap();
        let b = encode(&m, &s, EncodingConfig::default()).unwrap();
        assert_eq!(check_wellformed(&a), vec![], "{name}");
        assert_eq!(to_smtlib(&a), to_smtlib(&b), "{name}");
        assert!(a.clauses.iter().any(|c| c.head == Head::False), "{name}");
    }
}

#[test]
fn single_process_clause_count() {
    let m = parse_model(
        "system one { globals g; template p { locals s; init s = 0 && g = 0; \
         trans local when s = 0 do s := 1; trans local when s = 1 do s := 0, g := g + 1; } \
         error { e: p when g = 3; } }",
    )
    .unwrap();
    let hs = encode_finite(&m, &schema("(1)"), EncodingConfig::default()).unwrap();
    assert_eq!(hs.clauses.len(), 1 + 2 + 1);
}

#[test]
fn finite_and_homogeneous_are_special_cases() {
    let mutex = common::load("mutex");
    let s = schema("{(1,0),(0,1)}");
    assert_eq!(
        encode_heterogeneous(&mutex, &s, EncodingConfig::default()).unwrap(),
        encode_finite(&mutex, &s, EncodingConfig::default()).unwrap()
    );
    let ring = parse_model(common::TOKEN_RING).unwrap();
    for k in 1..=3 {
        assert_eq!(
            encode_heterogeneous(&ring, &InvariantSchema::single(vec![k]), EncodingConfig::default())
                .unwrap(),
            encode_homogeneous(&ring, k, EncodingConfig::default()).unwrap()
        );
    }
}

#[test]
fn train_approach_pairs_controller_with_tracked_and_untracked_trains() {
    let m = common::load("train");
    let hs = encode(&m, &schema("(1,3)"), EncodingConfig::default()).unwrap();
    let appr = |f: ClauseFamily| hs.clauses_of(f).filter(|c| c.note.contains("appr")).count();
    assert!(appr(ClauseFamily::CommBoth) > 0);
    assert!(appr(ClauseFamily::CommReceiver) > 0);
}

#[test]
fn elapse_respects_controller_invariant() {
    let m = common::load("train");
    let hs = encode(&m, &schema("(1,3)"), EncodingConfig::default()).unwrap();
    let time: Vec<_> = hs.clauses_of(ClauseFamily::Time).collect();
    assert_eq!(time.len(), 1);
    let text = time[0].constraint.to_string();
    assert!(text.contains("controller.loc = 4 -> C!1 - controller.y <= 5"), "{text}");
    for i in 1..=3 {
        assert!(text.contains(&format!("train.t{i}.loc = 3 -> C!1 - train.t{i}.x <= 20")), "{text}");
    }
}

#[test]
fn trivial_time_invariant_elapse() {
    let m = parse_model(
        "system t { time discrete; template p { locals s; init s = 0 && C = 0; trans local do s := 1; } \
         error { e: p when s = 2; } }",
    )
    .unwrap();
    let hs = encode(&m, &schema("(1)"), EncodingConfig::default()).unwrap();
    let c = hs.clauses_of(ClauseFamily::Time).next().unwrap();
    assert_eq!(c.constraint.to_string(), "C!1 >= C");
}

#[test]
fn barrier_choices_form_a_cross_product() {
    let m = parse_model(
        "system b { barrier tick; template p replicated { locals s; init s = 0; \
         trans sync tick when s = 0 do s := 1; trans sync tick when s = 1 do s := 0; \
         trans sync tick when s = 2; } \
         template q { locals s; init s = 0; trans local do s := 1; } error { e: q when s = 5; } }",
    )
    .unwrap();
    let per_type: Vec<usize> = m
        .templates
        .iter()
        .map(|t| {
            t.transitions.iter().filter(|tr| matches!(tr.kind, TransitionKind::Barrier(_))).count().max(1)
        })
        .collect();
    for (s, v) in [("(2,1)", vec![2, 1]), ("(1,1)", vec![1, 1]), ("(3,0)", vec![3, 0])] {
        let hs = encode(&m, &schema(s), EncodingConfig::default()).unwrap();
        let want: usize = v.iter().zip(&per_type).map(|(&n, &c)| c.pow(n as u32)).product();
        assert_eq!(hs.clauses_of(ClauseFamily::Barrier).count(), want, "{s}");
    }
}

#[test]
fn neutral_barrier_keeps_state() {
    let m = parse_model(
        "system n { barrier b; template p replicated { locals s; init s = 0; trans sync b; } \
         error { e: p when s = 1; } }",
    )
    .unwrap();
    let hs = encode(&m, &schema("(2)"), EncodingConfig::default()).unwrap();
    let c = hs.clauses_of(ClauseFamily::Barrier).next().unwrap();
    let Head::Relation(head) = &c.head else { panic!() };
    assert_eq!(head.args, c.body[0].args);
}

#[test]
fn temperature_reduction() {
    let m = common::load("temperature");
    let r = bip_to_barrier(&m).unwrap();
    let bip = r.bip.as_ref().unwrap();
    assert_eq!(bip.selector, "iact");
    assert_eq!(bip.interactions, m.interactions);
    assert_eq!(r.barriers, vec!["bip".to_string()]);
    assert!(r.ports.is_empty() && r.interactions.is_empty());
    for t in &r.templates {
        assert!(t.transitions.iter().all(|tr| !matches!(tr.kind, TransitionKind::Port(_))));
    }
    let hs = encode(&r, &schema("(1,1,1)"), EncodingConfig::default()).unwrap();
    assert!(hs.clauses_of(ClauseFamily::Barrier).count() > 0);
}

#[test]
fn reduction_without_interactions_is_identity() {
    let m = common::load("mutex");
    assert_eq!(bip_to_barrier(&m).unwrap(), m);
}

#[test]
fn portless_template_gets_unconditional_stutter() {
    let m: SystemModel = parse_model(
        "system s { port a of p; interaction { a }; \
         template p { locals l; init l = 0; trans port a when l = 0 do l := 1; } \
         template w { locals l; init l = 0; } error { e: p when l = 2; } }",
    )
    .unwrap();
    let r = bip_to_barrier(&m).unwrap();
    let w = &r.templates[1];
    let stutter: Vec<_> =
        w.transitions.iter().filter(|t| matches!(t.kind, TransitionKind::Barrier(_))).collect();
    assert_eq!(stutter.len(), 1);
    assert_eq!(stutter[0].guard.to_string(), "true");
}

#[test]
fn all_schema_bodies_are_supersets() {
    let m = common::load("train");
    let s = schema("{(1,1),(0,2)}");
    let ctx = encode(&m, &s, EncodingConfig::default()).unwrap();
    let all = encode(&m, &s, EncodingConfig { body: BodyLiterals::AllSchema, ..Default::default() }).unwrap();
    assert_eq!(ctx.clauses.len(), all.clauses.len());
    for (a, b) in ctx.clauses.iter().zip(&all.clauses) {
        assert!(b.body.len() >= a.body.len(), "{}", a.note);
    }
}
