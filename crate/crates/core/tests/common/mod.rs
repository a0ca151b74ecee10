#![allow(dead_code)]

use std::path::PathBuf;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use tachorn::dsl::parse_model_named;
use tachorn::model::SystemModel;
use tachorn::oracle::{step_footprint, StepLabel, Trace};
use tachorn::solver::{solver_available, SolverConfig};

pub fn models_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../models")
}

pub fn model_path(name: &str) -> PathBuf {
    models_dir().join(format!("{name}.tan"))
}

pub fn load(name: &str) -> SystemModel {
    let path = model_path(name);
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    parse_model_named(&text, Some(&path.display().to_string())).unwrap_or_else(|e| panic!("{e}"))
}

/// Names of all corpus models, sorted.
pub fn corpus() -> Vec<String> {
    let mut names: Vec<String> = std::fs::read_dir(models_dir())
        .unwrap()
        .filter_map(|e| {
            let p = e.ok()?.path();
            (p.extension()? == "tan").then(|| p.file_stem().unwrap().to_string_lossy().into_owned())
        })
        .collect();
    names.sort();
    names
}

/// Whether the default solver can be started; tests that need it print a
/// note and return early otherwise.
pub fn have_solver() -> bool {
    let ok = solver_available(&SolverConfig::default());
    if !ok {
        eprintln!("no CHC solver available, skipping");
    }
    ok
}

/// Homogeneous timed model with one channel.
pub const TOKEN_RING: &str = r#"
system ring {
  time discrete;
  globals owner;
  channel pass;
  template node replicated {
    locals s;
    clock x;
    init s = 0 && owner = 0 && C = 0 && val(x) = 0;
    tinv s = 1 -> val(x) <= 3;
    trans local when s = 0 && owner = 0 do s := 1, owner := self + 1, reset x;
    trans send pass when s = 1 do s := 0;
    trans recv pass when s = 0 do s := 2;
    trans local when s = 2 do s := 0, owner := 0;
  }
  error {
    a: node when s = 1;
    b: node when s = 1;
  }
}
"#;

/// Corrupts one step so that no rule can justify it: a variable the step
/// cannot write is changed, an elapse label disagrees with the clock, or a
/// label names a missing instance.
pub fn corrupt(m: &SystemModel, t: &Trace, rng: &mut ChaCha8Rng) -> Trace {
    let mut bad = t.clone();
    let i = rng.gen_range(0..t.steps.len());
    let (gs, ls) = step_footprint(m, t, i);
    let step = &mut bad.steps[i];
    let post = &mut step.state;
    let mut frozen: Vec<(Option<usize>, usize)> = Vec::new();
    for g in 0..post.globals.len() {
        if !gs.contains(&g) {
            frozen.push((None, g));
        }
    }
    for (k, vals) in post.locals.iter().enumerate() {
        for l in 0..vals.len() {
            if !ls.contains(&(k, l)) {
                frozen.push((Some(k), l));
            }
        }
    }
    let delta = if rng.gen_bool(0.5) { rng.gen_range(1..5) } else { -rng.gen_range(1..5) };
    match (&mut step.label, rng.gen_range(0..4)) {
        (StepLabel::TimeElapse { delta: d }, 0) => *d += delta,
        (StepLabel::Local { instance, .. } | StepLabel::IactAssign { instance, .. }, 1) => {
            *instance = t.instances.len() + rng.gen_range(0..3);
        }
        _ if !frozen.is_empty() => match frozen[rng.gen_range(0..frozen.len())] {
            (None, g) => post.globals[g] += delta,
            (Some(k), l) => post.locals[k][l] += delta,
        },
        (label, _) => panic!("step {i} ({label:?}) writes every variable"),
    }
    bad
}
