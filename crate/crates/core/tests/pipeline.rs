use std::path::PathBuf;
use std::time::Duration;

use streett_core::automata::{parse_dsa, GuardedDsa, Signature};
use streett_core::backends::{BackendKind, SolverConfig};
use streett_core::checker::{symbolic_check, Certificate, CheckOutcome};
use streett_core::expr::rat;
use streett_core::model::{parse_model, StochModel};
use streett_core::pipeline::{run_job, JobOutcome, JobSpec, SynthMode};

fn bench_dir(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../benchmarks").join(name)
}

fn load(name: &str) -> (StochModel, GuardedDsa) {
    let dir = bench_dir(name);
    let model = parse_model(&std::fs::read_to_string(dir.join("model.txt")).unwrap()).unwrap();
    let dsa = parse_dsa(&std::fs::read_to_string(dir.join("automaton.txt")).unwrap(), &Signature::of(&model)).unwrap();
    (model, dsa)
}

#[test]
fn example2_reference_certificate() {
    let (model, dsa) = load("example2");
    let text = std::fs::read_to_string(bench_dir("example2").join("certificate.json")).unwrap();
    let cert = Certificate::from_json(&text, &model, &dsa).unwrap();
    assert!(symbolic_check(&cert, &model, &dsa).unwrap().is_valid());

    let mut strict = cert.clone();
    strict.epsilon = rat(2, 1);
    match symbolic_check(&strict, &model, &dsa).unwrap().outcome {
        CheckOutcome::Invalid(v) => {
            assert_eq!(v.condition, "decrease");
            assert!(v.location.starts_with("q0"), "{v}");
        }
        CheckOutcome::Valid => panic!("epsilon = 2 must fail"),
    }
    let round = Certificate::from_json(&cert.to_json(&model, &dsa), &model, &dsa).unwrap();
    assert_eq!(round, cert);
}

#[test]
fn example2_verification_by_lp() {
    let (model, dsa) = load("example2");
    let solver = SolverConfig::resolve(None, Duration::from_secs(60));
    let mut spec = JobSpec::new(model, dsa, SynthMode::V, solver);
    spec.invariant = Some(std::fs::read_to_string(bench_dir("example2").join("invariant.txt")).unwrap());
    spec.fixed_controls.insert("kappa", rat(1, 2));
    spec.backend = BackendKind::Lp;
    let result = run_job(&spec).unwrap();
    match result.outcome {
        JobOutcome::Certified { check, .. } => assert!(check.is_valid()),
        other => panic!("{other:?}"),
    }
}

#[test]
fn example2_general_control() {
    let (model, dsa) = load("example2");
    let solver = SolverConfig::resolve(None, Duration::from_secs(120));
    if !solver.available() {
        eprintln!("skipping: no SMT solver");
        return;
    }
    let spec = JobSpec::new(model, dsa, SynthMode::VIC, solver);
    let result = run_job(&spec).unwrap();
    eprintln!("{:?}", result.stats);
    match result.outcome {
        JobOutcome::Certified { check, .. } => assert!(check.is_valid()),
        other => panic!("{other:?}"),
    }
}
