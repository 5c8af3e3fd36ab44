use std::path::PathBuf;

use num_integer::Integer;
use num_traits::{Signed, Zero};
use proptest::prelude::*;
use streett_core::automata::{parse_dsa, GuardedDsa, Signature};
use streett_core::backends::{simplex_solve, Verdict};
use streett_core::checker::{simulate, symbolic_check, Certificate, Provenance, SimOptions, Stepper};
use streett_core::expr::{int, parse_rational, rat, LinForm, Param, ParamKind, Poly, Rational, Rel, Valuation};
use streett_core::farkas::{farkas_general, Constraint, ConstraintSystem, PolyAtom};
use streett_core::model::{parse_model, StochModel};
use streett_core::simplex::{Cmp, Feasibility, Lp};
use streett_core::templates::{cert_template, inv_template, locations, post_expectation, PieceMode};
use streett_core::vcgen::{Family, Implication, VcTag};

fn load(name: &str) -> (StochModel, GuardedDsa) {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../benchmarks").join(name);
    let model = parse_model(&std::fs::read_to_string(dir.join("model.txt")).unwrap()).unwrap();
    let dsa = parse_dsa(&std::fs::read_to_string(dir.join("automaton.txt")).unwrap(), &Signature::of(&model)).unwrap();
    (model, dsa)
}

fn shipped(name: &str, model: &StochModel, dsa: &GuardedDsa) -> Certificate {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../benchmarks").join(name);
    Certificate::from_json(&std::fs::read_to_string(dir.join("certificate.json")).unwrap(), model, dsa).unwrap()
}

fn rows(n: usize, max_rows: usize) -> impl Strategy<Value = Vec<(Vec<i64>, i64)>> {
    prop::collection::vec((prop::collection::vec(-3i64..=3, n), -4i64..=4), 1..=max_rows)
}

fn concrete(coeffs: &[i64], constant: i64) -> LinForm {
    LinForm::from_concrete(&coeffs.iter().map(|c| int(*c)).collect::<Vec<_>>(), int(constant))
}

fn grid(n: usize) -> Vec<Vec<Rational>> {
    let steps: Vec<Rational> = (-8..=8).map(|k| rat(k, 2)).collect();
    (0..n).fold(vec![Vec::new()], |acc, _| {
        acc.into_iter().flat_map(|p| steps.iter().map(move |s| [p.clone(), vec![s.clone()]].concat())).collect()
    })
}

fn tag() -> VcTag {
    VcTag { family: Family::Init, pair: None, loc: None, branch: None, edge: None, detail: String::new() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// A satisfying dual valuation proves the implication at every grid
    /// point, and the alternative disjunct only holds for empty premises.
    #[test]
    fn farkas_dual_solutions_are_sound(
        n in 1usize..=2,
        premise in rows(2, 3),
        consequent in (prop::collection::vec(-3i64..=3, 2), -4i64..=4),
    ) {
        let premise: Vec<LinForm> = premise.iter().map(|(c, k)| concrete(&c[..n], *k)).collect();
        let consequent = concrete(&consequent.0[..n], consequent.1);
        let imp = Implication { nvars: n, premise: premise.clone(), consequent: consequent.clone(), tag: tag(), relaxed: Vec::new() };
        let dual = farkas_general(&imp, "z");
        let nonneg: Vec<PolyAtom> = dual.z.iter().map(|z| PolyAtom::new(-Poly::param(z.clone()), Rel::Le)).collect();
        let empty = Valuation::new();
        let inside = |p: &[Rational]| premise.iter().all(|f| !f.eval(&empty, p).unwrap().is_positive());
        for (case, alt) in [(&dual.main, false), (dual.alt.as_ref().unwrap(), true)] {
            let system = ConstraintSystem {
                vars: dual.z.clone(),
                constraints: nonneg.iter().chain(case).cloned().map(Constraint::Atom).collect(),
            };
            if let Verdict::Sat { values, .. } = simplex_solve(&system).unwrap() {
                prop_assert!(system.check(&values).is_ok());
                for p in grid(n) {
                    if inside(&p) {
                        prop_assert!(!alt, "alternative disjunct with a non-empty premise at {p:?}");
                        prop_assert!(!consequent.eval(&empty, &p).unwrap().is_positive(), "counterexample {p:?}");
                    }
                }
            }
        }
    }

    /// Feasible answers satisfy every row; infeasibility rays verify.
    #[test]
    fn simplex_answers_carry_checkable_evidence(n in 1usize..=3, lp_rows in rows(3, 6), strict in prop::collection::vec(0u8..4, 6)) {
        let mut lp = Lp::new();
        lp.add_vars(n, true);
        for ((c, k), s) in lp_rows.iter().zip(&strict) {
            let coeffs = c[..n].iter().enumerate().filter(|(_, v)| **v != 0).map(|(j, v)| (j, int(*v))).collect();
            let cmp = match s { 0 => Cmp::Eq, 1 => Cmp::Lt, _ => Cmp::Le };
            lp.add_row(coeffs, cmp, int(*k));
        }
        match lp.solve() {
            Feasibility::Feasible(p) => prop_assert!(lp.satisfied_by(&p)),
            Feasibility::Infeasible(Some(ray)) => prop_assert!(lp.verify_ray(&ray)),
            Feasibility::Infeasible(None) => prop_assert!(lp.rows().iter().any(|r| r.cmp.is_strict())),
        }
    }

    /// Fixing some parameters first does not change the value.
    #[test]
    fn partial_evaluation_commutes_with_evaluation(
        a in -9i64..=9, b in -9i64..=9, x in -9i64..=9, y in -9i64..=9, k in -5i64..=5,
    ) {
        let pa = Poly::param(Param::new("a", ParamKind::Control));
        let pb = Poly::param(Param::new("b", ParamKind::Certificate));
        let form = LinForm::from_parts([(0, &pa * &pb), (1, &pa + &Poly::constant(int(k)))], &pb - &Poly::constant(int(k)));
        let mut fa = Valuation::new();
        fa.insert("a", int(a));
        let mut fb = Valuation::new();
        fb.insert("b", int(b));
        let state = [int(x), int(y)];
        prop_assert_eq!(form.partial_eval(&fa).eval(&fb, &state).unwrap(), form.eval(&fa.merged(&fb), &state).unwrap());
    }

    /// Parsed rationals are canonical.
    #[test]
    fn parsed_rationals_are_canonical(n in -1000i64..=1000, d in 1i64..=1000) {
        let r = parse_rational(&format!("{n}/{d}")).unwrap();
        prop_assert!(r.denom().is_positive());
        prop_assert!(r.numer().gcd(r.denom()) == 1.into() || r.numer().is_zero());
        prop_assert_eq!(r, rat(n, d));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    /// Reports depend on the seed only, and trajectory `t` does not depend
    /// on how many trajectories run.
    #[test]
    fn simulation_is_deterministic(seed in 0u64..1000, k in 1usize..20) {
        let (model, dsa) = load("evenOrNegative");
        let cert = shipped("evenOrNegative", &model, &dsa);
        let opts = SimOptions { trajectories: 20, horizon: 60, seed, suspect_after: 50 };
        let a = simulate(&model, &dsa, Some(&cert), &opts).unwrap();
        let b = simulate(&model, &dsa, Some(&cert), &opts).unwrap();
        prop_assert_eq!(&a, &b);
        let prefix = simulate(&model, &dsa, Some(&cert), &SimOptions { trajectories: k, ..opts }).unwrap();
        prop_assert_eq!(&prefix.pairs[0].a_visits[..], &a.pairs[0].a_visits[..k]);
        prop_assert_eq!(&prefix.pairs[0].b_visits[..], &a.pairs[0].b_visits[..k]);
    }

    /// The simulator's `Post V - V` equals the symbolic post-expectation
    /// table minus the template, for random certificate parameters.
    #[test]
    fn simulated_residual_is_table_minus_value(
        which in 0usize..4,
        thetas in prop::collection::vec(-12i64..=12, 64),
        xs in prop::collection::vec(-3000i64..=3000, 8),
        den in 1i64..=3,
    ) {
        let (name, pieces) = [
            ("evenOrNegative", PieceMode::Single),
            ("RecurRW", PieceMode::Single),
            ("GuaranteeRW", PieceMode::Branches),
            ("FinMemoryControl", PieceMode::Single),
        ][which];
        let (model, dsa) = load(name);
        let template = cert_template(&model, &dsa, 0, pieces).unwrap();
        let inv = inv_template(&model, &dsa, 1);
        let mut val = Valuation::new();
        for (p, v) in template.params().iter().chain(&inv.params()).zip(thetas.iter().cycle()) {
            val.insert(p.name(), rat(*v, 2));
        }
        for (c, v) in model.controls.iter().zip(thetas.iter().rev()) {
            val.insert(c.param.name(), rat(*v, 4));
        }
        let table = post_expectation(&template, &model, &dsa).unwrap();
        let cert = Certificate::from_solution(
            &model, std::slice::from_ref(&template), &inv, &[None], &val, int(1), false, Provenance::default(),
        );
        let stepper = Stepper::new(&model, &dsa, Some(&cert)).unwrap();
        let locs = locations(&model, &dsa);
        for (i, x) in xs.iter().enumerate() {
            let loc = locs[i % locs.len()];
            let state = [rat(*x, den)];
            let residual = stepper.post_value(0, loc, &state).unwrap() - stepper.value(0, loc, &state).unwrap();
            let symbolic = table.eval(loc, &state, &val).unwrap() - template.eval(loc, &state, &val).unwrap();
            prop_assert_eq!(residual, symbolic);
        }
    }

    /// Certificates the symbolic checker accepts show no invariant or drift
    /// violation along simulated runs.
    #[test]
    fn accepted_certificates_survive_simulation(which in 0usize..5, seed in 0u64..10_000) {
        let name = ["evenOrNegative", "SafeRWalk1", "RecurRW", "GuaranteeRW", "FinMemoryControl"][which];
        let (model, dsa) = load(name);
        let cert = shipped(name, &model, &dsa);
        prop_assert!(symbolic_check(&cert, &model, &dsa).unwrap().is_valid());
        let report = simulate(&model, &dsa, Some(&cert), &SimOptions { trajectories: 8, horizon: 150, seed, suspect_after: 50 }).unwrap();
        prop_assert_eq!(report.invariant_violations, 0);
        prop_assert_eq!(report.drift_violations(), 0);
    }
}
