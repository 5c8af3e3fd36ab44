use std::time::Duration;

use streett_core::backends::{run_solver, simplex_solve, SolverConfig, Verdict};
use streett_core::expr::{int, Param, ParamKind, Poly, Rel};
use streett_core::farkas::{Constraint, ConstraintSystem, PolyAtom};

fn solver() -> Option<SolverConfig> {
    let cfg = SolverConfig::resolve(None, Duration::from_secs(30));
    if cfg.available() {
        Some(cfg)
    } else {
        eprintln!("skipping: no SMT solver available");
        None
    }
}

fn alpha() -> Param {
    Param::new("alpha", ParamKind::Control)
}

fn atom(poly: Poly, rel: Rel) -> Constraint {
    Constraint::Atom(PolyAtom::new(poly, rel))
}

#[test]
fn pinned_value_is_sat() {
    let Some(cfg) = solver() else { return };
    let a = Poly::param(alpha());
    let sys = ConstraintSystem { vars: vec![alpha()], constraints: vec![atom(-a.clone(), Rel::Le), atom(a, Rel::Le)] };
    match run_solver(&sys, &cfg).unwrap() {
        Verdict::Sat { values, approximate } => {
            assert!(!approximate);
            assert_eq!(values.get("alpha"), Some(&int(0)));
            sys.check(&values).unwrap();
        }
        other => panic!("{other:?}"),
    }
    assert!(simplex_solve(&sys).unwrap().is_sat());
}

#[test]
fn negative_square_is_unsat() {
    let Some(cfg) = solver() else { return };
    let a = Poly::param(alpha());
    let sys = ConstraintSystem { vars: vec![alpha()], constraints: vec![atom(&(&a * &a) + &Poly::one(), Rel::Le)] };
    assert!(run_solver(&sys, &cfg).unwrap().is_unsat());
}

#[test]
fn exact_fractions_and_negatives() {
    let Some(cfg) = solver() else { return };
    let a = Poly::param(alpha());
    // 32 alpha + 1 = 0
    let sys =
        ConstraintSystem { vars: vec![alpha()], constraints: vec![atom(&a.scale(&int(32)) + &Poly::one(), Rel::Eq)] };
    match run_solver(&sys, &cfg).unwrap() {
        Verdict::Sat { values, approximate } => {
            assert!(!approximate);
            assert_eq!(values.get("alpha"), Some(&streett_core::expr::rat(-1, 32)));
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn irrational_values_are_flagged() {
    let Some(cfg) = solver() else { return };
    let a = Poly::param(alpha());
    let sys = ConstraintSystem {
        vars: vec![alpha()],
        constraints: vec![atom(&(&a * &a) - &Poly::constant(int(2)), Rel::Eq), atom(-a, Rel::Le)],
    };
    match run_solver(&sys, &cfg).unwrap() {
        Verdict::Sat { values, approximate } => {
            assert!(approximate);
            let v = values.get("alpha").unwrap();
            assert!(v > &streett_core::expr::rat(141, 100) && v < &streett_core::expr::rat(142, 100));
        }
        other => panic!("{other:?}"),
    }
}
