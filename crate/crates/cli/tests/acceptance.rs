//! Acceptance criteria. Runs each one at its stated size and tolerance and
//! prints one `PASS`/`FAIL` line per criterion. Criteria that need the
//! external solver print `UNVERIFIED` when it cannot be started.

use std::fmt;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use num_traits::{Signed, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use streett_cli::bench::{run_bench, run_one};
use streett_cli::load_inputs;
use streett_cli::manifest::{load_manifest, BenchEntry};
use streett_core::automata::GuardedDsa;
use streett_core::backends::{run_solver, simplex_solve, verify_unsat_ray, BackendKind, SolverConfig, Verdict};
use streett_core::checker::{simulate, symbolic_check, Certificate, CheckOutcome, SimOptions, Stepper, Violation};
use streett_core::expr::{fmt_rational, int, rat, LinForm, Monomial, Param, ParamKind, Poly, Rational, Rel, Valuation};
use streett_core::farkas::{farkas_general, Constraint, ConstraintSystem, PolyAtom};
use streett_core::model::StochModel;
use streett_core::pipeline::{run_job, JobOutcome, JobSpec, SynthMode};
use streett_core::templates::{
    cert_template, loc_name, locations, manual_post_lookup, post_expectation, CertTemplate, Loc, PieceMode, PostTable,
};
use streett_core::vcgen::{Family, Implication, VcTag};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Pass,
    Fail,
    Unverified,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Unverified => "UNVERIFIED",
        })
    }
}

type Line = (Status, String);

type Criterion = (&'static str, fn() -> Line);

fn pass(detail: impl Into<String>) -> Line {
    (Status::Pass, detail.into())
}

fn fail(detail: impl Into<String>) -> Line {
    (Status::Fail, detail.into())
}

fn judge(ok: bool, detail: String) -> Line {
    if ok {
        pass(detail)
    } else {
        fail(detail)
    }
}

fn corpus() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../benchmarks")
}

fn solver(timeout: u64) -> SolverConfig {
    SolverConfig::resolve(None, Duration::from_secs(timeout))
}

fn load(name: &str) -> (StochModel, GuardedDsa) {
    let dir = corpus().join(name);
    load_inputs(&dir.join("model.txt"), &dir.join("automaton.txt")).unwrap()
}

fn shipped(name: &str, model: &StochModel, dsa: &GuardedDsa) -> Certificate {
    let text = std::fs::read_to_string(corpus().join(name).join("certificate.json")).unwrap();
    Certificate::from_json(&text, model, dsa).unwrap()
}

fn entries() -> Vec<BenchEntry> {
    load_manifest(&corpus()).unwrap().benchmarks
}

fn loc_by_name(model: &StochModel, dsa: &GuardedDsa, name: &str) -> Option<Loc> {
    locations(model, dsa).into_iter().find(|l| loc_name(model, dsa, *l) == name)
}

fn mode_index(model: &StochModel, name: &str) -> usize {
    model.modes.iter().position(|m| m == name).unwrap()
}

// 1. Example 2 with the control fixed and the invariant given.

fn example2_golden() -> Line {
    let (model, dsa) = load("example2");
    let start = Instant::now();
    let mut spec = JobSpec::new(model.clone(), dsa.clone(), SynthMode::V, solver(60));
    spec.invariant = Some(std::fs::read_to_string(corpus().join("example2/invariant.txt")).unwrap());
    spec.fixed_controls.insert("kappa", rat(1, 2));
    spec.backend = BackendKind::Lp;
    let synthesized = match run_job(&spec) {
        Ok(r) => matches!(r.outcome, JobOutcome::Certified { ref check, .. } if check.is_valid()),
        Err(e) => return fail(format!("job failed: {e}")),
    };
    let elapsed = start.elapsed();

    let reference = shipped("example2", &model, &dsa);
    let at = |q: &str, x: i64| reference.value(0, (dsa.state_index(q).unwrap(), 0), &[int(x)]);
    let shape = reference.epsilon == rat(1, 2)
        && (-3..=3)
            .all(|x| at("q0", x) == Some(int(x + 1)) && at("q1", x) == Some(int(0)) && at("q2", x) == Some(int(0)));
    let reference_valid = symbolic_check(&reference, &model, &dsa).unwrap().is_valid();
    judge(
        synthesized && shape && reference_valid && elapsed < Duration::from_secs(5),
        format!(
            "LP certificate {}, reference certificate {}{}, {:.2} s",
            if synthesized { "valid" } else { "missing" },
            if reference_valid { "valid" } else { "invalid" },
            if shape { "" } else { " (unexpected shape)" },
            elapsed.as_secs_f64()
        ),
    )
}

// 2. Benchmark corpus.

fn corpus_certified() -> Line {
    let solver = solver(300);
    if !solver.available() {
        return (Status::Unverified, "no SMT solver".into());
    }
    let rows = run_bench(&entries(), &corpus(), &solver, 1);
    let bad: Vec<String> = rows
        .iter()
        .filter(|r| !r.passed() || r.wall_ms >= 300_000)
        .map(|r| format!("{} {} {} ({} ms)", r.name, r.verdict, r.check, r.wall_ms))
        .collect();
    let slowest =
        rows.iter().max_by_key(|r| r.wall_ms).map(|r| format!("{} {:.2} s", r.name, r.wall_ms as f64 / 1000.0));
    judge(
        bad.is_empty(),
        format!(
            "{}/{} certified and checked; slowest {}{}",
            rows.len() - bad.len(),
            rows.len(),
            slowest.unwrap_or_default(),
            if bad.is_empty() { String::new() } else { format!("; failing: {}", bad.join(", ")) }
        ),
    )
}

// 3. Shielded Temperature4 through the degree-lowering pipeline.

fn temperature4_shielded() -> Line {
    let solver = solver(30);
    if !solver.available() {
        return (Status::Unverified, "no SMT solver".into());
    }
    let entry = entries().into_iter().find(|e| e.name == "Temperature4").unwrap();
    if !entry.qcp || entry.invariant.is_none() {
        return fail("manifest entry must use the given invariant and lowering");
    }
    let row = run_one(&entry, &corpus(), &solver);
    let Some(text) = &row.certificate else {
        return fail(format!("{} {}", row.verdict, row.detail.unwrap_or_default()));
    };
    let (model, dsa) = load("Temperature4");
    let cert = Certificate::from_json(text, &model, &dsa).unwrap();
    let alpha = cert.controls.get("alpha").unwrap().clone();
    let beta = cert.controls.get("beta").unwrap().clone();
    let in_box = [&alpha, &beta].iter().all(|v| **v >= int(-5) && **v <= int(5));
    let shield = int(305) * &alpha + &beta < rat(524, 100);
    let valid = symbolic_check(&cert, &model, &dsa).unwrap().is_valid();
    judge(
        row.passed() && valid && in_box && shield && row.wall_ms < 30_000,
        format!(
            "alpha = {}, beta = {}, {:.2} s",
            fmt_rational(&alpha),
            fmt_rational(&beta),
            row.wall_ms as f64 / 1000.0
        ),
    )
}

// 4. Farkas transform against a primal validity oracle.

fn y(j: usize) -> Param {
    Param::new(format!("y{j}"), ParamKind::Certificate)
}

/// `row . y + constant` as a polynomial in the `y` parameters.
fn row_poly(coeffs: &[Rational], constant: &Rational) -> Poly {
    coeffs.iter().enumerate().fold(Poly::constant(constant.clone()), |acc, (j, c)| {
        &acc + &Poly::term(Monomial::from_factors([(y(j), 1)]), c.clone())
    })
}

fn eval_row(coeffs: &[Rational], constant: &Rational, point: &[Rational]) -> Rational {
    coeffs.iter().zip(point).fold(constant.clone(), |acc, (c, v)| acc + c * v)
}

/// Entries `k/2` with `|k| <= 6`.
fn entry(rng: &mut ChaCha8Rng) -> Rational {
    rat(rng.gen_range(-6..=6), 2)
}

struct RandomImplication {
    n: usize,
    premise: Vec<(Vec<Rational>, Rational)>,
    consequent: (Vec<Rational>, Rational),
}

fn in_range(r: &Rational) -> bool {
    r.abs() <= int(3)
}

fn random_implication(rng: &mut ChaCha8Rng) -> RandomImplication {
    loop {
        let n = rng.gen_range(1..=3);
        let l = rng.gen_range(0..=4);
        let mut premise: Vec<(Vec<Rational>, Rational)> =
            (0..l).map(|_| ((0..n).map(|_| entry(rng)).collect(), entry(rng))).collect();
        if l >= 2 && rng.gen_bool(0.25) {
            // The last row contradicts the first.
            let (c, k) = premise[0].clone();
            premise[l - 1] = (c.iter().map(|v| -v).collect(), -k + rat(rng.gen_range(1..=4), 2));
        }
        let consequent = if l > 0 && rng.gen_bool(0.5) {
            // A non-negative combination minus a slack is implied whenever
            // the premise is non-empty.
            let mut coeffs = vec![Rational::zero(); n];
            let mut constant = rat(-rng.gen_range(0..=2), 2);
            for (c, k) in &premise {
                let lambda = rat(rng.gen_range(0..=2), 2);
                for (acc, v) in coeffs.iter_mut().zip(c) {
                    *acc += &lambda * v;
                }
                constant += &lambda * k;
            }
            (coeffs, constant)
        } else {
            ((0..n).map(|_| entry(rng)).collect(), entry(rng))
        };
        let all_in_range =
            premise.iter().chain(std::iter::once(&consequent)).all(|(c, k)| c.iter().all(in_range) && in_range(k));
        if all_in_range {
            return RandomImplication { n, premise, consequent };
        }
    }
}

fn tag() -> VcTag {
    VcTag { family: Family::Init, pair: None, loc: None, branch: None, edge: None, detail: String::new() }
}

/// Validity through the dual: the general Farkas constraint is satisfiable.
/// Each disjunct is decided by the exact simplex and witnesses re-checked.
fn farkas_says_valid(imp: &RandomImplication) -> Result<bool, String> {
    let implication = Implication {
        nvars: imp.n,
        premise: imp.premise.iter().map(|(c, k)| LinForm::from_concrete(c, k.clone())).collect(),
        consequent: LinForm::from_concrete(&imp.consequent.0, imp.consequent.1.clone()),
        tag: tag(),
        relaxed: Vec::new(),
    };
    let dual = farkas_general(&implication, "z");
    let nonneg: Vec<PolyAtom> = dual.z.iter().map(|z| PolyAtom::new(-Poly::param(z.clone()), Rel::Le)).collect();
    let full = Constraint::Or(vec![dual.main.clone(), dual.alt.clone().unwrap()]);
    for case in [&dual.main, dual.alt.as_ref().unwrap()] {
        let system = ConstraintSystem {
            vars: dual.z.clone(),
            constraints: nonneg.iter().chain(case).cloned().map(Constraint::Atom).collect(),
        };
        match simplex_solve(&system).map_err(|e| e.to_string())? {
            Verdict::Sat { values, .. } => {
                let ok =
                    full.holds(&values).map_err(|e| e.to_string())? && nonneg.iter().all(|a| a.holds(&values).unwrap());
                return if ok { Ok(true) } else { Err("dual witness fails exact re-check".into()) };
            }
            Verdict::Unsat { .. } => {}
            Verdict::Unknown(r) => return Err(r),
        }
    }
    Ok(false)
}

/// Solves `A y = b` exactly; `None` unless the solution is unique.
fn solve_square(mut rows: Vec<(Vec<Rational>, Rational)>) -> Option<Vec<Rational>> {
    let n = rows.len();
    for col in 0..n {
        let pivot = (col..n).find(|&r| !rows[r].0[col].is_zero())?;
        rows.swap(col, pivot);
        let (pc, pb) = rows[col].clone();
        for (r, row) in rows.iter_mut().enumerate() {
            if r != col && !row.0[col].is_zero() {
                let f = &row.0[col] / &pc[col];
                for (a, p) in row.0.iter_mut().zip(&pc) {
                    *a -= &f * p;
                }
                row.1 -= &f * &pb;
            }
        }
    }
    Some(rows.iter().enumerate().map(|(i, (c, b))| b / &c[i]).collect())
}

fn subsets(len: usize, size: usize) -> Vec<Vec<usize>> {
    if size == 0 {
        return vec![Vec::new()];
    }
    (0..len)
        .flat_map(|first| {
            subsets(len - first - 1, size - 1)
                .into_iter()
                .map(move |rest| std::iter::once(first).chain(rest.into_iter().map(|r| r + first + 1)).collect())
        })
        .collect()
}

/// A point satisfying the premise but not the consequent, searched among
/// the premise vertices and a dense grid on `[-4, 4]^n` with step 1/4.
fn enumerated_counterexample(imp: &RandomImplication) -> Option<Vec<Rational>> {
    let inside = |p: &[Rational]| imp.premise.iter().all(|(c, k)| !eval_row(c, k, p).is_positive());
    let violates = |p: &[Rational]| inside(p) && eval_row(&imp.consequent.0, &imp.consequent.1, p).is_positive();
    if imp.premise.len() >= imp.n {
        for s in subsets(imp.premise.len(), imp.n) {
            let rows = s.iter().map(|&i| (imp.premise[i].0.clone(), -imp.premise[i].1.clone())).collect();
            if let Some(v) = solve_square(rows) {
                if violates(&v) {
                    return Some(v);
                }
            }
        }
    }
    let steps: Vec<Rational> = (-16..=16).map(|k| rat(k, 4)).collect();
    let mut idx = vec![0usize; imp.n];
    loop {
        let p: Vec<Rational> = idx.iter().map(|&i| steps[i].clone()).collect();
        if violates(&p) {
            return Some(p);
        }
        let mut d = 0;
        loop {
            if d == imp.n {
                return None;
            }
            idx[d] += 1;
            if idx[d] < steps.len() {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
    }
}

/// Validity by asking for a primal counterexample `premise && c > 0`.
fn primal_says_valid(imp: &RandomImplication, solver: Option<&SolverConfig>) -> Result<bool, String> {
    let mut constraints: Vec<Constraint> =
        imp.premise.iter().map(|(c, k)| Constraint::Atom(PolyAtom::new(row_poly(c, k), Rel::Le))).collect();
    let (c, k) = &imp.consequent;
    constraints.push(Constraint::Atom(PolyAtom::new(-row_poly(c, k), Rel::Lt)));
    let system = ConstraintSystem { vars: (0..imp.n).map(y).collect(), constraints };
    let verdict = match solver {
        Some(s) => run_solver(&system, s),
        None => simplex_solve(&system),
    }
    .map_err(|e| e.to_string())?;
    match verdict {
        Verdict::Sat { values, .. } => {
            system.check(&values)?;
            Ok(false)
        }
        Verdict::Unsat { .. } => Ok(true),
        Verdict::Unknown(r) => Err(r),
    }
}

fn farkas_differential() -> Line {
    let config = solver(30);
    let solver = config.available().then_some(&config);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut agree, mut valid, mut problems) = (0, 0, Vec::new());
    for case in 0..200 {
        let imp = random_implication(&mut rng);
        let witness = enumerated_counterexample(&imp);
        let oracle = match primal_says_valid(&imp, solver) {
            Ok(v) => v,
            Err(e) => {
                problems.push(format!("case {case}: oracle {e}"));
                continue;
            }
        };
        if oracle && witness.is_some() {
            problems.push(format!("case {case}: oracle says valid but enumeration found a counterexample"));
            continue;
        }
        match farkas_says_valid(&imp) {
            Ok(v) if v == oracle => {
                agree += 1;
                valid += usize::from(v);
            }
            Ok(v) => problems.push(format!("case {case}: dual says {v}, oracle {oracle}")),
            Err(e) => problems.push(format!("case {case}: {e}")),
        }
    }
    let detail = format!(
        "{agree}/200 agree ({valid} valid, {} invalid); oracle: {}{}",
        agree - valid,
        if solver.is_some() { "solver query" } else { "primal simplex (no SMT solver)" },
        problems.first().map(|p| format!("; {p}")).unwrap_or_default()
    );
    judge(agree == 200, detail)
}

// 5. Simplex and external solver on random linear systems.

fn random_linear_system(rng: &mut ChaCha8Rng) -> ConstraintSystem {
    let n = rng.gen_range(1..=4);
    let vars: Vec<Param> = (0..n).map(|j| Param::new(format!("v{j}"), ParamKind::Certificate)).collect();
    let m = rng.gen_range(1..=6);
    let constraints = (0..m)
        .map(|_| {
            let coeffs: Vec<Rational> = (0..n).map(|_| int(rng.gen_range(-3..=3))).collect();
            let poly = coeffs.iter().zip(&vars).fold(Poly::constant(rat(rng.gen_range(-10..=10), 2)), |acc, (c, v)| {
                &acc + &Poly::term(Monomial::from_factors([(v.clone(), 1)]), c.clone())
            });
            let rel = match rng.gen_range(0..6) {
                0 => Rel::Eq,
                1 | 2 => Rel::Lt,
                _ => Rel::Le,
            };
            Constraint::Atom(PolyAtom::new(poly, rel))
        })
        .collect();
    ConstraintSystem { vars, constraints }
}

fn backend_agreement() -> Line {
    let config = solver(30);
    if !config.available() {
        return (Status::Unverified, "no SMT solver".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut agree, mut sat, mut problems) = (0, 0, Vec::new());
    for case in 0..100 {
        let system = random_linear_system(&mut rng);
        let lp = simplex_solve(&system);
        let smt = run_solver(&system, &config);
        let (lp, smt) = match (lp, smt) {
            (Ok(a), Ok(b)) => (a, b),
            (a, b) => {
                problems.push(format!("case {case}: {:?} / {:?}", a.err(), b.err()));
                continue;
            }
        };
        let rechecks = [&lp, &smt].iter().all(|v| match v {
            Verdict::Sat { values, approximate } => !approximate && system.check(values).is_ok(),
            _ => true,
        });
        let ray_ok = match &lp {
            Verdict::Unsat { ray: Some(r) } => verify_unsat_ray(&system, r),
            _ => true,
        };
        if lp.label() == smt.label() && lp.label() != "unknown" && rechecks && ray_ok {
            agree += 1;
            sat += usize::from(lp.is_sat());
        } else {
            problems.push(format!("case {case}: simplex {}, solver {}", lp.label(), smt.label()));
        }
    }
    judge(
        agree == 100,
        format!(
            "{agree}/100 agree ({sat} sat, {} unsat){}",
            agree - sat,
            problems.first().map(|p| format!("; {p}")).unwrap_or_default()
        ),
    )
}

// 6. Perturbed certificates.

#[derive(Debug, Clone, Copy)]
enum Perturbation {
    /// Demand a decrease this large.
    Epsilon(i64),
    /// Shift the first invariant row of the initial location so that it
    /// excludes the initial state.
    InitRow,
    /// Negate the state coefficient of the first piece of pair 0 at the
    /// named location.
    FlipSign(&'static str),
}

fn perturb(cert: &Certificate, model: &StochModel, dsa: &GuardedDsa, how: Perturbation) -> Certificate {
    let mut c = cert.clone();
    match how {
        Perturbation::Epsilon(e) => c.epsilon = int(e),
        Perturbation::InitRow => {
            let init = (dsa.init, mode_index(model, &model.init_mode));
            let rows = c.invariant.get_mut(&init).unwrap();
            let at_init = rows[0].eval(&Valuation::new(), &model.init_state).unwrap();
            rows[0] = &rows[0] + &LinForm::rational(int(1) - at_init);
        }
        Perturbation::FlipSign(at) => {
            let loc = loc_by_name(model, dsa, at).unwrap();
            let piece = &mut c.pairs[0].pieces.get_mut(&loc).unwrap()[0];
            let twice = piece.form.coeff(0).as_constant().unwrap() * int(2);
            piece.form = &piece.form - &LinForm::var(0).scale_rational(&twice);
        }
    }
    c
}

/// Confirms a reported violation by evaluating the certificate at the
/// witness state directly, without the symbolic checker.
fn confirm_witness(cert: &Certificate, model: &StochModel, base: &GuardedDsa, v: &Violation) -> Result<(), String> {
    let dsa = cert.automaton(base);
    let stepper = Stepper::new(model, &dsa, Some(cert)).map_err(|e| e.to_string())?;
    let loc = loc_by_name(model, &dsa, &v.location).ok_or_else(|| format!("unknown location `{}`", v.location))?;
    let x = &v.state;
    let inside = cert.in_invariant(loc, x);
    let ok = match v.condition.as_str() {
        "init" => *x == model.init_state && !inside,
        "consecution" => {
            let w = v.disturbance.as_ref().ok_or("consecution witness without disturbance")?;
            let mode = &model.modes[loc.1];
            let (next, next_mode) = model.step(x, mode, w, &cert.controls).map_err(|e| e.to_string())?;
            let next_loc = (dsa.step(loc.0, x, mode), mode_index(model, &next_mode));
            inside && !cert.in_invariant(next_loc, &next)
        }
        "nonnegativity" => {
            let pair = v.pair.ok_or("no pair")?;
            inside && cert.value(pair, loc, x).is_some_and(|val| val.is_negative())
        }
        "decrease" | "bounded-increase" | "non-increase" => {
            let pair = v.pair.ok_or("no pair")?;
            let bound = match v.condition.as_str() {
                "decrease" => -cert.epsilon.clone(),
                "bounded-increase" => cert.pairs[pair].bound.clone(),
                _ => Rational::zero(),
            };
            let now = cert.value(pair, loc, x).ok_or("no piece at witness")?;
            let post = stepper.post_value(pair, loc, x).map_err(|e| e.to_string())?;
            inside && post - now > bound
        }
        other => return Err(format!("no direct confirmation for `{other}`")),
    };
    if ok {
        Ok(())
    } else {
        Err(format!("witness does not exhibit the violation: {v}"))
    }
}

fn adversarial_checker() -> Line {
    use Perturbation::*;
    let cases: [(&str, Perturbation); 10] = [
        ("evenOrNegative", Epsilon(3)),
        ("SafeRWalk1", InitRow),
        ("PersistRW", Epsilon(100)),
        ("RecurRW", FlipSign("q1")),
        ("SafeRWalk2", InitRow),
        ("GuaranteeRW", Epsilon(1000)),
        ("Temperature1", FlipSign("q1")),
        ("Temperature2", InitRow),
        ("Temperature3", Epsilon(1000)),
        ("FinMemoryControl", InitRow),
    ];
    let mut problems = Vec::new();
    let (mut originals, mut rejected) = (0, 0);
    for (name, how) in cases {
        let (model, dsa) = load(name);
        let cert = shipped(name, &model, &dsa);
        if symbolic_check(&cert, &model, &dsa).unwrap().is_valid() {
            originals += 1;
        } else {
            problems.push(format!("{name}: original rejected"));
        }
        let bad = perturb(&cert, &model, &dsa, how);
        match symbolic_check(&bad, &model, &dsa).unwrap().outcome {
            CheckOutcome::Valid => problems.push(format!("{name} {how:?}: accepted")),
            CheckOutcome::Invalid(v) => match confirm_witness(&bad, &model, &dsa, &v) {
                Ok(()) => rejected += 1,
                Err(e) => problems.push(format!("{name} {how:?}: {e}")),
            },
        }
    }
    judge(
        originals == 10 && rejected == 10,
        format!(
            "{rejected}/10 perturbed rejected with confirmed witnesses, {originals}/10 originals valid{}",
            problems.first().map(|p| format!("; {p}")).unwrap_or_default()
        ),
    )
}

// 7. Simulation.

fn simulation_sanity() -> Line {
    let (model, dsa) = load("evenOrNegative");
    let cert = shipped("evenOrNegative", &model, &dsa);
    let opts = SimOptions { trajectories: 10_000, horizon: 1_000, seed: 7, suspect_after: 50 };
    let start = Instant::now();
    let report = simulate(&model, &dsa, Some(&cert), &opts).unwrap();
    let suspects: usize = report.pairs.iter().map(|p| p.suspect).sum();
    let even_ok = report.invariant_violations == 0 && suspects == 0;

    let (model, dsa) = load("PersistRW");
    let cert = shipped("PersistRW", &model, &dsa);
    let opts = SimOptions { trajectories: 1_000, horizon: 1_000, seed: 7, suspect_after: 50 };
    let persist = simulate(&model, &dsa, Some(&cert), &opts).unwrap();
    let bound = -cert.epsilon.clone();
    let decrease: Vec<_> = persist
        .residuals
        .iter()
        .flatten()
        .filter(|r| r.class == streett_core::automata::StateClass::Decrease)
        .collect();
    let visits: u64 = decrease.iter().map(|r| r.visits).sum();
    let persist_ok = persist.invariant_violations == 0
        && visits > 0
        && decrease.iter().all(|r| r.violations == 0 && r.max_residual.as_ref().is_some_and(|m| *m <= bound));
    let max = decrease.iter().filter_map(|r| r.max_residual.clone()).max();
    judge(
        even_ok && persist_ok,
        format!(
            "evenOrNegative: {} invariant violations, {suspects} suspect ({:.1} s); PersistRW: {visits} A\\B visits, max residual {} vs -eps = {}, {} invariant violations",
            report.invariant_violations,
            start.elapsed().as_secs_f64(),
            max.as_ref().map(fmt_rational).unwrap_or_else(|| "-".into()),
            fmt_rational(&bound),
            persist.invariant_violations
        ),
    )
}

// 8. Symbolic post-expectation against direct enumeration.

fn random_valuation(rng: &mut ChaCha8Rng, model: &StochModel, templates: &[CertTemplate]) -> Valuation {
    let mut val = Valuation::new();
    for t in templates {
        for p in t.params() {
            val.insert(p.name(), rat(rng.gen_range(-20..=20), rng.gen_range(1..=4)));
        }
    }
    for c in &model.controls {
        let span = &c.hi - &c.lo;
        val.insert(c.param.name(), &c.lo + span * rat(rng.gen_range(0..=64), 64));
    }
    val
}

/// `E[V(next)]` by stepping the model once per disturbance outcome.
fn enumerate_post(
    model: &StochModel,
    dsa: &GuardedDsa,
    template: &CertTemplate,
    val: &Valuation,
    loc: Loc,
    x: &[Rational],
) -> Rational {
    let mode = &model.modes[loc.1];
    let streett_core::model::DisturbanceKind::Finite(points) = &model.disturbance.kind else { unreachable!() };
    let next_q = dsa.step(loc.0, x, mode);
    points
        .iter()
        .map(|(w, p)| {
            let (next, next_mode) = model.step(x, mode, w, val).unwrap();
            template.eval((next_q, mode_index(model, &next_mode)), &next, val).unwrap() * p
        })
        .sum()
}

fn table_matches(
    rng: &mut ChaCha8Rng,
    model: &StochModel,
    dsa: &GuardedDsa,
    templates: &[CertTemplate],
    tables: &[PostTable],
) -> Result<usize, String> {
    let locs = locations(model, dsa);
    let mut compared = 0;
    for _ in 0..1000 {
        let val = random_valuation(rng, model, templates);
        let loc = locs[rng.gen_range(0..locs.len())];
        let x: Vec<Rational> =
            (0..model.dim()).map(|_| rat(rng.gen_range(-2400..=2400), rng.gen_range(1..=2))).collect();
        for (t, table) in templates.iter().zip(tables) {
            let symbolic = table.eval(loc, &x, &val).map_err(|e| e.to_string())?;
            let direct = enumerate_post(model, dsa, t, &val, loc, &x);
            if symbolic != direct {
                return Err(format!(
                    "{} pair {} at {} x = {:?}: table {} vs enumeration {}",
                    model.name,
                    t.pair,
                    loc_name(model, dsa, loc),
                    x.iter().map(fmt_rational).collect::<Vec<_>>(),
                    fmt_rational(&symbolic),
                    fmt_rational(&direct)
                ));
            }
            compared += 1;
        }
    }
    Ok(compared)
}

fn post_tables() -> Line {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut checked = Vec::new();
    for entry in entries() {
        let (model, dsa) = load(&entry.name);
        if !model.disturbance.is_finite() {
            continue;
        }
        let pieces: PieceMode = entry.pieces.as_deref().map(|p| p.parse().unwrap()).unwrap_or_default();
        let templates: Vec<CertTemplate> =
            (0..dsa.pairs.len()).map(|i| cert_template(&model, &dsa, i, pieces).unwrap()).collect();
        let auto: Vec<PostTable> = templates.iter().map(|t| post_expectation(t, &model, &dsa).unwrap()).collect();
        let mut variants = vec![("auto", auto)];
        if model.manual_post.is_some() {
            variants.push(("manual", templates.iter().map(|t| manual_post_lookup(t, &model, &dsa).unwrap()).collect()));
        }
        for (kind, tables) in variants {
            match table_matches(&mut rng, &model, &dsa, &templates, &tables) {
                Ok(n) => checked.push(format!("{}:{kind}:{n}", entry.name)),
                Err(e) => return fail(e),
            }
        }
    }
    pass(format!("exact agreement on 10^3 states per table ({} tables)", checked.len()))
}

fn run(id: usize, name: &str, criterion: fn() -> Line) -> Status {
    let start = Instant::now();
    let (status, detail) = criterion();
    println!("{status} {id} {name}: {detail} [{:.1} s]", start.elapsed().as_secs_f64());
    status
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 8] = [
        ("example2 golden", example2_golden),
        ("benchmark corpus", corpus_certified),
        ("Temperature4 shielded control", temperature4_shielded),
        ("Farkas differential", farkas_differential),
        ("LP/SMT agreement", backend_agreement),
        ("checker adversarial suite", adversarial_checker),
        ("simulation sanity", simulation_sanity),
        ("post-expectation oracle", post_tables),
    ];
    let statuses: Vec<Status> = criteria.iter().enumerate().map(|(i, (name, f))| run(i + 1, name, *f)).collect();
    let failed: Vec<usize> =
        statuses.iter().enumerate().filter(|(_, s)| **s == Status::Fail).map(|(i, _)| i + 1).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
