//! Deciding constraint systems: SMT-LIB2 text to an external solver, or the
//! internal exact simplex for all-linear systems.
//!
//! Solver protocol: the script declares every variable as `Real`, asserts
//! the constraints with exact `(/ p q)` literals, then issues `check-sat`
//! and `get-value` for every non-multiplier variable. A second `get-value`
//! after switching to decimal printing recovers algebraic values
//! (`root-obj`), which are then flagged approximate. Output after the
//! verdict that is not a value list (errors after `unsat`, `unsupported`
//! replies to solver-specific options) is ignored.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use num_traits::{One, Signed, Zero};
use thiserror::Error;

use crate::expr::{parse_rational, Param, ParamKind, Poly, Rational, Rel, Valuation};
use crate::farkas::{Constraint, ConstraintSystem, PolyAtom};
use crate::simplex::{Cmp, Feasibility, Lp};

pub const SOLVER_ENV: &str = "STREETT_SOLVER";

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("solver `{0}` unavailable: {1}")]
    SolverUnavailable(String, String),
    #[error("malformed solver output: {0}")]
    Malformed(String),
    #[error("solver exited with status {status}: {stderr}")]
    SolverFailed { status: String, stderr: String },
    #[error("lp backend requires a linear system, got degree {0}")]
    NotLinear(u32),
    #[error("lp backend cannot decide disjunctive constraints")]
    Disjunctive,
    #[error("i/o error talking to solver: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    /// `approximate` is set when some value came from a decimal rendering
    /// of an algebraic number.
    Sat {
        values: Valuation,
        approximate: bool,
    },
    /// The simplex attaches a Farkas ray over the rows it built.
    Unsat {
        ray: Option<Vec<Rational>>,
    },
    Unknown(String),
}

impl Verdict {
    pub fn is_sat(&self) -> bool {
        matches!(self, Verdict::Sat { .. })
    }

    pub fn is_unsat(&self) -> bool {
        matches!(self, Verdict::Unsat { .. })
    }

    pub fn label(&self) -> &'static str {
        match self {
            Verdict::Sat { .. } => "sat",
            Verdict::Unsat { .. } => "unsat",
            Verdict::Unknown(_) => "unknown",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    Smt,
    Lp,
    Auto,
}

impl std::str::FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "smt" => Ok(BackendKind::Smt),
            "lp" => Ok(BackendKind::Lp),
            "auto" => Ok(BackendKind::Auto),
            other => Err(format!("unknown backend `{other}` (expected smt, lp or auto)")),
        }
    }
}

impl std::fmt::Display for BackendKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BackendKind::Smt => "smt",
            BackendKind::Lp => "lp",
            BackendKind::Auto => "auto",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SolverConfig {
    pub program: PathBuf,
    pub args: Vec<String>,
    pub logic: String,
    pub timeout: Duration,
}

impl SolverConfig {
    /// Explicit path, else `$STREETT_SOLVER`, else `z3` on the path. z3 gets
    /// `-in` so it reads the script from stdin.
    pub fn resolve(path: Option<PathBuf>, timeout: Duration) -> Self {
        let program = path
            .or_else(|| std::env::var_os(SOLVER_ENV).filter(|s| !s.is_empty()).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("z3"));
        let is_z3 = program.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("z3"));
        let args = if is_z3 { vec!["-in".to_string()] } else { Vec::new() };
        SolverConfig { program, args, logic: "QF_NRA".to_string(), timeout }
    }

    /// Whether the solver can be started at all.
    pub fn available(&self) -> bool {
        Command::new(&self.program)
            .arg("-version")
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .status()
            .is_ok()
    }
}

#[derive(Debug, Clone)]
pub struct SolverJob<'a> {
    pub system: &'a ConstraintSystem,
    pub backend: BackendKind,
    pub solver: SolverConfig,
}

/// Resolves `auto`: linear systems without disjunctions go to the simplex.
pub fn choose_backend(system: &ConstraintSystem, requested: BackendKind) -> BackendKind {
    match requested {
        BackendKind::Auto if system.is_linear() && !system.has_disjunctions() => BackendKind::Lp,
        BackendKind::Auto => BackendKind::Smt,
        other => other,
    }
}

pub fn solve(job: &SolverJob<'_>) -> Result<Verdict, BackendError> {
    match choose_backend(job.system, job.backend) {
        BackendKind::Lp => simplex_solve(job.system),
        _ => run_solver(job.system, &job.solver),
    }
}

fn symbol(name: &str) -> String {
    let simple = !name.is_empty()
        && !name.starts_with(|c: char| c.is_ascii_digit())
        && name.chars().all(|c| c.is_ascii_alphanumeric() || "~!@$%^&*_-+=<>.?/".contains(c))
        && !matches!(name, "and" | "or" | "not" | "let" | "true" | "false" | "ite" | "distinct" | "exists" | "forall");
    if simple {
        name.to_string()
    } else {
        format!("|{name}|")
    }
}

/// An exact literal: `3.0`, `(- 3.0)`, `(/ 1.0 3.0)`, `(- (/ 1.0 3.0))`.
pub fn smt_rational(r: &Rational) -> String {
    let mag = r.abs();
    let body = if mag.is_integer() {
        format!("{}.0", mag.numer())
    } else {
        format!("(/ {}.0 {}.0)", mag.numer(), mag.denom())
    };
    if r.is_negative() {
        format!("(- {body})")
    } else {
        body
    }
}

fn smt_poly(p: &Poly) -> String {
    let mut terms: Vec<String> = Vec::new();
    for (mono, coeff) in p.terms() {
        let mut factors: Vec<String> = Vec::new();
        if !coeff.is_one() || mono.is_one() {
            factors.push(smt_rational(coeff));
        }
        for (param, e) in mono.factors() {
            for _ in 0..*e {
                factors.push(symbol(param.name()));
            }
        }
        terms.push(if factors.len() == 1 { factors.pop().unwrap() } else { format!("(* {})", factors.join(" ")) });
    }
    match terms.len() {
        0 => "0.0".to_string(),
        1 => terms.pop().unwrap(),
        _ => format!("(+ {})", terms.join(" ")),
    }
}

fn smt_atom(a: &PolyAtom) -> String {
    let op = match a.rel {
        Rel::Le => "<=",
        Rel::Lt => "<",
        Rel::Eq => "=",
    };
    format!("({op} {} 0.0)", smt_poly(&a.poly))
}

fn smt_conj(atoms: &[PolyAtom]) -> String {
    match atoms.len() {
        0 => "true".to_string(),
        1 => smt_atom(&atoms[0]),
        _ => format!("(and {})", atoms.iter().map(smt_atom).collect::<Vec<_>>().join(" ")),
    }
}

/// All variables of the system, declared ones first, then any others that
/// occur in constraints.
fn all_vars(system: &ConstraintSystem) -> Vec<Param> {
    let mut seen: BTreeSet<Param> = system.vars.iter().cloned().collect();
    let mut out = system.vars.clone();
    for c in &system.constraints {
        let atoms: Vec<&PolyAtom> = match c {
            Constraint::Atom(a) => vec![a],
            Constraint::Or(cases) => cases.iter().flatten().collect(),
        };
        for a in atoms {
            for p in a.poly.params() {
                if seen.insert(p.clone()) {
                    out.push(p);
                }
            }
        }
    }
    out
}

/// The variables whose values the solver is asked for.
pub fn reported_vars(system: &ConstraintSystem) -> Vec<Param> {
    all_vars(system).into_iter().filter(|p| p.kind() != ParamKind::Multiplier).collect()
}

pub fn emit_smtlib(system: &ConstraintSystem, logic: &str) -> String {
    let mut out = String::new();
    out.push_str("(set-option :produce-models true)\n");
    out.push_str(&format!("(set-logic {logic})\n"));
    for p in all_vars(system) {
        out.push_str(&format!("(declare-const {} Real)\n", symbol(p.name())));
    }
    for c in &system.constraints {
        let body = match c {
            Constraint::Atom(a) => smt_atom(a),
            Constraint::Or(cases) => {
                format!("(or {})", cases.iter().map(|c| smt_conj(c)).collect::<Vec<_>>().join(" "))
            }
        };
        out.push_str(&format!("(assert {body})\n"));
    }
    out.push_str("(check-sat)\n");
    let wanted = reported_vars(system);
    if !wanted.is_empty() {
        let names: Vec<String> = wanted.iter().map(|p| symbol(p.name())).collect();
        let list = names.join(" ");
        out.push_str(&format!("(get-value ({list}))\n"));
        out.push_str("(set-option :pp.decimal true)\n(set-option :pp.decimal_precision 40)\n");
        out.push_str(&format!("(get-value ({list}))\n"));
    }
    out.push_str("(exit)\n");
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Sexp {
    Atom(String),
    List(Vec<Sexp>),
}

fn parse_sexps(text: &str) -> Result<Vec<Sexp>, BackendError> {
    let chars: Vec<char> = text.chars().collect();
    let mut pos = 0;
    let mut stack: Vec<Vec<Sexp>> = vec![Vec::new()];
    while pos < chars.len() {
        let c = chars[pos];
        if c.is_whitespace() {
            pos += 1;
        } else if c == ';' {
            while pos < chars.len() && chars[pos] != '\n' {
                pos += 1;
            }
        } else if c == '(' {
            stack.push(Vec::new());
            pos += 1;
        } else if c == ')' {
            let done = stack.pop().filter(|_| !stack.is_empty());
            let done = done.ok_or_else(|| BackendError::Malformed("unbalanced `)`".into()))?;
            stack.last_mut().unwrap().push(Sexp::List(done));
            pos += 1;
        } else if c == '|' || c == '"' {
            let end = chars[pos + 1..]
                .iter()
                .position(|&d| d == c)
                .ok_or_else(|| BackendError::Malformed("unterminated quoted token".into()))?;
            let tok: String = chars[pos + 1..pos + 1 + end].iter().collect();
            stack.last_mut().unwrap().push(Sexp::Atom(tok));
            pos += end + 2;
        } else {
            let start = pos;
            while pos < chars.len() && !chars[pos].is_whitespace() && !"();|\"".contains(chars[pos]) {
                pos += 1;
            }
            stack.last_mut().unwrap().push(Sexp::Atom(chars[start..pos].iter().collect()));
        }
    }
    if stack.len() != 1 {
        return Err(BackendError::Malformed("unbalanced `(`".into()));
    }
    Ok(stack.pop().unwrap())
}

/// A value term: exact when it is a numeral, decimal, negation or quotient;
/// `Some((v, true))` for a decimal ending in `?`; `None` otherwise.
fn sexp_value(s: &Sexp) -> Option<(Rational, bool)> {
    match s {
        Sexp::Atom(a) => match a.strip_suffix('?') {
            Some(digits) => parse_rational(digits).map(|v| (v, true)),
            None => parse_rational(a).map(|v| (v, false)),
        },
        Sexp::List(items) => match items.as_slice() {
            [Sexp::Atom(op), x] if op == "-" => sexp_value(x).map(|(v, a)| (-v, a)),
            [Sexp::Atom(op), x, y] if op == "/" => {
                let (n, an) = sexp_value(x)?;
                let (d, ad) = sexp_value(y)?;
                (!d.is_zero()).then(|| (n / d, an || ad))
            }
            _ => None,
        },
    }
}

/// Extracts `(name value)` pairs from a `get-value` response.
fn value_block(s: &Sexp) -> Option<Vec<(String, &Sexp)>> {
    let Sexp::List(items) = s else { return None };
    let mut out = Vec::new();
    for item in items {
        match item {
            Sexp::List(pair) if pair.len() == 2 => match &pair[0] {
                Sexp::Atom(name) => out.push((name.clone(), &pair[1])),
                _ => return None,
            },
            _ => return None,
        }
    }
    Some(out)
}

/// Parses a solver transcript produced by the script of [`emit_smtlib`].
pub fn parse_solver_output(text: &str, wanted: &[Param]) -> Result<Verdict, BackendError> {
    let sexps = parse_sexps(text)?;
    let mut iter = sexps.iter();
    let verdict = loop {
        match iter.next() {
            Some(Sexp::Atom(a)) if a == "sat" || a == "unsat" || a == "unknown" => break a.as_str(),
            Some(Sexp::Atom(a)) if a == "success" || a == "unsupported" => continue,
            Some(Sexp::List(items)) if matches!(items.first(), Some(Sexp::Atom(e)) if e == "error") => {
                let msg = items.get(1).map(|m| format!("{m:?}")).unwrap_or_default();
                return Err(BackendError::Malformed(format!("solver error before verdict: {msg}")));
            }
            Some(other) => return Err(BackendError::Malformed(format!("unexpected output {other:?}"))),
            None => return Err(BackendError::Malformed("no verdict".into())),
        }
    };
    match verdict {
        "unsat" => return Ok(Verdict::Unsat { ray: None }),
        "unknown" => return Ok(Verdict::Unknown("solver returned unknown".into())),
        _ => {}
    }
    let blocks: Vec<Vec<(String, &Sexp)>> = iter.filter_map(value_block).filter(|b| !b.is_empty()).collect();
    let mut exact: BTreeMap<String, Rational> = BTreeMap::new();
    let mut approx: BTreeMap<String, Rational> = BTreeMap::new();
    if let Some(first) = blocks.first() {
        for (name, v) in first {
            if let Some((r, false)) = sexp_value(v) {
                exact.insert(name.clone(), r);
            }
        }
    }
    if let Some(second) = blocks.get(1) {
        for (name, v) in second {
            if let Some((r, _)) = sexp_value(v) {
                approx.insert(name.clone(), r);
            }
        }
    }
    let mut values = Valuation::new();
    let mut approximate = false;
    for p in wanted {
        if let Some(v) = exact.get(p.name()) {
            values.insert(p.name(), v.clone());
        } else if let Some(v) = approx.get(p.name()) {
            values.insert(p.name(), v.clone());
            approximate = true;
        } else {
            return Err(BackendError::Malformed(format!("no value for `{}`", p.name())));
        }
    }
    Ok(Verdict::Sat { values, approximate })
}

/// Runs the configured solver on the system. Timeouts kill the process and
/// yield `Unknown`.
pub fn run_solver(system: &ConstraintSystem, config: &SolverConfig) -> Result<Verdict, BackendError> {
    let script = emit_smtlib(system, &config.logic);
    let wanted = reported_vars(system);
    let output = run_script(&script, config)?;
    match output {
        ScriptOutput::TimedOut => Ok(Verdict::Unknown(format!("timeout after {:?}", config.timeout))),
        ScriptOutput::Done { stdout, stderr, status } => match parse_solver_output(&stdout, &wanted) {
            Ok(v) => Ok(v),
            Err(e) if !status.success() => {
                let stderr = if stderr.trim().is_empty() { e.to_string() } else { stderr };
                Err(BackendError::SolverFailed { status: status.to_string(), stderr })
            }
            Err(e) => Err(e),
        },
    }
}

enum ScriptOutput {
    Done { stdout: String, stderr: String, status: std::process::ExitStatus },
    TimedOut,
}

fn run_script(script: &str, config: &SolverConfig) -> Result<ScriptOutput, BackendError> {
    let mut child = Command::new(&config.program)
        .args(&config.args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| BackendError::SolverUnavailable(config.program.display().to_string(), e.to_string()))?;
    let mut stdin = child.stdin.take().expect("piped stdin");
    let mut stdout = child.stdout.take().expect("piped stdout");
    let mut stderr = child.stderr.take().expect("piped stderr");
    let script = script.to_string();
    let writer = std::thread::spawn(move || {
        let _ = stdin.write_all(script.as_bytes());
    });
    let out_reader = std::thread::spawn(move || {
        let mut s = String::new();
        let _ = stdout.read_to_string(&mut s);
        s
    });
    let err_reader = std::thread::spawn(move || {
        let mut s = String::new();
        let _ = stderr.read_to_string(&mut s);
        s
    });
    let start = Instant::now();
    let status = loop {
        if let Some(status) = child.try_wait()? {
            break Some(status);
        }
        if start.elapsed() >= config.timeout {
            let _ = child.kill();
            let _ = child.wait();
            break None;
        }
        std::thread::sleep(Duration::from_millis(2));
    };
    let _ = writer.join();
    let stdout = out_reader.join().unwrap_or_default();
    let stderr = err_reader.join().unwrap_or_default();
    Ok(match status {
        Some(status) => ScriptOutput::Done { stdout, stderr, status },
        None => ScriptOutput::TimedOut,
    })
}

/// Builds the LP of a linear, disjunction-free system over free variables.
fn linear_program(system: &ConstraintSystem) -> Result<(Lp, Vec<Param>), BackendError> {
    if system.has_disjunctions() {
        return Err(BackendError::Disjunctive);
    }
    let degree = system.degree();
    if degree > 1 {
        return Err(BackendError::NotLinear(degree));
    }
    let vars = all_vars(system);
    let index: BTreeMap<&Param, usize> = vars.iter().enumerate().map(|(i, p)| (p, i)).collect();
    let mut lp = Lp::new();
    lp.add_vars(vars.len(), true);
    for c in &system.constraints {
        let Constraint::Atom(a) = c else { unreachable!() };
        let (coeffs, rhs) = linear_row(&a.poly, &index);
        let cmp = match a.rel {
            Rel::Le => Cmp::Le,
            Rel::Lt => Cmp::Lt,
            Rel::Eq => Cmp::Eq,
        };
        lp.add_row(coeffs, cmp, rhs);
    }
    Ok((lp, vars))
}

fn linear_row(poly: &Poly, index: &BTreeMap<&Param, usize>) -> (Vec<(usize, Rational)>, Rational) {
    let mut coeffs = Vec::new();
    let mut rhs = Rational::zero();
    for (mono, c) in poly.terms() {
        match mono.factors() {
            [] => rhs = -c,
            [(p, 1)] => coeffs.push((index[p], c.clone())),
            _ => unreachable!("degree checked"),
        }
    }
    (coeffs, rhs)
}

/// Decides a linear system exactly; unsat answers carry a Farkas ray when
/// the system has no strict rows.
pub fn simplex_solve(system: &ConstraintSystem) -> Result<Verdict, BackendError> {
    let (lp, vars) = linear_program(system)?;
    Ok(match lp.solve() {
        Feasibility::Feasible(point) => {
            let values = vars.iter().zip(point).map(|(p, v)| (p.name().into(), v)).collect();
            Verdict::Sat { values, approximate: false }
        }
        Feasibility::Infeasible(ray) => Verdict::Unsat { ray },
    })
}

/// Checks a simplex infeasibility ray against the system it came from.
pub fn verify_unsat_ray(system: &ConstraintSystem, ray: &[Rational]) -> bool {
    linear_program(system).map(|(lp, _)| lp.verify_ray(ray)).unwrap_or(false)
}

/// Fixes every non-multiplier variable to `partial` and recovers the
/// multipliers. Each Farkas dual owns its multipliers, so after fixing the
/// rest every constraint is linear in a single dual's block and each block
/// is decided by its own LP. Returns the completed valuation, or the first
/// constraint that cannot be satisfied.
pub fn complete_multipliers(system: &ConstraintSystem, partial: &Valuation) -> Result<Valuation, String> {
    let mut groups: BTreeMap<String, Vec<&Constraint>> = BTreeMap::new();
    let mut full = partial.clone();
    for c in &system.constraints {
        let atoms: Vec<&PolyAtom> = match c {
            Constraint::Atom(a) => vec![a],
            Constraint::Or(cases) => cases.iter().flatten().collect(),
        };
        let block = atoms
            .iter()
            .flat_map(|a| a.poly.params())
            .find(|p| p.kind() == ParamKind::Multiplier)
            .map(|p| multiplier_block(p.name()).to_string());
        match block {
            Some(b) => groups.entry(b).or_default().push(c),
            None => match c.holds(partial) {
                Ok(true) => {}
                Ok(false) => return Err(format!("violated: {}", describe(c))),
                Err(e) => return Err(e.to_string()),
            },
        }
    }
    for (block, constraints) in groups {
        let fixed: Vec<Constraint> = constraints
            .iter()
            .map(|c| match c {
                Constraint::Atom(a) => Constraint::Atom(fix(a, partial)),
                Constraint::Or(cases) => {
                    Constraint::Or(cases.iter().map(|case| case.iter().map(|a| fix(a, partial)).collect()).collect())
                }
            })
            .collect();
        let values = solve_block(&fixed).ok_or_else(|| format!("no multipliers for dual `{block}`"))?;
        for (k, v) in values.iter() {
            full.insert(k, v.clone());
        }
    }
    Ok(full)
}

fn describe(c: &Constraint) -> String {
    match c {
        Constraint::Atom(a) => a.to_string(),
        Constraint::Or(_) => "disjunction".to_string(),
    }
}

fn fix(a: &PolyAtom, partial: &Valuation) -> PolyAtom {
    PolyAtom::new(a.poly.partial_eval(partial), a.rel)
}

/// `z.7.3` belongs to block `z.7`.
fn multiplier_block(name: &str) -> &str {
    name.rsplit_once('.').map(|(b, _)| b).unwrap_or(name)
}

/// Decides a block with at most one disjunction by trying its cases in turn.
fn solve_block(constraints: &[Constraint]) -> Option<Valuation> {
    let mut base: Vec<PolyAtom> = Vec::new();
    let mut cases: Vec<&Vec<PolyAtom>> = Vec::new();
    let mut disjunctions = 0;
    for c in constraints {
        match c {
            Constraint::Atom(a) => base.push(a.clone()),
            Constraint::Or(cs) => {
                disjunctions += 1;
                cases.extend(cs.iter());
            }
        }
    }
    assert!(disjunctions <= 1, "a Farkas block has at most one disjunction");
    let try_atoms = |extra: &[PolyAtom]| -> Option<Valuation> {
        let system = ConstraintSystem {
            vars: Vec::new(),
            constraints: base.iter().chain(extra).cloned().map(Constraint::Atom).collect(),
        };
        match simplex_solve(&system) {
            Ok(Verdict::Sat { values, .. }) => Some(values),
            _ => None,
        }
    };
    if cases.is_empty() {
        return try_atoms(&[]);
    }
    cases.iter().find_map(|case| try_atoms(case))
}
