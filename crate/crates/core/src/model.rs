//! Piecewise-affine stochastic systems: data model, text format and `step`.
//!
//! ```text
//! # comments start with '#'
//! name: Temperature1
//! state: x                      # comma-separated state variable names
//! modes: even, odd              # optional; default is a single mode `main`
//! init: x = 280
//! init_mode: even               # optional; default is the first mode
//! disturbance: w ~ bernoulli(1/2)
//! control: alpha in [-10, 10]
//! constraint: 305*alpha + beta < 5.24
//! branch
//!   guard: x > 0 && mode = even
//!   x' = x - (x - 280)/100 + alpha*x + beta + 0.1*(2*w - 1)
//!   mode: odd                   # optional; default keeps the mode
//! end
//! ```
//!
//! Disturbances are `finite {v1: p1, v2: p2, ...}`, `bernoulli(p)` (values
//! 0 and 1), or `uniform(lo, hi)` / `box(lo, hi, mean)` for a continuous
//! variable known only through its support and mean. Several disturbance
//! lines declare independent variables (mixing finite and box is rejected).
//! State variables without an update line keep their value.
//!
//! Optional `post ... end` blocks give the post-expectation by hand:
//!
//! ```text
//! post
//!   at: * @ even                # automaton state (or *) and mode (or *)
//!   guard: x = 0
//!   outcome: 1/2 -> q0 @ odd : x' = 1
//!   outcome: 1/2 -> q0 @ odd : x' = -1
//! end
//! ```

use std::collections::BTreeSet;
use std::fmt;

use num_traits::{One, Signed, Zero};
use thiserror::Error;

use crate::expr::{
    fmt_rational, parse_atoms, parse_expr, parse_rational, Atom, ExprError, Guard, LinForm, Param, ParamKind, Rational,
    Scope, Symbol, Valuation,
};
use crate::region::{find_gap, find_overlap, fmt_point, Region};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("line {line}, column {col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("branches at lines {first} and {second} overlap in mode {mode} (e.g. {witness})")]
    Overlap { first: usize, second: usize, mode: String, witness: String },
    #[error("branch guards do not cover mode {mode} (e.g. {witness} is uncovered)")]
    NotExhaustive { mode: String, witness: String },
    #[error("probabilities {0}")]
    Probability(String),
    #[error("no branch applies at {0}")]
    NoBranch(String),
    #[error("branches at lines {0} and {1} both apply at {2}")]
    AmbiguousBranch(usize, usize, String),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

fn syntax(line: usize, col: usize, msg: impl Into<String>) -> ModelError {
    ModelError::Syntax { line, col, msg: msg.into() }
}

fn lift(line: usize, offset: usize, e: ExprError) -> ModelError {
    match e {
        ExprError::Syntax { col, msg } => syntax(line, col + offset, msg),
        other => syntax(line, offset + 1, other.to_string()),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DisturbanceKind {
    /// Support points (one value per disturbance variable) with positive probabilities summing to one.
    Finite(Vec<(Vec<Rational>, Rational)>),
    /// Per-variable support interval and mean.
    Box { lo: Vec<Rational>, hi: Vec<Rational>, mean: Vec<Rational> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Disturbance {
    pub params: Vec<Param>,
    pub kind: DisturbanceKind,
}

impl Disturbance {
    pub fn none() -> Self {
        Disturbance { params: Vec::new(), kind: DisturbanceKind::Finite(vec![(Vec::new(), Rational::one())]) }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self.kind, DisturbanceKind::Finite(_))
    }

    /// Binds one support point (or the mean, for a box) to the disturbance names.
    pub fn valuation(&self, values: &[Rational]) -> Valuation {
        self.params.iter().zip(values).map(|(p, v)| (p.name().into(), v.clone())).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ControlParam {
    pub param: Param,
    pub lo: Rational,
    pub hi: Rational,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Branch {
    pub guard: Guard,
    /// One form per state variable over the state, control and disturbance parameters.
    pub update: Vec<LinForm>,
    /// Target mode; `None` keeps the current mode.
    pub mode_to: Option<String>,
    pub line: usize,
}

impl Branch {
    pub fn target_mode<'a>(&'a self, mode: &'a str) -> &'a str {
        self.mode_to.as_deref().unwrap_or(mode)
    }
}

/// One probabilistic outcome of a hand-written post-expectation piece.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PostOutcome {
    pub prob: Rational,
    pub target_state: String,
    pub target_mode: String,
    pub image: Vec<LinForm>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManualPiece {
    /// Automaton state, or `None` for every state.
    pub at_state: Option<String>,
    /// Mode, or `None` for every mode.
    pub at_mode: Option<String>,
    pub guard: Guard,
    pub outcomes: Vec<PostOutcome>,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CoverStatus {
    /// Disjointness and exhaustiveness were proved by LP for every mode.
    Verified,
    /// Modes whose branch guards mention control parameters; not checked.
    Exempt(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StochModel {
    pub name: String,
    pub vars: Vec<String>,
    pub modes: Vec<String>,
    pub init_state: Vec<Rational>,
    pub init_mode: String,
    pub disturbance: Disturbance,
    pub controls: Vec<ControlParam>,
    /// Side constraints over control parameters only.
    pub constraints: Vec<Atom>,
    pub branches: Vec<Branch>,
    pub manual_post: Option<Vec<ManualPiece>>,
    pub cover: CoverStatus,
}

impl StochModel {
    pub fn dim(&self) -> usize {
        self.vars.len()
    }

    pub fn has_controls(&self) -> bool {
        !self.controls.is_empty()
    }

    pub fn control_params(&self) -> impl Iterator<Item = &Param> {
        self.controls.iter().map(|c| &c.param)
    }

    /// True when some branch guard mentions a control parameter.
    pub fn has_parametric_guards(&self) -> bool {
        self.branches.iter().any(|b| !b.guard.is_param_free())
    }

    /// Branches whose guard admits `mode`.
    pub fn branches_in_mode<'a>(&'a self, mode: &'a str) -> impl Iterator<Item = (usize, &'a Branch)> + 'a {
        self.branches.iter().enumerate().filter(move |(_, b)| b.guard.modes.contains(mode))
    }

    /// Scope with state variables, control and disturbance parameters and modes.
    pub fn scope(&self) -> Scope {
        let mut s = Scope::with_vars(&self.vars);
        for c in &self.controls {
            s.bind(c.param.name(), Symbol::Param(c.param.clone()));
        }
        for p in &self.disturbance.params {
            s.bind(p.name(), Symbol::Param(p.clone()));
        }
        for m in &self.modes {
            s.add_mode(m);
        }
        s
    }

    /// The unique branch enabled at `(state, mode)` under `control`.
    pub fn branch_at(&self, state: &[Rational], mode: &str, control: &Valuation) -> Result<usize, ModelError> {
        let mut found: Option<usize> = None;
        for (i, b) in self.branches_in_mode(mode) {
            if guard_holds(&b.guard, control, state)? {
                if let Some(j) = found {
                    return Err(ModelError::AmbiguousBranch(
                        self.branches[j].line,
                        b.line,
                        self.fmt_state(state, mode),
                    ));
                }
                found = Some(i);
            }
        }
        found.ok_or_else(|| ModelError::NoBranch(self.fmt_state(state, mode)))
    }

    /// One exact transition for a given disturbance sample.
    pub fn step(
        &self,
        state: &[Rational],
        mode: &str,
        sample: &[Rational],
        control: &Valuation,
    ) -> Result<(Vec<Rational>, String), ModelError> {
        let b = &self.branches[self.branch_at(state, mode, control)?];
        let val = control.merged(&self.disturbance.valuation(sample));
        let next = b.update.iter().map(|f| f.eval(&val, state)).collect::<Result<Vec<_>, _>>()?;
        Ok((next, b.target_mode(mode).to_string()))
    }

    pub fn fmt_state(&self, state: &[Rational], mode: &str) -> String {
        if self.modes.len() > 1 {
            format!("{} (mode {mode})", fmt_point(&self.vars, state))
        } else {
            fmt_point(&self.vars, state)
        }
    }

    /// The model with the given control parameters replaced by values.
    pub fn with_fixed_controls(&self, values: &Valuation) -> Result<StochModel, ModelError> {
        let fix_guard = |g: &Guard| Guard {
            atoms: g.atoms.iter().map(|a| Atom { form: a.form.partial_eval(values), rel: a.rel }).collect(),
            modes: g.modes.clone(),
        };
        let mut out = self.clone();
        out.controls.retain(|c| !values.contains(c.param.name()));
        out.constraints = self
            .constraints
            .iter()
            .map(|a| Atom { form: a.form.partial_eval(values), rel: a.rel })
            .filter(|a| !(a.form.is_param_free() && a.form.is_state_free()))
            .collect();
        for b in &mut out.branches {
            b.guard = fix_guard(&b.guard);
            b.update = b.update.iter().map(|f| f.partial_eval(values)).collect();
        }
        if let Some(pieces) = &mut out.manual_post {
            for p in pieces {
                p.guard = fix_guard(&p.guard);
                for o in &mut p.outcomes {
                    o.image = o.image.iter().map(|f| f.partial_eval(values)).collect();
                }
            }
        }
        out.cover = out.check_cover()?;
        Ok(out)
    }

    /// Checks that parameter-free branch guards partition every mode.
    fn check_cover(&self) -> Result<CoverStatus, ModelError> {
        let mut exempt = Vec::new();
        for mode in &self.modes {
            let here: Vec<&Branch> = self.branches_in_mode(mode).map(|(_, b)| b).collect();
            if here.iter().any(|b| !b.guard.is_param_free()) {
                exempt.push(mode.clone());
                continue;
            }
            let regions: Vec<Region> = here.iter().map(|b| Region::from_guard(self.dim(), &b.guard)).collect();
            if let Some((i, j, p)) = find_overlap(&regions) {
                return Err(ModelError::Overlap {
                    first: here[i].line,
                    second: here[j].line,
                    mode: mode.clone(),
                    witness: fmt_point(&self.vars, &p),
                });
            }
            if let Some(p) = find_gap(&Region::universe(self.dim()), &regions) {
                return Err(ModelError::NotExhaustive { mode: mode.clone(), witness: fmt_point(&self.vars, &p) });
            }
        }
        Ok(if exempt.is_empty() { CoverStatus::Verified } else { CoverStatus::Exempt(exempt) })
    }
}

/// Evaluates a guard's atoms (modes are the caller's business).
pub fn guard_holds(guard: &Guard, params: &Valuation, state: &[Rational]) -> Result<bool, ExprError> {
    for a in &guard.atoms {
        if !a.holds(&a.form.eval(params, state)?) {
            return Ok(false);
        }
    }
    Ok(true)
}

impl fmt::Display for StochModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({} vars, {} modes, {} branches)", self.name, self.dim(), self.modes.len(), self.branches.len())
    }
}

/// Strips a trailing comment.
fn strip_comment(line: &str) -> &str {
    line.split('#').next().unwrap_or("")
}

/// Splits `key: value`, returning the 1-based column where the value starts.
fn key_value(line: &str) -> Option<(&str, &str, usize)> {
    let (k, v) = line.split_once(':')?;
    let key = k.trim();
    if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
        return None;
    }
    let lead = v.len() - v.trim_start().len();
    let col = line[..k.len() + 1].chars().count() + lead + 1;
    Some((key, v.trim(), col))
}

/// Column (1-based) of `part` within `line`, assuming `part` is a subslice.
fn col_of(line: &str, part: &str) -> usize {
    let offset = (part.as_ptr() as usize).saturating_sub(line.as_ptr() as usize);
    line[..offset.min(line.len())].chars().count() + 1
}

fn parse_names(text: &str, line: usize, col: usize) -> Result<Vec<String>, ModelError> {
    let mut out = Vec::new();
    for part in text.split(',') {
        let name = part.trim();
        if name.is_empty() || !is_ident(name) {
            return Err(syntax(line, col, format!("bad name `{name}`")));
        }
        if out.iter().any(|n| n == name) {
            return Err(syntax(line, col, format!("duplicate name `{name}`")));
        }
        out.push(name.to_string());
    }
    Ok(out)
}

pub(crate) fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

const RESERVED: [&str; 5] = ["mode", "true", "false", "and", "in"];

fn rational_at(text: &str, line: usize, col: usize) -> Result<Rational, ModelError> {
    parse_rational(text).ok_or_else(|| syntax(line, col, format!("expected a rational number, got `{}`", text.trim())))
}

enum DistLine {
    Finite(Vec<(Rational, Rational)>),
    Box(Rational, Rational, Rational),
}

fn parse_disturbance(text: &str, line: usize, col: usize) -> Result<(String, DistLine), ModelError> {
    let (name, spec) = text.split_once('~').ok_or_else(|| syntax(line, col, "expected `name ~ distribution`"))?;
    let name = name.trim();
    if !is_ident(name) {
        return Err(syntax(line, col, format!("bad disturbance name `{name}`")));
    }
    let spec = spec.trim();
    let spec_col = col_of(text, spec) + col - 1;
    let args = |prefix: &str, close: char| -> Option<&str> {
        let rest = spec.strip_prefix(prefix)?.trim_start();
        let open = if close == ')' { '(' } else { '{' };
        rest.strip_prefix(open)?.strip_suffix(close)
    };
    if let Some(inner) = args("bernoulli", ')') {
        let p = rational_at(inner, line, spec_col)?;
        if !(p.is_positive() && p < Rational::one()) {
            return Err(ModelError::Probability(format!("bernoulli parameter {} not in (0, 1)", fmt_rational(&p))));
        }
        return Ok((
            name.into(),
            DistLine::Finite(vec![(Rational::zero(), Rational::one() - &p), (Rational::one(), p)]),
        ));
    }
    if let Some(inner) = args("finite", '}') {
        let mut points = Vec::new();
        for item in inner.split(',') {
            let (v, p) = item.split_once(':').ok_or_else(|| syntax(line, spec_col, "expected `value: probability`"))?;
            points.push((rational_at(v, line, spec_col)?, rational_at(p, line, spec_col)?));
        }
        return Ok((name.into(), DistLine::Finite(points)));
    }
    if let Some(inner) = args("uniform", ')') {
        let parts: Vec<&str> = inner.split(',').collect();
        if parts.len() != 2 {
            return Err(syntax(line, spec_col, "uniform takes (lo, hi)"));
        }
        let lo = rational_at(parts[0], line, spec_col)?;
        let hi = rational_at(parts[1], line, spec_col)?;
        let mean = (&lo + &hi) / Rational::from_integer(2.into());
        return Ok((name.into(), DistLine::Box(lo, hi, mean)));
    }
    if let Some(inner) = args("box", ')') {
        let parts: Vec<&str> = inner.split(',').collect();
        if parts.len() != 3 {
            return Err(syntax(line, spec_col, "box takes (lo, hi, mean)"));
        }
        let lo = rational_at(parts[0], line, spec_col)?;
        let hi = rational_at(parts[1], line, spec_col)?;
        let mean = rational_at(parts[2], line, spec_col)?;
        return Ok((name.into(), DistLine::Box(lo, hi, mean)));
    }
    Err(syntax(line, spec_col, "unknown distribution (expected bernoulli, finite, uniform or box)"))
}

fn combine_disturbances(lines: Vec<(String, DistLine)>) -> Result<Disturbance, ModelError> {
    if lines.is_empty() {
        return Ok(Disturbance::none());
    }
    let params: Vec<Param> = lines.iter().map(|(n, _)| Param::new(n.as_str(), ParamKind::Disturbance)).collect();
    let all_finite = lines.iter().all(|(_, d)| matches!(d, DistLine::Finite(_)));
    let all_box = lines.iter().all(|(_, d)| matches!(d, DistLine::Box(..)));
    if all_finite {
        let mut support: Vec<(Vec<Rational>, Rational)> = vec![(Vec::new(), Rational::one())];
        for (name, d) in &lines {
            let DistLine::Finite(points) = d else { unreachable!() };
            let mut total = Rational::zero();
            for (_, p) in points {
                if !p.is_positive() {
                    return Err(ModelError::Probability(format!("of `{name}` must be positive")));
                }
                total += p;
            }
            if !total.is_one() {
                return Err(ModelError::Probability(format!(
                    "of `{name}` sum to {} instead of 1",
                    fmt_rational(&total)
                )));
            }
            support = support
                .into_iter()
                .flat_map(|(vals, p)| {
                    points.iter().map(move |(v, q)| {
                        let mut vals = vals.clone();
                        vals.push(v.clone());
                        (vals, &p * q)
                    })
                })
                .collect();
        }
        Ok(Disturbance { params, kind: DisturbanceKind::Finite(support) })
    } else if all_box {
        let (mut lo, mut hi, mut mean) = (Vec::new(), Vec::new(), Vec::new());
        for (name, d) in lines {
            let DistLine::Box(l, h, m) = d else { unreachable!() };
            if !(l <= m && m <= h) {
                return Err(ModelError::Probability(format!("box of `{name}` needs lo <= mean <= hi")));
            }
            lo.push(l);
            hi.push(h);
            mean.push(m);
        }
        Ok(Disturbance { params, kind: DisturbanceKind::Box { lo, hi, mean } })
    } else {
        Err(ModelError::Probability("cannot mix finite and box disturbances".into()))
    }
}

struct RawBranch {
    line: usize,
    guard: Option<(String, usize, usize)>,
    updates: Vec<(String, String, usize, usize)>,
    mode_to: Option<(String, usize, usize)>,
}

struct RawPost {
    line: usize,
    at: Option<(String, usize, usize)>,
    guard: Option<(String, usize, usize)>,
    outcomes: Vec<(String, usize, usize)>,
}

enum Block {
    Branch(RawBranch),
    Post(RawPost),
}

/// Parses and validates a model file.
pub fn parse_model(text: &str) -> Result<StochModel, ModelError> {
    let mut name = String::from("model");
    let mut vars: Option<Vec<String>> = None;
    let mut modes: Option<Vec<String>> = None;
    let mut init: Option<(String, usize, usize)> = None;
    let mut init_mode: Option<(String, usize, usize)> = None;
    let mut dist_lines = Vec::new();
    let mut controls_raw: Vec<(String, usize, usize)> = Vec::new();
    let mut constraints_raw: Vec<(String, usize, usize)> = Vec::new();
    let mut blocks: Vec<Block> = Vec::new();
    let mut open: Option<Block> = None;

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = strip_comment(raw);
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let tcol = col_of(line, trimmed);
        if let Some(block) = open.as_mut() {
            if trimmed == "end" {
                blocks.push(open.take().expect("open block"));
                continue;
            }
            match block {
                Block::Branch(b) => {
                    if let Some((lhs, rhs)) = trimmed.split_once('=').filter(|(l, _)| l.trim_end().ends_with('\'')) {
                        let var = lhs.trim().trim_end_matches('\'').trim().to_string();
                        b.updates.push((var, rhs.to_string(), lineno, col_of(line, rhs)));
                    } else {
                        match key_value(line) {
                            Some(("guard", v, c)) => b.guard = Some((v.to_string(), lineno, c)),
                            Some(("mode", v, c)) => b.mode_to = Some((v.to_string(), lineno, c)),
                            _ => return Err(syntax(lineno, tcol, "expected `guard:`, `mode:`, `x' = ...` or `end`")),
                        }
                    }
                }
                Block::Post(p) => match key_value(line) {
                    Some(("at", v, c)) => p.at = Some((v.to_string(), lineno, c)),
                    Some(("guard", v, c)) => p.guard = Some((v.to_string(), lineno, c)),
                    Some(("outcome", v, c)) => p.outcomes.push((v.to_string(), lineno, c)),
                    _ => return Err(syntax(lineno, tcol, "expected `at:`, `guard:`, `outcome:` or `end`")),
                },
            }
            continue;
        }
        match trimmed {
            "branch" => {
                open = Some(Block::Branch(RawBranch { line: lineno, guard: None, updates: Vec::new(), mode_to: None }));
                continue;
            }
            "post" => {
                open = Some(Block::Post(RawPost { line: lineno, at: None, guard: None, outcomes: Vec::new() }));
                continue;
            }
            _ => {}
        }
        let Some((key, value, vcol)) = key_value(line) else {
            return Err(syntax(lineno, tcol, "expected `key: value`, `branch` or `post`"));
        };
        match key {
            "name" => name = value.to_string(),
            "state" => vars = Some(parse_names(value, lineno, vcol)?),
            "modes" => modes = Some(parse_names(value, lineno, vcol)?),
            "init" => init = Some((value.to_string(), lineno, vcol)),
            "init_mode" => init_mode = Some((value.to_string(), lineno, vcol)),
            "disturbance" => dist_lines.push(parse_disturbance(value, lineno, vcol)?),
            "control" => controls_raw.push((value.to_string(), lineno, vcol)),
            "constraint" => constraints_raw.push((value.to_string(), lineno, vcol)),
            other => return Err(syntax(lineno, tcol, format!("unknown key `{other}`"))),
        }
    }
    if open.is_some() {
        return Err(syntax(text.lines().count(), 1, "unterminated block (missing `end`)"));
    }

    let vars = vars.ok_or_else(|| syntax(1, 1, "missing `state:` line"))?;
    let modes = modes.unwrap_or_else(|| vec!["main".to_string()]);
    let mut seen = BTreeSet::new();
    for n in vars.iter().chain(dist_lines.iter().map(|(n, _)| n)) {
        if RESERVED.contains(&n.as_str()) {
            return Err(syntax(1, 1, format!("`{n}` is a reserved word")));
        }
        if !seen.insert(n.clone()) {
            return Err(syntax(1, 1, format!("name `{n}` declared twice")));
        }
    }
    let disturbance = combine_disturbances(dist_lines)?;

    let mut controls = Vec::new();
    for (text, line, col) in &controls_raw {
        let (n, range) = text.split_once(" in ").ok_or_else(|| syntax(*line, *col, "expected `name in [lo, hi]`"))?;
        let n = n.trim();
        if !is_ident(n) || seen.contains(n) || RESERVED.contains(&n) {
            return Err(syntax(*line, *col, format!("bad or duplicate control name `{n}`")));
        }
        seen.insert(n.to_string());
        let inner = range
            .trim()
            .strip_prefix('[')
            .and_then(|r| r.strip_suffix(']'))
            .ok_or_else(|| syntax(*line, *col, "expected `[lo, hi]`"))?;
        let (lo, hi) = inner.split_once(',').ok_or_else(|| syntax(*line, *col, "expected `[lo, hi]`"))?;
        let lo = rational_at(lo, *line, *col)?;
        let hi = rational_at(hi, *line, *col)?;
        if lo > hi {
            return Err(syntax(*line, *col, "empty control range"));
        }
        controls.push(ControlParam { param: Param::new(n, ParamKind::Control), lo, hi });
    }

    let mut model = StochModel {
        name,
        init_state: vec![Rational::zero(); vars.len()],
        vars,
        init_mode: modes[0].clone(),
        modes,
        disturbance,
        controls,
        constraints: Vec::new(),
        branches: Vec::new(),
        manual_post: None,
        cover: CoverStatus::Verified,
    };
    let scope = model.scope();

    if let Some((text, line, col)) = init {
        let mut assigned = vec![false; model.dim()];
        for part in text.split(',') {
            let (n, v) = part.split_once('=').ok_or_else(|| syntax(line, col, "expected `var = value`"))?;
            let i = model
                .vars
                .iter()
                .position(|x| x == n.trim())
                .ok_or_else(|| syntax(line, col, format!("unknown state variable `{}`", n.trim())))?;
            model.init_state[i] = rational_at(v, line, col)?;
            assigned[i] = true;
        }
        if let Some(i) = assigned.iter().position(|a| !a) {
            return Err(syntax(line, col, format!("no initial value for `{}`", model.vars[i])));
        }
    } else {
        return Err(syntax(1, 1, "missing `init:` line"));
    }
    if let Some((m, line, col)) = init_mode {
        if !model.modes.contains(&m) {
            return Err(syntax(line, col, format!("unknown mode `{m}`")));
        }
        model.init_mode = m;
    }

    let mut control_scope = Scope::new();
    for c in &model.controls {
        control_scope.bind(c.param.name(), Symbol::Param(c.param.clone()));
    }
    for (text, line, col) in &constraints_raw {
        let g = parse_atoms(text, &control_scope).map_err(|e| lift(*line, *col - 1, e))?;
        model.constraints.extend(g.atoms);
    }

    let mut manual = Vec::new();
    for block in blocks {
        match block {
            Block::Branch(rb) => model.branches.push(build_branch(&model, &scope, rb)?),
            Block::Post(rp) => manual.push(build_post(&model, &scope, rp)?),
        }
    }
    if model.branches.is_empty() {
        return Err(syntax(1, 1, "model has no branches"));
    }
    if !manual.is_empty() {
        model.manual_post = Some(manual);
    }
    model.cover = model.check_cover()?;
    Ok(model)
}

fn build_branch(model: &StochModel, scope: &Scope, rb: RawBranch) -> Result<Branch, ModelError> {
    let guard = match &rb.guard {
        Some((g, line, col)) => parse_atoms(g, scope).map_err(|e| lift(*line, *col - 1, e))?,
        None => Guard::top(),
    };
    for a in &guard.atoms {
        if a.form.mentions_kind(ParamKind::Disturbance) {
            return Err(syntax(rb.line, 1, "branch guards may not mention disturbances"));
        }
    }
    let mut update: Vec<Option<LinForm>> = vec![None; model.dim()];
    for (var, rhs, line, col) in &rb.updates {
        let i = model
            .vars
            .iter()
            .position(|v| v == var)
            .ok_or_else(|| syntax(*line, 1, format!("unknown state variable `{var}`")))?;
        if update[i].is_some() {
            return Err(syntax(*line, 1, format!("`{var}'` assigned twice")));
        }
        update[i] = Some(parse_expr(rhs, scope).map_err(|e| lift(*line, *col - 1, e))?);
    }
    let update = update.into_iter().enumerate().map(|(i, u)| u.unwrap_or_else(|| LinForm::var(i))).collect();
    let mode_to = match rb.mode_to {
        Some((m, line, col)) => {
            if !model.modes.contains(&m) {
                return Err(syntax(line, col, format!("unknown mode `{m}`")));
            }
            Some(m)
        }
        None => None,
    };
    Ok(Branch { guard, update, mode_to, line: rb.line })
}

fn parse_location(
    text: &str,
    line: usize,
    col: usize,
    model: &StochModel,
) -> Result<(Option<String>, Option<String>), ModelError> {
    let (q, m) = match text.split_once('@') {
        Some((q, m)) => (q.trim(), Some(m.trim())),
        None => (text.trim(), None),
    };
    let state = if q == "*" {
        None
    } else if is_ident(q) {
        Some(q.to_string())
    } else {
        return Err(syntax(line, col, format!("bad automaton state `{q}`")));
    };
    let mode = match m {
        None | Some("*") => None,
        Some(m) if model.modes.iter().any(|x| x == m) => Some(m.to_string()),
        Some(m) => return Err(syntax(line, col, format!("unknown mode `{m}`"))),
    };
    Ok((state, mode))
}

fn build_post(model: &StochModel, scope: &Scope, rp: RawPost) -> Result<ManualPiece, ModelError> {
    let (at_text, at_line, at_col) = rp.at.ok_or_else(|| syntax(rp.line, 1, "post block needs `at:`"))?;
    let (at_state, at_mode) = parse_location(&at_text, at_line, at_col, model)?;
    let guard = match &rp.guard {
        Some((g, line, col)) => parse_atoms(g, scope).map_err(|e| lift(*line, *col - 1, e))?,
        None => Guard::top(),
    };
    if !guard.is_param_free() {
        return Err(syntax(rp.line, 1, "post guards must be parameter-free"));
    }
    let mut outcomes = Vec::new();
    let mut total = Rational::zero();
    for (text, line, col) in &rp.outcomes {
        let (prob, rest) =
            text.split_once("->").ok_or_else(|| syntax(*line, *col, "expected `p -> q @ mode : x' = ...`"))?;
        let prob = rational_at(prob, *line, *col)?;
        if !prob.is_positive() {
            return Err(ModelError::Probability(format!("at line {line} must be positive")));
        }
        total += &prob;
        let (loc, assigns) = rest.split_once(':').unwrap_or((rest, ""));
        let (target_state, target_mode) = parse_location(loc, *line, *col, model)?;
        let target_state = target_state.ok_or_else(|| syntax(*line, *col, "outcome target must name a state"))?;
        let target_mode = match (target_mode, &at_mode) {
            (Some(m), _) => m,
            (None, Some(m)) => m.clone(),
            (None, None) if model.modes.len() == 1 => model.modes[0].clone(),
            (None, None) => return Err(syntax(*line, *col, "outcome target must name a mode")),
        };
        let mut image: Vec<Option<LinForm>> = vec![None; model.dim()];
        for assign in assigns.split(',').filter(|a| !a.trim().is_empty()) {
            let (lhs, rhs) = assign.split_once('=').ok_or_else(|| syntax(*line, *col, "expected `x' = expr`"))?;
            let var = lhs.trim().trim_end_matches('\'');
            let i = model
                .vars
                .iter()
                .position(|v| v == var)
                .ok_or_else(|| syntax(*line, *col, format!("unknown state variable `{var}`")))?;
            let e = parse_expr(rhs, scope).map_err(|e| lift(*line, col_of(text, rhs) + *col - 2, e))?;
            if !e.is_param_free() {
                return Err(syntax(*line, *col, "manual post images must be parameter-free"));
            }
            image[i] = Some(e);
        }
        let image = image.into_iter().enumerate().map(|(i, u)| u.unwrap_or_else(|| LinForm::var(i))).collect();
        outcomes.push(PostOutcome { prob, target_state, target_mode, image });
    }
    if !total.is_one() {
        return Err(ModelError::Probability(format!(
            "of the post block at line {} sum to {} instead of 1",
            rp.line,
            fmt_rational(&total)
        )));
    }
    Ok(ManualPiece { at_state, at_mode, guard, outcomes, line: rp.line })
}
