//! Monte-Carlo simulation of the product process with exact arithmetic.
//!
//! Every trajectory draws from its own ChaCha8 stream derived from
//! `(seed, trajectory index)`, so reports are reproducible and trajectories
//! can be split across threads. Finite disturbances are sampled exactly by
//! drawing an integer below the common denominator of the probabilities.
//! Box disturbances are sampled uniformly from a grid of `2^32 + 1` points
//! per coordinate.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use num_bigint::{BigInt, Sign};
use num_integer::Integer;
use num_rational::Ratio;
use num_traits::{CheckedAdd, CheckedMul, CheckedSub, One, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Certificate, CheckError};
use crate::automata::{GuardedDsa, StateClass};
use crate::expr::{fmt_rational, Atom, ExprError, LinForm, Poly, Rational, Rel, Valuation};
use crate::model::{DisturbanceKind, ModelError, StochModel};
use crate::templates::{loc_name, Loc};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimOptions {
    pub trajectories: usize,
    pub horizon: usize,
    pub seed: u64,
    /// A trajectory is suspect when it has at least this many `A` visits
    /// after its last `B` visit.
    pub suspect_after: u64,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions { trajectories: 1000, horizon: 1000, seed: 0, suspect_after: 50 }
    }
}

/// Visit counts of one Streett pair, one entry per trajectory.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PairStats {
    pub a_visits: Vec<u64>,
    pub b_visits: Vec<u64>,
    pub suspect: usize,
}

/// Drift residuals `Post V - V` observed at one location.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocationResidual {
    pub location: String,
    pub class: StateClass,
    pub visits: u64,
    pub max_residual: Option<Rational>,
    /// Visits whose residual exceeds the location's obligation.
    pub violations: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimReport {
    pub options: SimOptions,
    pub pairs: Vec<PairStats>,
    /// Per pair, per visited location; empty without a certificate.
    pub residuals: Vec<Vec<LocationResidual>>,
    pub invariant_violations: u64,
    pub first_invariant_violation: Option<String>,
}

impl SimReport {
    pub fn drift_violations(&self) -> u64 {
        self.residuals.iter().flatten().map(|r| r.violations).sum()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let pairs: Vec<serde_json::Value> = self
            .pairs
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let residuals: Vec<serde_json::Value> = self
                    .residuals
                    .get(i)
                    .into_iter()
                    .flatten()
                    .map(|r| {
                        serde_json::json!({
                            "location": r.location,
                            "class": r.class.to_string(),
                            "visits": r.visits,
                            "max_residual": r.max_residual.as_ref().map(fmt_rational),
                            "violations": r.violations,
                        })
                    })
                    .collect();
                serde_json::json!({
                    "pair": i,
                    "a_visits": p.a_visits,
                    "b_visits": p.b_visits,
                    "suspect": p.suspect,
                    "residuals": residuals,
                })
            })
            .collect();
        serde_json::json!({
            "trajectories": self.options.trajectories,
            "horizon": self.options.horizon,
            "seed": self.options.seed,
            "suspect_after": self.options.suspect_after,
            "invariant_violations": self.invariant_violations,
            "first_invariant_violation": self.first_invariant_violation,
            "drift_violations": self.drift_violations(),
            "pairs": pairs,
        })
    }
}

impl fmt::Display for SimReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let o = &self.options;
        writeln!(f, "{} trajectories, horizon {}, seed {}", o.trajectories, o.horizon, o.seed)?;
        writeln!(f, "{:<6} {:>12} {:>12} {:>8}", "pair", "mean A", "mean B", "suspect")?;
        for (i, p) in self.pairs.iter().enumerate() {
            let mean = |v: &[u64]| if v.is_empty() { 0.0 } else { v.iter().sum::<u64>() as f64 / v.len() as f64 };
            writeln!(f, "{:<6} {:>12.2} {:>12.2} {:>8}", i, mean(&p.a_visits), mean(&p.b_visits), p.suspect)?;
        }
        for (i, rs) in self.residuals.iter().enumerate() {
            for r in rs {
                let max = r.max_residual.as_ref().map(fmt_rational).unwrap_or_else(|| "-".into());
                writeln!(
                    f,
                    "pair {i} at {}: {} visits, {} obligation, max residual {max}, {} violations",
                    r.location, r.visits, r.class, r.violations
                )?;
            }
        }
        write!(f, "invariant violations: {}", self.invariant_violations)?;
        if let Some(v) = &self.first_invariant_violation {
            write!(f, " (first: {v})")?;
        }
        Ok(())
    }
}

/// An exact rational that stays on machine words until an operation
/// overflows, then continues as a big rational.
#[derive(Debug, Clone)]
enum Num {
    Small(Ratio<i64>),
    Big(Rational),
}

impl Num {
    fn new(r: &Rational) -> Num {
        match (r.numer().to_i64(), r.denom().to_i64()) {
            (Some(n), Some(d)) => Num::Small(Ratio::new_raw(n, d)),
            _ => Num::Big(r.clone()),
        }
    }

    fn exact(&self) -> Rational {
        match self {
            Num::Small(r) => Rational::new_raw((*r.numer()).into(), (*r.denom()).into()),
            Num::Big(r) => r.clone(),
        }
    }

    fn add(&self, other: &Num) -> Num {
        if let (Num::Small(a), Num::Small(b)) = (self, other) {
            if let Some(c) = a.checked_add(b) {
                return Num::Small(c);
            }
        }
        Num::new(&(self.exact() + other.exact()))
    }

    fn sub(&self, other: &Num) -> Num {
        if let (Num::Small(a), Num::Small(b)) = (self, other) {
            if let Some(c) = a.checked_sub(b) {
                return Num::Small(c);
            }
        }
        Num::new(&(self.exact() - other.exact()))
    }

    fn mul(&self, other: &Num) -> Num {
        if let (Num::Small(a), Num::Small(b)) = (self, other) {
            if let Some(c) = a.checked_mul(b) {
                return Num::Small(c);
            }
        }
        Num::new(&(self.exact() * other.exact()))
    }

    fn sign(&self) -> Ordering {
        match self {
            Num::Small(r) => r.numer().cmp(&0),
            Num::Big(r) => r.numer().sign().cmp(&Sign::NoSign),
        }
    }

    fn gt(&self, other: &Num) -> bool {
        self.sub(other).sign() == Ordering::Greater
    }
}

fn nums(x: &[Rational]) -> Vec<Num> {
    x.iter().map(Num::new).collect()
}

fn exacts(x: &[Num]) -> Vec<Rational> {
    x.iter().map(Num::exact).collect()
}

/// A parameter-free affine form with a dense term list.
#[derive(Debug, Clone)]
struct Affine {
    terms: Vec<(usize, Num)>,
    constant: Num,
}

impl Affine {
    fn compile(f: &LinForm, val: &Valuation) -> Result<Affine, CheckError> {
        let concrete = |p: &Poly| p.partial_eval(val).as_constant().ok_or_else(|| unbound(p));
        let mut terms = Vec::new();
        for (i, c) in f.var_terms() {
            let c = concrete(c)?;
            if !c.is_zero() {
                terms.push((i, Num::new(&c)));
            }
        }
        Ok(Affine { terms, constant: Num::new(&concrete(f.constant_term())?) })
    }

    fn eval(&self, x: &[Num]) -> Num {
        let mut acc = self.constant.clone();
        for (i, c) in &self.terms {
            acc = acc.add(&c.mul(&x[*i]));
        }
        acc
    }
}

fn unbound(p: &Poly) -> CheckError {
    let names: Vec<String> = p.params().iter().map(|q| q.name().to_string()).collect();
    CheckError::Expr(ExprError::Unbound(names.join(", ")))
}

/// A conjunction of compiled atoms.
#[derive(Debug, Clone)]
struct Cond(Vec<(Affine, Rel)>);

impl Cond {
    fn compile(atoms: &[Atom], val: &Valuation) -> Result<Cond, CheckError> {
        atoms.iter().map(|a| Ok((Affine::compile(&a.form, val)?, a.rel))).collect::<Result<_, _>>().map(Cond)
    }

    fn holds(&self, x: &[Num]) -> bool {
        self.0.iter().all(|(f, rel)| {
            let s = f.eval(x).sign();
            match rel {
                Rel::Le => s != Ordering::Greater,
                Rel::Lt => s == Ordering::Less,
                Rel::Eq => s == Ordering::Equal,
            }
        })
    }
}

/// Guarded affine pieces; the first piece whose guard holds applies.
type Pieces = Vec<(Cond, Affine)>;

#[derive(Debug, Clone)]
struct CompiledBranch {
    index: usize,
    guard: Cond,
    target_mode: usize,
    /// Successor images for each enumerated disturbance outcome.
    images: Vec<Vec<Affine>>,
    /// The update with controls fixed, for sampled box disturbances.
    update: Vec<LinForm>,
}

/// The product process with controls and certificate substituted into
/// dense affine forms. All arithmetic stays exact.
#[derive(Debug, Clone)]
pub struct Stepper<'a> {
    model: &'a StochModel,
    modes: usize,
    /// Probabilities of the enumerated disturbance outcomes: the support
    /// of a finite disturbance, or the mean of a box disturbance.
    weights: Vec<Num>,
    branches: Vec<Vec<CompiledBranch>>,
    /// Automaton edges indexed by `q * modes + m`.
    edges: Vec<Vec<(Cond, usize)>>,
    /// Certificate pieces per pair, indexed by `q * modes + m`.
    values: Vec<Vec<Option<Pieces>>>,
    invariant: Vec<Option<Vec<Affine>>>,
    controls: Valuation,
}

impl<'a> Stepper<'a> {
    /// Compiles the product of `model` and `dsa`. The certificate supplies
    /// the controls, pieces and invariant; without one the model must be
    /// control-free.
    pub fn new(model: &'a StochModel, dsa: &GuardedDsa, cert: Option<&Certificate>) -> Result<Stepper<'a>, CheckError> {
        let controls = cert.map(|c| c.controls.clone()).unwrap_or_default();
        let empty = Valuation::new();
        let modes = model.modes.len();
        let outcomes: Vec<(Vec<Rational>, Rational)> = match &model.disturbance.kind {
            DisturbanceKind::Finite(points) => points.clone(),
            DisturbanceKind::Box { mean, .. } => vec![(mean.clone(), Rational::one())],
        };
        let mode_index = |name: &str| model.modes.iter().position(|m| m == name).expect("declared mode");
        let mut branches = Vec::with_capacity(modes);
        for mode in &model.modes {
            let mut compiled = Vec::new();
            for (index, b) in model.branches_in_mode(mode) {
                let images = outcomes
                    .iter()
                    .map(|(w, _)| {
                        let val = controls.merged(&model.disturbance.valuation(w));
                        b.update.iter().map(|f| Affine::compile(f, &val)).collect::<Result<Vec<_>, _>>()
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                compiled.push(CompiledBranch {
                    index,
                    guard: Cond::compile(&b.guard.atoms, &controls)?,
                    target_mode: mode_index(b.target_mode(mode)),
                    images,
                    update: b.update.iter().map(|f| f.partial_eval(&controls)).collect(),
                });
            }
            branches.push(compiled);
        }
        let mut edges = Vec::with_capacity(dsa.states.len() * modes);
        for q in 0..dsa.states.len() {
            for mode in &model.modes {
                edges.push(
                    dsa.outgoing_in_mode(q, mode)
                        .map(|t| Ok((Cond::compile(&t.guard.atoms, &empty)?, t.target)))
                        .collect::<Result<Vec<_>, CheckError>>()?,
                );
            }
        }
        let slots = dsa.states.len() * modes;
        let slot = |(q, m): Loc| q * modes + m;
        let mut values = Vec::new();
        let mut invariant = vec![None; slots];
        if let Some(c) = cert {
            for p in &c.pairs {
                let mut per_loc = vec![None; slots];
                for (loc, pieces) in &p.pieces {
                    per_loc[slot(*loc)] = Some(
                        pieces
                            .iter()
                            .map(|v| Ok((Cond::compile(&v.guard, &empty)?, Affine::compile(&v.form, &empty)?)))
                            .collect::<Result<Vec<_>, CheckError>>()?,
                    );
                }
                values.push(per_loc);
            }
            for (loc, rows) in &c.invariant {
                invariant[slot(*loc)] =
                    Some(rows.iter().map(|r| Affine::compile(r, &empty)).collect::<Result<Vec<_>, _>>()?);
            }
        }
        let weights = outcomes.iter().map(|(_, p)| Num::new(p)).collect();
        Ok(Stepper { model, modes, weights, branches, edges, values, invariant, controls })
    }

    fn slot(&self, (q, m): Loc) -> usize {
        q * self.modes + m
    }

    fn branch(&self, m: usize, x: &[Num]) -> Result<&CompiledBranch, CheckError> {
        let mut found: Option<&CompiledBranch> = None;
        for b in &self.branches[m] {
            if b.guard.holds(x) {
                if let Some(prev) = found {
                    let branches = &self.model.branches;
                    return Err(ModelError::AmbiguousBranch(
                        branches[prev.index].line,
                        branches[b.index].line,
                        self.model.fmt_state(&exacts(x), &self.model.modes[m]),
                    )
                    .into());
                }
                found = Some(b);
            }
        }
        found.ok_or_else(|| ModelError::NoBranch(self.model.fmt_state(&exacts(x), &self.model.modes[m])).into())
    }

    fn next_q(&self, loc: Loc, x: &[Num]) -> usize {
        self.edges[self.slot(loc)]
            .iter()
            .find(|(g, _)| g.holds(x))
            .map(|(_, t)| *t)
            .expect("validated automaton is total")
    }

    fn value_at(&self, pair: usize, loc: Loc, x: &[Num]) -> Option<Num> {
        self.values[pair][self.slot(loc)].as_ref()?.iter().find(|(g, _)| g.holds(x)).map(|(_, f)| f.eval(x))
    }

    fn inside(&self, loc: Loc, x: &[Num]) -> bool {
        self.invariant[self.slot(loc)]
            .as_ref()
            .is_some_and(|rows| rows.iter().all(|r| r.eval(x).sign() != Ordering::Greater))
    }

    /// The successor location and the successor state for every enumerated
    /// disturbance outcome.
    fn successors(&self, loc: Loc, x: &[Num]) -> Result<(Loc, Vec<Vec<Num>>, &CompiledBranch), CheckError> {
        let b = self.branch(loc.1, x)?;
        let next = (self.next_q(loc, x), b.target_mode);
        let images = b.images.iter().map(|img| img.iter().map(|f| f.eval(x)).collect()).collect();
        Ok((next, images, b))
    }

    fn expectation(&self, pair: usize, next: Loc, images: &[Vec<Num>]) -> Result<Num, CheckError> {
        let mut total = Num::Small(Ratio::from_integer(0));
        for (y, p) in images.iter().zip(&self.weights) {
            let v = self.value_at(pair, next, y).ok_or_else(|| {
                let at = self.model.fmt_state(&exacts(y), &self.model.modes[next.1]);
                CheckError::Mismatch(format!("no certificate piece covers {at}"))
            })?;
            total = total.add(&v.mul(p));
        }
        Ok(total)
    }

    /// The certificate value of `pair` at `(loc, x)`, if a piece covers it.
    pub fn value(&self, pair: usize, loc: Loc, x: &[Rational]) -> Option<Rational> {
        self.value_at(pair, loc, &nums(x)).map(|v| v.exact())
    }

    pub fn in_invariant(&self, loc: Loc, x: &[Rational]) -> bool {
        self.inside(loc, &nums(x))
    }

    /// Expected certificate value of `pair` after one step from `x` at
    /// `loc`, by enumeration of the disturbance outcomes.
    pub fn post_value(&self, pair: usize, loc: Loc, x: &[Rational]) -> Result<Rational, CheckError> {
        let x = nums(x);
        let (next, images, _) = self.successors(loc, &x)?;
        Ok(self.expectation(pair, next, &images)?.exact())
    }
}

/// Expected value of pair `pair`'s certificate after one step from `state`
/// at `loc`, computed by direct enumeration of disturbance outcomes.
pub fn post_value(
    cert: &Certificate,
    model: &StochModel,
    dsa: &GuardedDsa,
    pair: usize,
    loc: Loc,
    state: &[Rational],
) -> Result<Rational, CheckError> {
    Stepper::new(model, dsa, Some(cert))?.post_value(pair, loc, state)
}

enum Draw {
    Outcome(usize),
    Point(Vec<Rational>),
}

enum Sampler {
    Finite { cumulative: Vec<u64>, denom: u64 },
    Grid { lo: Vec<Rational>, width: Vec<Rational> },
}

const GRID: u64 = 1 << 32;

impl Sampler {
    fn new(model: &StochModel) -> Result<Sampler, CheckError> {
        match &model.disturbance.kind {
            DisturbanceKind::Finite(points) => {
                let denom = points.iter().fold(BigInt::from(1), |acc, (_, p)| acc.lcm(p.denom()));
                let big =
                    denom.to_u64().ok_or_else(|| CheckError::Unsupported("probabilities too fine to sample".into()))?;
                let mut acc = 0u64;
                let mut cumulative = Vec::new();
                for (_, p) in points {
                    let share = (p * Rational::from_integer(denom.clone())).to_integer().to_u64().expect("fits");
                    acc += share;
                    cumulative.push(acc);
                }
                Ok(Sampler::Finite { cumulative, denom: big })
            }
            DisturbanceKind::Box { lo, hi, .. } => {
                let width = lo.iter().zip(hi).map(|(l, h)| (h - l) / Rational::from_integer(GRID.into())).collect();
                Ok(Sampler::Grid { lo: lo.clone(), width })
            }
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> Draw {
        match self {
            Sampler::Finite { cumulative, denom } => {
                let u = rng.gen_range(0..*denom);
                Draw::Outcome(cumulative.iter().position(|&c| u < c).expect("probabilities sum to one"))
            }
            Sampler::Grid { lo, width } => Draw::Point(
                lo.iter()
                    .zip(width)
                    .map(|(l, w)| l + w * Rational::from_integer(rng.gen_range(0..=GRID).into()))
                    .collect(),
            ),
        }
    }
}

/// Visits, maximum residual and violations per location.
type Tally = BTreeMap<Loc, (u64, Option<Rational>, u64)>;

struct Accum {
    a: Vec<Vec<u64>>,
    b: Vec<Vec<u64>>,
    suspect: Vec<usize>,
    residuals: Vec<Tally>,
    inv_violations: u64,
    first_inv: Option<(usize, String)>,
}

impl Accum {
    fn new(pairs: usize) -> Self {
        Accum {
            a: vec![Vec::new(); pairs],
            b: vec![Vec::new(); pairs],
            suspect: vec![0; pairs],
            residuals: vec![BTreeMap::new(); pairs],
            inv_violations: 0,
            first_inv: None,
        }
    }

    fn merge(&mut self, other: Accum) {
        for i in 0..self.a.len() {
            self.a[i].extend_from_slice(&other.a[i]);
            self.b[i].extend_from_slice(&other.b[i]);
            self.suspect[i] += other.suspect[i];
            for (loc, (n, max, v)) in &other.residuals[i] {
                let e = self.residuals[i].entry(*loc).or_insert((0, None, 0));
                e.0 += n;
                e.2 += v;
                if let Some(m) = max {
                    if e.1.as_ref().is_none_or(|cur| m > cur) {
                        e.1 = Some(m.clone());
                    }
                }
            }
        }
        self.inv_violations += other.inv_violations;
        if let Some((t, msg)) = other.first_inv {
            if self.first_inv.as_ref().is_none_or(|(s, _)| t < *s) {
                self.first_inv = Some((t, msg));
            }
        }
    }
}

fn run_range(
    stepper: &Stepper,
    dsa: &GuardedDsa,
    cert: Option<&Certificate>,
    opts: &SimOptions,
    sampler: &Sampler,
    range: std::ops::Range<usize>,
) -> Result<Accum, CheckError> {
    let model = stepper.model;
    let pairs = dsa.pairs.len();
    let mut acc = Accum::new(pairs);
    let init_m = model.modes.iter().position(|m| *m == model.init_mode).expect("init mode");
    let classes: Vec<Vec<StateClass>> =
        (0..pairs).map(|i| (0..dsa.states.len()).map(|q| dsa.classify(i, q)).collect()).collect();
    let bounds: Vec<Vec<Num>> = match cert {
        Some(c) => (0..pairs)
            .map(|i| {
                [StateClass::Decrease, StateClass::Bounded, StateClass::NonIncrease]
                    .iter()
                    .map(|k| match k {
                        StateClass::Decrease => Num::new(&-c.epsilon.clone()),
                        StateClass::Bounded => Num::new(&c.pairs[i].bound),
                        StateClass::NonIncrease => Num::Small(Ratio::from_integer(0)),
                    })
                    .collect()
            })
            .collect(),
        None => Vec::new(),
    };
    let bound_of = |i: usize, k: StateClass| match k {
        StateClass::Decrease => &bounds[i][0],
        StateClass::Bounded => &bounds[i][1],
        StateClass::NonIncrease => &bounds[i][2],
    };
    for t in range {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(t as u64);
        let mut x = nums(&model.init_state);
        let mut loc: Loc = (dsa.init, init_m);
        let mut max: Vec<BTreeMap<Loc, Num>> = vec![BTreeMap::new(); pairs];
        let mut a = vec![0u64; pairs];
        let mut b = vec![0u64; pairs];
        let mut a_since_b = vec![0u64; pairs];
        for step in 0..opts.horizon {
            for i in 0..pairs {
                match classes[i][loc.0] {
                    StateClass::Bounded => {
                        b[i] += 1;
                        a_since_b[i] = 0;
                        if dsa.pairs[i].a.contains(&loc.0) {
                            a[i] += 1;
                        }
                    }
                    StateClass::Decrease => {
                        a[i] += 1;
                        a_since_b[i] += 1;
                    }
                    StateClass::NonIncrease => {}
                }
            }
            let (next_loc, mut images, branch) = stepper.successors(loc, &x)?;
            if cert.is_some() {
                if !stepper.inside(loc, &x) {
                    acc.inv_violations += 1;
                    if acc.first_inv.is_none() {
                        let msg = format!(
                            "trajectory {t}, step {step}: {} at {}",
                            model.fmt_state(&exacts(&x), &model.modes[loc.1]),
                            loc_name(model, dsa, loc)
                        );
                        acc.first_inv = Some((t, msg));
                    }
                }
                for i in 0..pairs {
                    let Some(v) = stepper.value_at(i, loc, &x) else { continue };
                    let residual = stepper.expectation(i, next_loc, &images)?.sub(&v);
                    let e = acc.residuals[i].entry(loc).or_insert((0, None, 0));
                    e.0 += 1;
                    if residual.gt(bound_of(i, classes[i][loc.0])) {
                        e.2 += 1;
                    }
                    match max[i].get_mut(&loc) {
                        Some(m) if !residual.gt(m) => {}
                        Some(m) => *m = residual,
                        None => {
                            max[i].insert(loc, residual);
                        }
                    }
                }
            }
            x = match sampler.draw(&mut rng) {
                Draw::Outcome(k) => images.swap_remove(k),
                Draw::Point(w) => {
                    let val = stepper.controls.merged(&model.disturbance.valuation(&w));
                    let exact = exacts(&x);
                    let next = branch.update.iter().map(|f| f.eval(&val, &exact)).collect::<Result<Vec<_>, _>>()?;
                    nums(&next)
                }
            };
            loc = next_loc;
        }
        for (i, per_loc) in max.into_iter().enumerate() {
            for (l, m) in per_loc {
                let e = acc.residuals[i].get_mut(&l).expect("visited location");
                let m = m.exact();
                if e.1.as_ref().is_none_or(|cur| m > *cur) {
                    e.1 = Some(m);
                }
            }
        }
        for i in 0..pairs {
            acc.a[i].push(a[i]);
            acc.b[i].push(b[i]);
            if a_since_b[i] >= opts.suspect_after {
                acc.suspect[i] += 1;
            }
        }
    }
    Ok(acc)
}

/// Simulates `opts.trajectories` runs of the product process. With a
/// certificate, also records exact drift residuals and invariant
/// violations at every visited state; the certificate's controls and
/// automaton variant are used.
pub fn simulate(
    model: &StochModel,
    base: &GuardedDsa,
    cert: Option<&Certificate>,
    opts: &SimOptions,
) -> Result<SimReport, CheckError> {
    if model.has_controls() && cert.is_none() {
        return Err(CheckError::Mismatch("simulating a controlled model needs control values".into()));
    }
    let dsa = cert.map(|c| c.automaton(base)).unwrap_or_else(|| base.clone());
    let sampler = Sampler::new(model)?;
    let stepper = Stepper::new(model, &dsa, cert)?;
    let threads = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(opts.trajectories.max(1));
    let chunk = opts.trajectories.div_ceil(threads.max(1)).max(1);
    let ranges: Vec<std::ops::Range<usize>> =
        (0..opts.trajectories).step_by(chunk).map(|s| s..(s + chunk).min(opts.trajectories)).collect();
    let results: Vec<Result<Accum, CheckError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = ranges
            .into_iter()
            .map(|r| {
                let (dsa, sampler, stepper) = (&dsa, &sampler, &stepper);
                scope.spawn(move || run_range(stepper, dsa, cert, opts, sampler, r))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("simulation thread")).collect()
    });
    let mut total = Accum::new(dsa.pairs.len());
    for r in results {
        total.merge(r?);
    }
    let residuals = if cert.is_some() {
        total
            .residuals
            .iter()
            .enumerate()
            .map(|(i, m)| {
                m.iter()
                    .map(|(loc, (n, max, v))| LocationResidual {
                        location: loc_name(model, &dsa, *loc),
                        class: dsa.classify(i, loc.0),
                        visits: *n,
                        max_residual: max.clone(),
                        violations: *v,
                    })
                    .collect()
            })
            .collect()
    } else {
        Vec::new()
    };
    let pairs = (0..dsa.pairs.len())
        .map(|i| PairStats { a_visits: total.a[i].clone(), b_visits: total.b[i].clone(), suspect: total.suspect[i] })
        .collect();
    Ok(SimReport {
        options: opts.clone(),
        pairs,
        residuals,
        invariant_violations: total.inv_violations,
        first_invariant_violation: total.first_inv.map(|(_, m)| m),
    })
}
