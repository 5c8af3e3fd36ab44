//! Exact re-check of a concrete certificate.
//!
//! The conditions are re-derived from the model and automaton directly: for
//! every location, enabled branch, automaton edge and disturbance outcome
//! the successor is computed by substitution, and each condition is checked
//! by asking the simplex whether its negation has a solution. Premise atoms
//! keep their original strictness, so no relaxation is involved.

use std::fmt;

use num_traits::{One, Signed};

use super::{Certificate, CheckError};
use crate::automata::{GuardedDsa, StateClass};
use crate::expr::{fmt_rational, Atom, LinForm, ParamKind, Rational, Valuation};
use crate::model::{DisturbanceKind, StochModel};
use crate::region::{find_gap, find_overlap, fmt_point, Region};
use crate::templates::{loc_name, locations, Loc};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// `init`, `consecution`, `nonnegativity`, `decrease`, `bounded-increase`,
    /// `non-increase`, `branch-cover` or `side`.
    pub condition: String,
    pub pair: Option<usize>,
    pub location: String,
    pub state: Vec<Rational>,
    pub disturbance: Option<Vec<Rational>>,
    pub branch_line: Option<usize>,
    pub edge_line: Option<usize>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} violated", self.condition)?;
        if let Some(p) = self.pair {
            write!(f, " for pair {p}")?;
        }
        if !self.location.is_empty() {
            write!(f, " at {}", self.location)?;
        }
        if !self.message.is_empty() {
            write!(f, ": {}", self.message)?;
        }
        if let Some(b) = self.branch_line {
            write!(f, " (branch line {b}")?;
            if let Some(e) = self.edge_line {
                write!(f, ", edge line {e}")?;
            }
            write!(f, ")")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CheckOutcome {
    Valid,
    Invalid(Box<Violation>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckReport {
    pub outcome: CheckOutcome,
    /// Number of negated conditions decided.
    pub queries: usize,
}

impl CheckReport {
    pub fn is_valid(&self) -> bool {
        self.outcome == CheckOutcome::Valid
    }
}

struct Ctx<'a> {
    cert: &'a Certificate,
    model: &'a StochModel,
    dsa: GuardedDsa,
    queries: usize,
}

enum Stop {
    Violation(Box<Violation>),
    Error(CheckError),
}

impl From<Box<Violation>> for Stop {
    fn from(v: Box<Violation>) -> Self {
        Stop::Violation(v)
    }
}

impl From<CheckError> for Stop {
    fn from(e: CheckError) -> Self {
        Stop::Error(e)
    }
}

impl From<crate::expr::ExprError> for Stop {
    fn from(e: crate::expr::ExprError) -> Self {
        Stop::Error(e.into())
    }
}

type Found = Result<(), Stop>;

fn concrete_atoms(atoms: &[Atom], val: &Valuation) -> Vec<Atom> {
    atoms.iter().map(|a| Atom { form: a.form.partial_eval(val), rel: a.rel }).collect()
}

/// `form > 0`.
fn positive(form: LinForm) -> Atom {
    Atom::lt(-form)
}

impl Ctx<'_> {
    fn name(&self, loc: Loc) -> String {
        loc_name(self.model, &self.dsa, loc)
    }

    fn inv_atoms(&self, loc: Loc) -> Vec<Atom> {
        self.cert.invariant[&loc].iter().cloned().map(Atom::le).collect()
    }

    /// A point of the conjunction over `nvars` columns, if any.
    fn solve(&mut self, nvars: usize, atoms: Vec<Atom>) -> Option<Vec<Rational>> {
        self.queries += 1;
        Region::new(nvars, atoms).witness()
    }

    fn side(&self) -> Found {
        let fail = |msg: String| -> Found {
            Err(Stop::Violation(Box::new(Violation {
                condition: "side".into(),
                pair: None,
                location: String::new(),
                state: Vec::new(),
                disturbance: None,
                branch_line: None,
                edge_line: None,
                message: msg,
            })))
        };
        if !self.cert.epsilon.is_positive() {
            return fail(format!("epsilon = {} is not positive", fmt_rational(&self.cert.epsilon)));
        }
        for (i, p) in self.cert.pairs.iter().enumerate() {
            if p.bound.is_negative() {
                return fail(format!("bound of pair {i} is negative"));
            }
        }
        for c in &self.model.controls {
            match self.cert.controls.get(c.param.name()) {
                None => return fail(format!("no value for control parameter `{}`", c.param.name())),
                Some(v) if *v < c.lo || *v > c.hi => {
                    return fail(format!("control `{}` = {} outside its range", c.param.name(), fmt_rational(v)))
                }
                Some(_) => {}
            }
        }
        for a in &self.model.constraints {
            let v = a.form.partial_eval(&self.cert.controls);
            let holds = v.constant_term().as_constant().map(|c| a.holds(&c)).unwrap_or(false);
            if !holds || !v.is_state_free() {
                return fail(format!("control constraint `{}` fails", a.form));
            }
        }
        Ok(())
    }

    fn init(&self) -> Found {
        let m = self.model.modes.iter().position(|m| *m == self.model.init_mode).expect("init mode");
        let loc = (self.dsa.init, m);
        if self.cert.in_invariant(loc, &self.model.init_state) {
            return Ok(());
        }
        Err(Box::new(Violation {
            condition: "init".into(),
            pair: None,
            location: self.name(loc),
            state: self.model.init_state.clone(),
            disturbance: None,
            branch_line: None,
            edge_line: None,
            message: format!(
                "initial state {} is outside the invariant",
                fmt_point(&self.model.vars, &self.model.init_state)
            ),
        })
        .into())
    }

    /// For parameter-dependent branch guards, the concrete guards must still
    /// select exactly one branch at every invariant state.
    fn branch_cover(&mut self) -> Found {
        if !self.model.has_parametric_guards() {
            return Ok(());
        }
        let dim = self.model.dim();
        for loc in locations(self.model, &self.dsa) {
            let mode = &self.model.modes[loc.1];
            let within = Region::new(dim, self.inv_atoms(loc));
            let regions: Vec<Region> = self
                .model
                .branches_in_mode(mode)
                .map(|(_, b)| Region::new(dim, concrete_atoms(&b.guard.atoms, &self.cert.controls)))
                .collect();
            self.queries += 1;
            let regions_in: Vec<Region> = regions.iter().map(|r| r.with(within.atoms.iter().cloned())).collect();
            let problem = find_overlap(&regions_in)
                .map(|(_, _, p)| (p, "two branches are enabled"))
                .or_else(|| find_gap(&within, &regions).map(|p| (p, "no branch is enabled")));
            if let Some((p, msg)) = problem {
                return Err(Box::new(Violation {
                    condition: "branch-cover".into(),
                    pair: None,
                    location: self.name(loc),
                    state: p.clone(),
                    disturbance: None,
                    branch_line: None,
                    edge_line: None,
                    message: format!("{msg} at {}", fmt_point(&self.model.vars, &p)),
                })
                .into());
            }
        }
        Ok(())
    }

    /// Disturbance outcomes: finite support points, or the box as extra
    /// columns for consecution and its mean for expectations.
    fn transitions(&mut self) -> Found {
        let dim = self.model.dim();
        let controls = self.cert.controls.clone();
        for loc in locations(self.model, &self.dsa) {
            let (q, m) = loc;
            let mode = self.model.modes[m].clone();
            let inv = self.inv_atoms(loc);
            if Region::new(dim, inv.clone()).is_empty() {
                continue;
            }
            for pair in 0..self.cert.pairs.len() {
                self.nonnegative(pair, loc, &inv)?;
            }
            let branches: Vec<usize> = self.model.branches_in_mode(&mode).map(|(i, _)| i).collect();
            let edges: Vec<usize> = (0..self.dsa.transitions.len())
                .filter(|&e| self.dsa.transitions[e].source == q && self.dsa.transitions[e].guard.modes.contains(&mode))
                .collect();
            for &b in &branches {
                let branch = &self.model.branches[b];
                let guard = concrete_atoms(&branch.guard.atoms, &controls);
                let tm = self.model.modes.iter().position(|x| x == branch.target_mode(&mode)).expect("mode");
                for &e in &edges {
                    let t = self.dsa.transitions[e].clone();
                    let base: Vec<Atom> = inv.iter().chain(&guard).chain(&t.guard.atoms).cloned().collect();
                    if self.solve(dim, base.clone()).is_none() {
                        continue;
                    }
                    let site = Site { loc, target: (t.target, tm), branch: b, edge: e };
                    self.consecution(&site, &base)?;
                    for pair in 0..self.cert.pairs.len() {
                        self.drift(pair, &site, &base)?;
                    }
                }
            }
        }
        Ok(())
    }

    fn violation(
        &self,
        condition: &str,
        pair: Option<usize>,
        site: &Site,
        point: &[Rational],
        w: Option<Vec<Rational>>,
        msg: String,
    ) -> Box<Violation> {
        Box::new(Violation {
            condition: condition.into(),
            pair,
            location: self.name(site.loc),
            state: point[..self.model.dim()].to_vec(),
            disturbance: w,
            branch_line: Some(self.model.branches[site.branch].line),
            edge_line: Some(self.dsa.transitions[site.edge].line),
            message: msg,
        })
    }

    /// Update of `branch` under the certificate's controls with the
    /// disturbance fixed to `w`.
    fn image(&self, branch: usize, w: &[Rational]) -> Vec<LinForm> {
        let val = self.cert.controls.merged(&self.model.disturbance.valuation(w));
        self.model.branches[branch].update.iter().map(|f| f.partial_eval(&val)).collect()
    }

    /// Update with box disturbances as columns `dim..`.
    fn lifted_image(&self, branch: usize) -> Result<Vec<LinForm>, CheckError> {
        let dim = self.model.dim();
        let mut out = Vec::new();
        for f in &self.model.branches[branch].update {
            let mut g = f.partial_eval(&self.cert.controls);
            for (j, p) in self.model.disturbance.params.iter().enumerate() {
                g = g.lift_param_to_var(p, dim + j)?;
            }
            if !g.is_param_free() {
                return Err(CheckError::Unsupported("update is not affine in the disturbance".into()));
            }
            out.push(g);
        }
        Ok(out)
    }

    fn consecution(&mut self, site: &Site, base: &[Atom]) -> Found {
        let dim = self.model.dim();
        let rows = self.cert.invariant[&site.target].clone();
        let msg = |me: &Ctx, p: &[Rational], r: usize| {
            format!(
                "successor of {} leaves row {r} of the invariant at {}",
                fmt_point(&me.model.vars, &p[..dim]),
                me.name(site.target)
            )
        };
        match &self.model.disturbance.kind {
            DisturbanceKind::Finite(points) => {
                for (w, _) in points.clone() {
                    let image = self.image(site.branch, &w);
                    for (r, row) in rows.iter().enumerate() {
                        let next = row.substitute_state(&image)?;
                        let mut atoms = base.to_vec();
                        atoms.push(positive(next));
                        if let Some(p) = self.solve(dim, atoms) {
                            let m = msg(self, &p, r);
                            return Err(Stop::Violation(self.violation(
                                "consecution",
                                None,
                                site,
                                &p,
                                Some(w.clone()),
                                m,
                            )));
                        }
                    }
                }
            }
            DisturbanceKind::Box { lo, hi, .. } => {
                let image = self.lifted_image(site.branch)?;
                let mut bounds = Vec::new();
                for (j, (l, h)) in lo.iter().zip(hi).enumerate() {
                    let w = LinForm::var(dim + j);
                    bounds.push(Atom::le(&LinForm::rational(l.clone()) - &w));
                    bounds.push(Atom::le(&w - &LinForm::rational(h.clone())));
                }
                let nvars = dim + lo.len();
                for (r, row) in rows.iter().enumerate() {
                    let next = row.substitute_state(&image)?;
                    let mut atoms: Vec<Atom> = base.iter().chain(&bounds).cloned().collect();
                    atoms.push(positive(next));
                    if let Some(p) = self.solve(nvars, atoms) {
                        let m = msg(self, &p, r);
                        let w = p[dim..].to_vec();
                        return Err(Stop::Violation(self.violation("consecution", None, site, &p, Some(w), m)));
                    }
                }
            }
        }
        Ok(())
    }

    fn nonnegative(&mut self, pair: usize, loc: Loc, inv: &[Atom]) -> Found {
        let dim = self.model.dim();
        let pieces = self.cert.pairs[pair].pieces[&loc].clone();
        for (k, vp) in pieces.iter().enumerate() {
            let mut atoms: Vec<Atom> = inv.iter().chain(&vp.guard).cloned().collect();
            atoms.push(Atom::lt(vp.form.clone()));
            if let Some(p) = self.solve(dim, atoms) {
                return Err(Box::new(Violation {
                    condition: "nonnegativity".into(),
                    pair: Some(pair),
                    location: self.name(loc),
                    state: p.clone(),
                    disturbance: None,
                    branch_line: None,
                    edge_line: None,
                    message: format!("piece {k} is negative at {}", fmt_point(&self.model.vars, &p)),
                })
                .into());
            }
        }
        Ok(())
    }

    /// Expected successor value of pair `pair`'s certificate: a list of
    /// (extra guard atoms, expectation form) covering all successor-piece
    /// combinations.
    fn expectation(&self, pair: usize, site: &Site) -> Result<Vec<(Vec<Atom>, LinForm)>, Stop> {
        let target = &self.cert.pairs[pair].pieces[&site.target];
        let outcomes: Vec<(Vec<Rational>, Rational)> = match &self.model.disturbance.kind {
            DisturbanceKind::Finite(points) => points.clone(),
            DisturbanceKind::Box { mean, .. } => {
                if target.len() > 1 {
                    return Err(CheckError::Unsupported("piecewise certificates with a box disturbance".into()).into());
                }
                // Expectation of an affine function of a disturbance that
                // enters affinely is its value at the mean.
                self.lifted_image(site.branch)?;
                vec![(mean.clone(), Rational::one())]
            }
        };
        let mut combos: Vec<(Vec<Atom>, LinForm)> = vec![(Vec::new(), LinForm::zero())];
        for (w, prob) in &outcomes {
            let image = self.image(site.branch, w);
            let mut next = Vec::new();
            for (guard, acc) in &combos {
                for vp in target {
                    let mut g = guard.clone();
                    for a in &vp.guard {
                        let form = a.form.substitute_state(&image)?;
                        g.push(Atom { form, rel: a.rel });
                    }
                    let value = vp.form.substitute_state(&image)?;
                    next.push((g, acc + &value.scale_rational(prob)));
                }
            }
            combos = next;
        }
        Ok(combos)
    }

    fn drift(&mut self, pair: usize, site: &Site, base: &[Atom]) -> Found {
        let dim = self.model.dim();
        let class = self.dsa.classify(pair, site.loc.0);
        let (condition, slack) = match class {
            StateClass::Decrease => ("decrease", LinForm::rational(self.cert.epsilon.clone())),
            StateClass::Bounded => ("bounded-increase", LinForm::rational(-self.cert.pairs[pair].bound.clone())),
            StateClass::NonIncrease => ("non-increase", LinForm::zero()),
        };
        let combos = self.expectation(pair, site)?;
        let pieces = self.cert.pairs[pair].pieces[&site.loc].clone();
        for vp in &pieces {
            for (guard, post) in &combos {
                // post - V + slack <= 0 must hold; look for a point where it fails.
                let excess = &(post - &vp.form) + &slack;
                let mut atoms: Vec<Atom> = base.iter().chain(&vp.guard).chain(guard).cloned().collect();
                atoms.push(positive(excess.clone()));
                if let Some(p) = self.solve(dim, atoms) {
                    let empty = Valuation::new();
                    let post_v = post.eval(&empty, &p).expect("concrete");
                    let v = vp.form.eval(&empty, &p).expect("concrete");
                    let msg = format!(
                        "at {}: expected successor value {} against current value {}",
                        fmt_point(&self.model.vars, &p),
                        fmt_rational(&post_v),
                        fmt_rational(&v)
                    );
                    return Err(Stop::Violation(self.violation(condition, Some(pair), site, &p, None, msg)));
                }
            }
        }
        Ok(())
    }
}

struct Site {
    loc: Loc,
    target: Loc,
    branch: usize,
    edge: usize,
}

/// Checks every condition of a concrete certificate exactly. Returns the
/// first violated condition with a witness state.
pub fn symbolic_check(cert: &Certificate, model: &StochModel, base: &GuardedDsa) -> Result<CheckReport, CheckError> {
    if !cert.is_concrete() {
        return Err(CheckError::Format("certificate still mentions parameters".into()));
    }
    let dsa = cert.automaton(base);
    if cert.pairs.len() != dsa.pairs.len() {
        return Err(CheckError::Mismatch(format!(
            "{} certificate pairs for an automaton with {} pairs",
            cert.pairs.len(),
            dsa.pairs.len()
        )));
    }
    if model.disturbance.params.iter().any(|p| p.kind() != ParamKind::Disturbance) {
        return Err(CheckError::Mismatch("malformed disturbance".into()));
    }
    let mut ctx = Ctx { cert, model, dsa, queries: 0 };
    let result = ctx.side().and_then(|_| ctx.init()).and_then(|_| ctx.branch_cover()).and_then(|_| ctx.transitions());
    let outcome = match result {
        Ok(()) => CheckOutcome::Valid,
        Err(Stop::Violation(v)) => CheckOutcome::Invalid(v),
        Err(Stop::Error(e)) => return Err(e),
    };
    Ok(CheckReport { outcome, queries: ctx.queries })
}
