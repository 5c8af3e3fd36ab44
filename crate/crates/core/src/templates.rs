//! Certificate and invariant templates over product locations, and the
//! symbolic post-expectation of a certificate template.
//!
//! A product location is a pair (automaton state, model mode). Each location
//! carries one affine certificate piece by default; [`PieceMode`] can split a
//! location along parameter-free automaton-edge and/or model-branch guards.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use num_traits::{One, Zero};
use thiserror::Error;

use crate::automata::GuardedDsa;
use crate::expr::{
    parse_atoms, Atom, ExprError, Guard, LinForm, Param, ParamKind, Poly, Rational, Rel, Scope, Valuation,
};
use crate::model::{guard_holds, DisturbanceKind, StochModel};
use crate::region::{find_gap, find_overlap, fmt_point, Region};

/// (automaton state index, mode index).
pub type Loc = (usize, usize);

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("manual post-expectation: {0}")]
    ManualPost(String),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

/// How a location's certificate is split into affine pieces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PieceMode {
    #[default]
    Single,
    /// One piece per outgoing automaton transition.
    Edges,
    /// One piece per model branch.
    Branches,
    /// One piece per nonempty (transition, branch) cell.
    Cells,
}

impl FromStr for PieceMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "single" => Ok(PieceMode::Single),
            "edges" => Ok(PieceMode::Edges),
            "branches" => Ok(PieceMode::Branches),
            "cells" => Ok(PieceMode::Cells),
            other => Err(format!("unknown piece mode `{other}` (single, edges, branches, cells)")),
        }
    }
}

impl fmt::Display for PieceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PieceMode::Single => "single",
            PieceMode::Edges => "edges",
            PieceMode::Branches => "branches",
            PieceMode::Cells => "cells",
        })
    }
}

/// One affine piece of a certificate, valid where all `guard` atoms hold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VPiece {
    pub guard: Vec<Atom>,
    pub form: LinForm,
}

/// Certificate for one Streett pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CertTemplate {
    pub pair: usize,
    pub pieces: BTreeMap<Loc, Vec<VPiece>>,
}

impl CertTemplate {
    pub fn is_single(&self) -> bool {
        self.pieces.values().all(|p| p.len() == 1)
    }

    pub fn params(&self) -> Vec<Param> {
        let mut out: Vec<Param> = Vec::new();
        for p in self.pieces.values().flatten() {
            for q in p.form.params() {
                if !out.contains(&q) {
                    out.push(q);
                }
            }
        }
        out
    }

    /// Instantiates every form under `val`.
    pub fn instantiate(&self, val: &Valuation) -> CertTemplate {
        let pieces = self
            .pieces
            .iter()
            .map(|(l, ps)| {
                (*l, ps.iter().map(|p| VPiece { guard: p.guard.clone(), form: p.form.partial_eval(val) }).collect())
            })
            .collect();
        CertTemplate { pair: self.pair, pieces }
    }

    /// Value at a concrete state; the first piece whose guard holds wins.
    pub fn eval(&self, loc: Loc, state: &[Rational], val: &Valuation) -> Result<Rational, ExprError> {
        for p in &self.pieces[&loc] {
            if guard_holds(&Guard { atoms: p.guard.clone(), ..Guard::top() }, val, state)? {
                return p.form.eval(val, state);
            }
        }
        Err(ExprError::Unbound(format!("no certificate piece covers the state at location {loc:?}")))
    }
}

/// Polyhedral invariant: at each location a conjunction of rows `form <= 0`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InvTemplate {
    pub rows: BTreeMap<Loc, Vec<LinForm>>,
}

impl InvTemplate {
    pub fn is_param_free(&self) -> bool {
        self.rows.values().flatten().all(LinForm::is_param_free)
    }

    pub fn params(&self) -> Vec<Param> {
        let mut out: Vec<Param> = Vec::new();
        for r in self.rows.values().flatten() {
            for q in r.params() {
                if !out.contains(&q) {
                    out.push(q);
                }
            }
        }
        out
    }

    pub fn atoms(&self, loc: Loc) -> Vec<Atom> {
        self.rows.get(&loc).map(|rs| rs.iter().cloned().map(Atom::le).collect()).unwrap_or_default()
    }

    pub fn instantiate(&self, val: &Valuation) -> InvTemplate {
        InvTemplate {
            rows: self.rows.iter().map(|(l, rs)| (*l, rs.iter().map(|r| r.partial_eval(val)).collect())).collect(),
        }
    }

    pub fn holds(&self, loc: Loc, state: &[Rational], val: &Valuation) -> Result<bool, ExprError> {
        for r in self.rows.get(&loc).into_iter().flatten() {
            if r.eval(val, state)? > Rational::zero() {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

/// One case of the post-expectation at a location.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PostPiece {
    /// Branch guard, automaton-edge guard and any target-piece selection atoms.
    pub guard: Vec<Atom>,
    pub form: LinForm,
    pub branch: Option<usize>,
    pub edge: Option<usize>,
    /// Line of the hand-written block this piece came from.
    pub manual_line: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PostTable {
    pub pieces: BTreeMap<Loc, Vec<PostPiece>>,
}

impl PostTable {
    /// Evaluates the post-expectation at a concrete state.
    pub fn eval(&self, loc: Loc, state: &[Rational], val: &Valuation) -> Result<Rational, ExprError> {
        for p in &self.pieces[&loc] {
            if guard_holds(&Guard { atoms: p.guard.clone(), ..Guard::top() }, val, state)? {
                return p.form.eval(val, state);
            }
        }
        Err(ExprError::Unbound(format!("no post-expectation piece covers the state at location {loc:?}")))
    }
}

pub fn locations(model: &StochModel, dsa: &GuardedDsa) -> Vec<Loc> {
    (0..dsa.states.len()).flat_map(|q| (0..model.modes.len()).map(move |m| (q, m))).collect()
}

pub fn loc_name(model: &StochModel, dsa: &GuardedDsa, loc: Loc) -> String {
    if model.modes.len() > 1 {
        format!("{} @ {}", dsa.states[loc.0], model.modes[loc.1])
    } else {
        dsa.states[loc.0].clone()
    }
}

fn affine_template(prefix: &str, model: &StochModel, kind: ParamKind) -> LinForm {
    let coeffs =
        model.vars.iter().enumerate().map(|(i, v)| (i, Poly::param(Param::new(format!("{prefix}.{v}"), kind))));
    LinForm::from_parts(coeffs, Poly::param(Param::new(format!("{prefix}.1"), kind)))
}

fn param_free_pieces(guards: Vec<Vec<Atom>>, dim: usize) -> Vec<Vec<Atom>> {
    guards.into_iter().filter(|g| !Region::new(dim, g.clone()).is_empty()).collect()
}

/// Instantiates a certificate template for `pair` with fresh parameters.
pub fn cert_template(
    model: &StochModel,
    dsa: &GuardedDsa,
    pair: usize,
    mode: PieceMode,
) -> Result<CertTemplate, TemplateError> {
    let mut pieces = BTreeMap::new();
    for loc in locations(model, dsa) {
        let (q, m) = loc;
        let mname = &model.modes[m];
        let edges: Vec<Vec<Atom>> = dsa.outgoing_in_mode(q, mname).map(|t| t.guard.atoms.clone()).collect();
        let branches: Vec<Vec<Atom>> = model.branches_in_mode(mname).map(|(_, b)| b.guard.atoms.clone()).collect();
        if matches!(mode, PieceMode::Branches | PieceMode::Cells)
            && branches.iter().flatten().any(|a| !a.form.is_param_free())
        {
            return Err(TemplateError::Unsupported(
                "branch-split certificates need parameter-free branch guards".into(),
            ));
        }
        let guards = match mode {
            PieceMode::Single => vec![Vec::new()],
            PieceMode::Edges => param_free_pieces(edges, model.dim()),
            PieceMode::Branches => param_free_pieces(branches, model.dim()),
            PieceMode::Cells => param_free_pieces(
                edges.iter().flat_map(|e| branches.iter().map(move |b| [e.clone(), b.clone()].concat())).collect(),
                model.dim(),
            ),
        };
        let guards = if guards.is_empty() { vec![Vec::new()] } else { guards };
        let single = guards.len() == 1;
        let vp = guards
            .into_iter()
            .enumerate()
            .map(|(k, guard)| {
                let prefix = format!("th.{pair}.{}.{}.{k}", dsa.states[q], mname);
                // A lone piece covers the whole location.
                let guard = if single { Vec::new() } else { guard };
                VPiece { guard, form: affine_template(&prefix, model, ParamKind::Certificate) }
            })
            .collect();
        pieces.insert(loc, vp);
    }
    Ok(CertTemplate { pair, pieces })
}

/// Invariant template with `rows` inequalities `eta . x <= eta_c` per location.
pub fn inv_template(model: &StochModel, dsa: &GuardedDsa, rows: usize) -> InvTemplate {
    let mut out = BTreeMap::new();
    for loc in locations(model, dsa) {
        let (q, m) = loc;
        let forms = (0..rows)
            .map(|r| {
                affine_template(&format!("eta.{}.{}.{r}", dsa.states[q], model.modes[m]), model, ParamKind::Invariant)
            })
            .collect();
        out.insert(loc, forms);
    }
    InvTemplate { rows: out }
}

/// Parses an invariant file: lines `q @ mode: conjunction` (`*` matches any
/// state or mode; the mode part may be omitted). Lines for the same location
/// conjoin. Locations without any line get `false`.
pub fn parse_invariant(text: &str, model: &StochModel, dsa: &GuardedDsa) -> Result<InvTemplate, TemplateError> {
    let mut scope = Scope::with_vars(&model.vars);
    for c in &model.controls {
        scope.bind(c.param.name(), crate::expr::Symbol::Param(c.param.clone()));
    }
    let mut rows: BTreeMap<Loc, Vec<LinForm>> = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let err = |msg: String| TemplateError::Syntax { line, msg };
        let (loc, conj) = body.split_once(':').ok_or_else(|| err("expected `q @ mode: conjunction`".into()))?;
        let (q, m) = match loc.split_once('@') {
            Some((q, m)) => (q.trim(), m.trim()),
            None => (loc.trim(), "*"),
        };
        let qs: Vec<usize> = if q == "*" {
            (0..dsa.states.len()).collect()
        } else {
            vec![dsa.state_index(q).ok_or_else(|| err(format!("unknown automaton state `{q}`")))?]
        };
        let ms: Vec<usize> = if m == "*" {
            (0..model.modes.len()).collect()
        } else {
            vec![model.modes.iter().position(|x| x == m).ok_or_else(|| err(format!("unknown mode `{m}`")))?]
        };
        let guard = parse_atoms(conj, &scope).map_err(|e| err(e.to_string()))?;
        let mut forms = Vec::new();
        for a in guard.atoms {
            if a.form.params().iter().any(|p| p.kind() == ParamKind::Control) {
                return Err(err("invariants may not mention control parameters".into()));
            }
            match a.rel {
                Rel::Le => forms.push(a.form),
                Rel::Eq => {
                    forms.push(-&a.form);
                    forms.push(a.form);
                }
                Rel::Lt => return Err(err("strict inequalities are not supported in invariants".into())),
            }
        }
        for &qi in &qs {
            for &mi in &ms {
                rows.entry((qi, mi)).or_default().extend(forms.iter().cloned());
            }
        }
    }
    for loc in locations(model, dsa) {
        rows.entry(loc).or_insert_with(|| vec![LinForm::rational(Rational::one())]);
    }
    Ok(InvTemplate { rows })
}

/// Support points with probabilities used to take expectations. For a box
/// disturbance this is the mean with probability one, which is exact for
/// certificates affine in the state when updates are affine in the
/// disturbance.
pub fn expectation_points(model: &StochModel) -> Result<Vec<(Vec<Rational>, Rational)>, TemplateError> {
    match &model.disturbance.kind {
        DisturbanceKind::Finite(points) => Ok(points.clone()),
        DisturbanceKind::Box { mean, .. } => {
            for b in &model.branches {
                for f in &b.update {
                    let terms = f.var_terms().map(|(_, c)| c).chain(std::iter::once(f.constant_term()));
                    for poly in terms {
                        for (mono, _) in poly.terms() {
                            let deg: u32 = mono
                                .factors()
                                .iter()
                                .filter(|(p, _)| p.kind() == ParamKind::Disturbance)
                                .map(|(_, e)| e)
                                .sum();
                            if deg > 1 {
                                return Err(TemplateError::Unsupported(
                                    "box disturbances must enter updates affinely".into(),
                                ));
                            }
                        }
                    }
                }
            }
            Ok(vec![(mean.clone(), Rational::one())])
        }
    }
}

/// Image of the update of `branch` with the disturbance fixed to `sample`.
pub fn branch_image(model: &StochModel, branch: usize, sample: &[Rational]) -> Vec<LinForm> {
    let val = model.disturbance.valuation(sample);
    model.branches[branch].update.iter().map(|f| f.partial_eval(&val)).collect()
}

/// Symbolic post-expectation of `cert` by weighted enumeration over branches,
/// automaton edges and disturbance outcomes.
pub fn post_expectation(cert: &CertTemplate, model: &StochModel, dsa: &GuardedDsa) -> Result<PostTable, TemplateError> {
    let points = expectation_points(model)?;
    if !cert.is_single() && !model.disturbance.is_finite() {
        return Err(TemplateError::Unsupported("split certificates need a finite disturbance".into()));
    }
    let dim = model.dim();
    let mut table = BTreeMap::new();
    for loc in locations(model, dsa) {
        let (q, m) = loc;
        let mname = &model.modes[m];
        let mut pieces = Vec::new();
        for (bi, branch) in model.branches_in_mode(mname) {
            let target_mode = model.modes.iter().position(|x| x == branch.target_mode(mname)).expect("known mode");
            for (ti, t) in dsa.transitions.iter().enumerate() {
                if t.source != q || !t.guard.modes.contains(mname) {
                    continue;
                }
                let base: Vec<Atom> = branch.guard.atoms.iter().chain(&t.guard.atoms).cloned().collect();
                if base.iter().all(|a| a.form.is_param_free()) && Region::new(dim, base.clone()).is_empty() {
                    continue;
                }
                let target = &cert.pieces[&(t.target, target_mode)];
                let images: Vec<Vec<LinForm>> = points.iter().map(|(w, _)| branch_image(model, bi, w)).collect();
                if target.len() > 1 && images.iter().flatten().any(|f| !f.is_param_free()) {
                    return Err(TemplateError::Unsupported("split certificates need parameter-free updates".into()));
                }
                let mut combos: Vec<(Vec<Atom>, LinForm)> = vec![(base, LinForm::zero())];
                for ((_, p), image) in points.iter().zip(&images) {
                    let mut next = Vec::new();
                    for (guard, acc) in combos {
                        for piece in target {
                            let mut g = guard.clone();
                            for a in &piece.guard {
                                g.push(Atom { form: a.form.substitute_state(image)?, rel: a.rel });
                            }
                            if target.len() > 1 && Region::new(dim, g.clone()).is_empty() {
                                continue;
                            }
                            let term = piece.form.substitute_state(image)?.scale_rational(p);
                            next.push((g, &acc + &term));
                        }
                    }
                    combos = next;
                }
                for (guard, form) in combos {
                    pieces.push(PostPiece { guard, form, branch: Some(bi), edge: Some(ti), manual_line: None });
                }
            }
        }
        table.insert(loc, pieces);
    }
    Ok(PostTable { pieces: table })
}

/// Post-expectation from the model's hand-written table, after checking that
/// the pieces at every location are disjoint and exhaustive.
pub fn manual_post_lookup(
    cert: &CertTemplate,
    model: &StochModel,
    dsa: &GuardedDsa,
) -> Result<PostTable, TemplateError> {
    let manual =
        model.manual_post.as_ref().ok_or_else(|| TemplateError::ManualPost("model has no post blocks".into()))?;
    if !cert.is_single() {
        return Err(TemplateError::Unsupported("hand-written post-expectations need single-piece certificates".into()));
    }
    for piece in manual {
        if let Some(s) = &piece.at_state {
            if dsa.state_index(s).is_none() {
                return Err(TemplateError::ManualPost(format!("line {}: unknown automaton state `{s}`", piece.line)));
            }
        }
    }
    let dim = model.dim();
    let mut table = BTreeMap::new();
    for loc in locations(model, dsa) {
        let (q, m) = loc;
        let here: Vec<_> = manual
            .iter()
            .filter(|p| p.at_state.as_ref().is_none_or(|s| *s == dsa.states[q]))
            .filter(|p| p.at_mode.as_ref().is_none_or(|s| *s == model.modes[m]))
            .collect();
        let regions: Vec<Region> = here.iter().map(|p| Region::from_guard(dim, &p.guard)).collect();
        let name = loc_name(model, dsa, loc);
        if let Some((i, j, w)) = find_overlap(&regions) {
            return Err(TemplateError::ManualPost(format!(
                "blocks at lines {} and {} overlap at {name}, e.g. {}",
                here[i].line,
                here[j].line,
                fmt_point(&model.vars, &w)
            )));
        }
        if let Some(w) = find_gap(&Region::universe(dim), &regions) {
            return Err(TemplateError::ManualPost(format!("no block covers {} at {name}", fmt_point(&model.vars, &w))));
        }
        let mut pieces = Vec::new();
        for p in here {
            let mut form = LinForm::zero();
            for o in &p.outcomes {
                let tq = dsa.state_index(&o.target_state).ok_or_else(|| {
                    TemplateError::ManualPost(format!("line {}: unknown automaton state `{}`", p.line, o.target_state))
                })?;
                let tm = model.modes.iter().position(|x| *x == o.target_mode).expect("validated mode");
                let v = &cert.pieces[&(tq, tm)][0].form;
                form = &form + &v.substitute_state(&o.image)?.scale_rational(&o.prob);
            }
            pieces.push(PostPiece {
                guard: p.guard.atoms.clone(),
                form,
                branch: None,
                edge: None,
                manual_line: Some(p.line),
            });
        }
        table.insert(loc, pieces);
    }
    Ok(PostTable { pieces: table })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::automata::{parse_dsa, Signature};
    use crate::expr::{int, rat};
    use crate::model::parse_model;

    const EX2: &str = "state: x\ninit: x = 100\ndisturbance: w ~ uniform(-0.1, 0.1)\nbranch\n  x' = 0.5*x + w\nend\n";
    const FIG3: &str = "states: q0, q1, q2\ninit: q0\n\
        q0 -- x >= 1 --> q0\nq0 -- -1 <= x < 1 --> q1\nq0 -- x < -1 --> q2\n\
        q1 -- x >= 1 --> q0\nq1 -- -1 <= x < 1 --> q1\nq1 -- x < -1 --> q2\n\
        q2 -- true --> q2\npair: A={q0, q2} B={}\n";

    #[test]
    fn example_post() {
        let model = parse_model(EX2).unwrap();
        let dsa = parse_dsa(FIG3, &Signature::of(&model)).unwrap();
        let tpl = cert_template(&model, &dsa, 0, PieceMode::Single).unwrap();
        let mut val = Valuation::new();
        for p in tpl.params() {
            let v = if p.name() == "th.0.q0.main.0.x" || p.name() == "th.0.q0.main.0.1" { int(1) } else { int(0) };
            val.insert(p.name(), v);
        }
        let cert = tpl.instantiate(&val);
        let post = post_expectation(&cert, &model, &dsa).unwrap();
        let q0 = &post.pieces[&(0, 0)];
        assert_eq!(q0.len(), 3);
        let on_edge = q0.iter().find(|p| p.edge == Some(0)).unwrap();
        let expected = &LinForm::var(0).scale_rational(&rat(1, 2)) + &LinForm::rational(int(1));
        assert_eq!(on_edge.form, expected);
        for p in q0.iter().filter(|p| p.edge != Some(0)) {
            assert!(p.form.is_zero());
        }
    }

    #[test]
    fn zero_template_has_zero_post() {
        let model = parse_model(EX2).unwrap();
        let dsa = parse_dsa(FIG3, &Signature::of(&model)).unwrap();
        let tpl = cert_template(&model, &dsa, 0, PieceMode::Single).unwrap();
        let zero: Valuation = tpl.params().iter().map(|p| (p.name().into(), int(0))).collect();
        let post = post_expectation(&tpl.instantiate(&zero), &model, &dsa).unwrap();
        assert!(post.pieces.values().flatten().all(|p| p.form.is_zero()));
    }

    #[test]
    fn invariant_file() {
        let model = parse_model(EX2).unwrap();
        let dsa = parse_dsa(FIG3, &Signature::of(&model)).unwrap();
        let inv = parse_invariant("q0: x >= -0.2\nq1: -0.2 <= x <= 0.9\nq2: false\n", &model, &dsa).unwrap();
        assert_eq!(inv.rows[&(1, 0)].len(), 2);
        assert!(inv.holds((0, 0), &[int(5)], &Valuation::new()).unwrap());
        assert!(!inv.holds((2, 0), &[int(5)], &Valuation::new()).unwrap());
        assert!(parse_invariant("q0: x > 1\n", &model, &dsa).is_err());
    }
}
