//! Verification conditions of the product process as implications
//! `forall y: A y <= b  ==>  c y <= d`.
//!
//! Families: invariant initiation and consecution, the three drift
//! obligations (decrease by epsilon, increase by at most `M`, no increase)
//! and nonnegativity on the invariant. Epsilon is fixed to one; any
//! certificate can be rescaled to meet that.

use std::collections::BTreeSet;
use std::fmt;

use num_traits::One;
use thiserror::Error;

use crate::automata::{GuardedDsa, StateClass};
use crate::expr::{Atom, ExprError, LinForm, Param, ParamKind, Rational, Rel};
use crate::model::{DisturbanceKind, StochModel};
use crate::region::Region;
use crate::templates::{branch_image, loc_name, locations, CertTemplate, InvTemplate, Loc, PostTable};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum VcError {
    #[error("strict inequality in a consequent is not supported")]
    StrictConsequent,
    #[error(transparent)]
    Expr(#[from] ExprError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Family {
    Init,
    Consecution,
    Decrease,
    Increase,
    NonIncrease,
    NonNegative,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Init => "init",
            Family::Consecution => "consecution",
            Family::Decrease => "decrease",
            Family::Increase => "bounded-increase",
            Family::NonIncrease => "non-increase",
            Family::NonNegative => "nonnegativity",
        })
    }
}

/// Where an implication came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VcTag {
    pub family: Family,
    pub pair: Option<usize>,
    pub loc: Option<Loc>,
    pub branch: Option<usize>,
    pub edge: Option<usize>,
    pub detail: String,
}

impl fmt::Display for VcTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.family)?;
        if let Some(p) = self.pair {
            write!(f, " (pair {p})")?;
        }
        if !self.detail.is_empty() {
            write!(f, " {}", self.detail)?;
        }
        Ok(())
    }
}

/// `forall y in R^nvars: premise_i(y) <= 0 for all i ==> consequent(y) <= 0`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Implication {
    pub nvars: usize,
    pub premise: Vec<LinForm>,
    pub consequent: LinForm,
    pub tag: VcTag,
    /// Strict premise atoms that were weakened to non-strict ones.
    pub relaxed: Vec<LinForm>,
}

impl Implication {
    pub fn params(&self) -> BTreeSet<Param> {
        let mut out = self.consequent.params();
        for p in &self.premise {
            out.extend(p.params());
        }
        out
    }

    pub fn premise_is_param_free(&self) -> bool {
        self.premise.iter().all(LinForm::is_param_free)
    }
}

/// Splits equalities and weakens strict premise atoms, logging each weakening.
pub fn normalize_strict(atoms: &[Atom]) -> (Vec<LinForm>, Vec<LinForm>) {
    let mut out = Vec::new();
    let mut log = Vec::new();
    for a in atoms {
        match a.rel {
            Rel::Le => out.push(a.form.clone()),
            Rel::Lt => {
                out.push(a.form.clone());
                log.push(a.form.clone());
            }
            Rel::Eq => {
                out.push(a.form.clone());
                out.push(-&a.form);
            }
        }
    }
    (out, log)
}

/// Normalizes a consequent atom to `form <= 0`.
pub fn normalize_consequent(atom: &Atom) -> Result<LinForm, VcError> {
    match atom.rel {
        Rel::Le => Ok(atom.form.clone()),
        _ => Err(VcError::StrictConsequent),
    }
}

/// A side constraint `form REL 0` over existential parameters only.
pub type SideConstraint = Atom;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VcSet {
    pub implications: Vec<Implication>,
    pub params: Vec<Param>,
    pub side: Vec<SideConstraint>,
    /// Bound on the increase at `B` states, one per pair (if needed).
    pub m_params: Vec<Option<Param>>,
}

impl VcSet {
    pub fn dump(&self, model: &StochModel) -> String {
        let mut names = model.vars.clone();
        names.extend(model.disturbance.params.iter().map(|p| p.name().to_string()));
        let mut out = String::new();
        for (i, imp) in self.implications.iter().enumerate() {
            out.push_str(&format!("[{i}] {}\n", imp.tag));
            if imp.premise.is_empty() {
                out.push_str("    true\n");
            }
            for p in &imp.premise {
                out.push_str(&format!("    {} <= 0\n", p.display_with(&names)));
            }
            out.push_str(&format!("  ==> {} <= 0\n", imp.consequent.display_with(&names)));
            for r in &imp.relaxed {
                out.push_str(&format!("    (relaxed {} < 0)\n", r.display_with(&names)));
            }
        }
        for s in &self.side {
            let rel = match s.rel {
                Rel::Le => "<=",
                Rel::Lt => "<",
                Rel::Eq => "=",
            };
            out.push_str(&format!("side: {} {rel} 0\n", s.form));
        }
        out
    }
}

/// Everything the generator needs.
pub struct VcInput<'a> {
    pub model: &'a StochModel,
    pub dsa: &'a GuardedDsa,
    pub certs: &'a [CertTemplate],
    pub posts: &'a [PostTable],
    pub inv: &'a InvTemplate,
}

/// Builds all verification conditions of the product.
pub fn build_product_vcs(input: &VcInput) -> Result<VcSet, VcError> {
    let VcInput { model, dsa, certs, posts, inv } = *input;
    let dim = model.dim();
    let mut imps: Vec<Implication> = Vec::new();
    let init_loc: Loc = (dsa.init, model.modes.iter().position(|m| *m == model.init_mode).expect("init mode"));
    let init_image: Vec<LinForm> = model.init_state.iter().map(|v| LinForm::rational(v.clone())).collect();

    for (r, row) in inv.rows[&init_loc].iter().enumerate() {
        imps.push(Implication {
            nvars: dim,
            premise: Vec::new(),
            consequent: row.substitute_state(&init_image)?,
            tag: VcTag {
                family: Family::Init,
                pair: None,
                loc: Some(init_loc),
                branch: None,
                edge: None,
                detail: format!("row {r} at {}", loc_name(model, dsa, init_loc)),
            },
            relaxed: Vec::new(),
        });
    }

    consecution(input, &mut imps)?;

    let mut m_params = Vec::new();
    for (i, (cert, post)) in certs.iter().zip(posts).enumerate() {
        let needs_m = locations(model, dsa).iter().any(|l| dsa.classify(i, l.0) == StateClass::Bounded);
        let m_param = needs_m.then(|| Param::new(format!("M.{i}"), ParamKind::Slack));
        for loc in locations(model, dsa) {
            let class = dsa.classify(i, loc.0);
            let inv_atoms = inv.atoms(loc);
            for (k, vp) in cert.pieces[&loc].iter().enumerate() {
                let base: Vec<Atom> = inv_atoms.iter().chain(&vp.guard).cloned().collect();
                let (premise, relaxed) = normalize_strict(&base);
                imps.push(Implication {
                    nvars: dim,
                    premise,
                    consequent: -&vp.form,
                    tag: VcTag {
                        family: Family::NonNegative,
                        pair: Some(i),
                        loc: Some(loc),
                        branch: None,
                        edge: None,
                        detail: format!("at {} piece {k}", loc_name(model, dsa, loc)),
                    },
                    relaxed,
                });
                for pp in &post.pieces[&loc] {
                    let guards: Vec<Atom> = vp.guard.iter().chain(&pp.guard).cloned().collect();
                    if guards.iter().all(|a| a.form.is_param_free()) && Region::new(dim, guards.clone()).is_empty() {
                        continue;
                    }
                    let atoms: Vec<Atom> = inv_atoms.iter().cloned().chain(guards).collect();
                    let (premise, relaxed) = normalize_strict(&atoms);
                    let diff = &pp.form - &vp.form;
                    let (family, consequent) = match class {
                        StateClass::Decrease => (Family::Decrease, &diff + &LinForm::rational(Rational::one())),
                        StateClass::Bounded => {
                            let m = LinForm::param(m_param.clone().expect("declared"));
                            (Family::Increase, &diff - &m)
                        }
                        StateClass::NonIncrease => (Family::NonIncrease, diff),
                    };
                    let mut detail = format!("at {} piece {k}", loc_name(model, dsa, loc));
                    if let Some(b) = pp.branch {
                        detail.push_str(&format!(", branch line {}", model.branches[b].line));
                    }
                    if let Some(e) = pp.edge {
                        detail.push_str(&format!(", edge line {}", dsa.transitions[e].line));
                    }
                    if let Some(l) = pp.manual_line {
                        detail.push_str(&format!(", post block line {l}"));
                    }
                    imps.push(Implication {
                        nvars: dim,
                        premise,
                        consequent,
                        tag: VcTag { family, pair: Some(i), loc: Some(loc), branch: pp.branch, edge: pp.edge, detail },
                        relaxed,
                    });
                }
            }
        }
        m_params.push(m_param);
    }

    let mut deduped: Vec<Implication> = Vec::new();
    for imp in imps {
        if !deduped.iter().any(|d| d.premise == imp.premise && d.consequent == imp.consequent && d.nvars == imp.nvars) {
            deduped.push(imp);
        }
    }

    let mut params: Vec<Param> = Vec::new();
    let mut declare = |p: Param| {
        if !params.contains(&p) {
            params.push(p);
        }
    };
    for c in certs {
        c.params().into_iter().for_each(&mut declare);
    }
    inv.params().into_iter().for_each(&mut declare);
    model.control_params().cloned().for_each(&mut declare);
    m_params.iter().flatten().cloned().for_each(&mut declare);

    let mut side = Vec::new();
    for c in &model.controls {
        let k = LinForm::param(c.param.clone());
        side.push(Atom::le(&LinForm::rational(c.lo.clone()) - &k));
        side.push(Atom::le(&k - &LinForm::rational(c.hi.clone())));
    }
    side.extend(model.constraints.iter().cloned());
    for m in m_params.iter().flatten() {
        side.push(Atom::le(-LinForm::param(m.clone())));
    }
    Ok(VcSet { implications: deduped, params, side, m_params })
}

fn consecution(input: &VcInput, imps: &mut Vec<Implication>) -> Result<(), VcError> {
    let VcInput { model, dsa, inv, .. } = *input;
    let dim = model.dim();
    // Finite disturbances: one implication per support point. Box
    // disturbances: extra universally quantified columns with their bounds.
    let (samples, nvars, box_atoms): (Vec<Option<Vec<Rational>>>, usize, Vec<Atom>) = match &model.disturbance.kind {
        DisturbanceKind::Finite(points) => (points.iter().map(|(w, _)| Some(w.clone())).collect(), dim, Vec::new()),
        DisturbanceKind::Box { lo, hi, .. } => {
            let mut atoms = Vec::new();
            for (j, (l, h)) in lo.iter().zip(hi).enumerate() {
                let w = LinForm::var(dim + j);
                atoms.push(Atom::le(&LinForm::rational(l.clone()) - &w));
                atoms.push(Atom::le(&w - &LinForm::rational(h.clone())));
            }
            (vec![None], dim + lo.len(), atoms)
        }
    };
    for loc in locations(model, dsa) {
        let (q, m) = loc;
        let mname = &model.modes[m];
        let inv_atoms = inv.atoms(loc);
        for (bi, branch) in model.branches_in_mode(mname) {
            let tm = model.modes.iter().position(|x| x == branch.target_mode(mname)).expect("known mode");
            for (ti, t) in dsa.transitions.iter().enumerate() {
                if t.source != q || !t.guard.modes.contains(mname) {
                    continue;
                }
                let guards: Vec<Atom> = branch.guard.atoms.iter().chain(&t.guard.atoms).cloned().collect();
                if guards.iter().all(|a| a.form.is_param_free()) && Region::new(dim, guards.clone()).is_empty() {
                    continue;
                }
                let target = (t.target, tm);
                for sample in &samples {
                    let image: Vec<LinForm> = match sample {
                        Some(w) => branch_image(model, bi, w),
                        None => lift_box(model, bi)?,
                    };
                    let atoms: Vec<Atom> = inv_atoms.iter().chain(&guards).chain(&box_atoms).cloned().collect();
                    let (premise, relaxed) = normalize_strict(&atoms);
                    for (r, row) in inv.rows[&target].iter().enumerate() {
                        let consequent = row.substitute_state(&image)?;
                        if consequent.is_param_free() && consequent.is_state_free() {
                            if let Some(c) = consequent.constant_term().as_constant() {
                                if c <= Rational::from_integer(0.into()) {
                                    continue;
                                }
                            }
                        }
                        let mut detail = format!(
                            "{} -> {} row {r}, branch line {}, edge line {}",
                            loc_name(model, dsa, loc),
                            loc_name(model, dsa, target),
                            branch.line,
                            t.line
                        );
                        if let Some(w) = sample {
                            if !w.is_empty() {
                                let ws: Vec<String> = w.iter().map(crate::expr::fmt_rational).collect();
                                detail.push_str(&format!(", w = ({})", ws.join(", ")));
                            }
                        }
                        imps.push(Implication {
                            nvars,
                            premise: premise.clone(),
                            consequent,
                            tag: VcTag {
                                family: Family::Consecution,
                                pair: None,
                                loc: Some(loc),
                                branch: Some(bi),
                                edge: Some(ti),
                                detail,
                            },
                            relaxed: relaxed.clone(),
                        });
                    }
                }
            }
        }
    }
    Ok(())
}

/// Update of `branch` with box disturbances moved into state columns `dim..`.
fn lift_box(model: &StochModel, branch: usize) -> Result<Vec<LinForm>, VcError> {
    let dim = model.dim();
    let mut out = Vec::new();
    for f in &model.branches[branch].update {
        let mut g = f.clone();
        for (j, p) in model.disturbance.params.iter().enumerate() {
            g = g.lift_param_to_var(p, dim + j)?;
        }
        out.push(g);
    }
    Ok(out)
}
