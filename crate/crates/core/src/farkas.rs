//! Elimination of the universal quantifier of an implication by Farkas'
//! lemma.
//!
//! For `forall y: A y <= b ==> c y <= d` with a feasible premise, validity is
//! equivalent to `exists z >= 0: A^T z = c and b^T z <= d`. Without knowing
//! feasibility the general form adds the alternative
//! `A^T z = 0 and b^T z < 0`, which certifies an empty premise.

use std::collections::BTreeMap;
use std::fmt;

use num_traits::{One, Zero};

use crate::expr::{Monomial, Param, ParamKind, Poly, Rational, Rel, Valuation};
use crate::simplex::{Cmp, Feasibility, Lp};
use crate::vcgen::{Implication, VcSet, VcTag};

/// `poly REL 0`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PolyAtom {
    pub poly: Poly,
    pub rel: Rel,
}

impl PolyAtom {
    pub fn new(poly: Poly, rel: Rel) -> Self {
        PolyAtom { poly, rel }
    }

    pub fn holds(&self, val: &Valuation) -> Result<bool, crate::expr::ExprError> {
        let v = self.poly.eval(val)?;
        Ok(match self.rel {
            Rel::Le => v <= Rational::zero(),
            Rel::Lt => v < Rational::zero(),
            Rel::Eq => v.is_zero(),
        })
    }

    /// Trivially true constant atoms can be dropped.
    pub fn is_trivially_true(&self) -> bool {
        match self.poly.as_constant() {
            Some(c) => match self.rel {
                Rel::Le => c <= Rational::zero(),
                Rel::Lt => c < Rational::zero(),
                Rel::Eq => c.is_zero(),
            },
            None => false,
        }
    }
}

impl fmt::Display for PolyAtom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rel = match self.rel {
            Rel::Le => "<=",
            Rel::Lt => "<",
            Rel::Eq => "=",
        };
        write!(f, "{} {rel} 0", self.poly)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Constraint {
    Atom(PolyAtom),
    /// Disjunction of conjunctions.
    Or(Vec<Vec<PolyAtom>>),
}

impl Constraint {
    pub fn holds(&self, val: &Valuation) -> Result<bool, crate::expr::ExprError> {
        match self {
            Constraint::Atom(a) => a.holds(val),
            Constraint::Or(cases) => {
                for case in cases {
                    let mut all = true;
                    for a in case {
                        if !a.holds(val)? {
                            all = false;
                            break;
                        }
                    }
                    if all {
                        return Ok(true);
                    }
                }
                Ok(false)
            }
        }
    }

    fn atoms(&self) -> Box<dyn Iterator<Item = &PolyAtom> + '_> {
        match self {
            Constraint::Atom(a) => Box::new(std::iter::once(a)),
            Constraint::Or(cases) => Box::new(cases.iter().flatten()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PremiseStatus {
    Feasible,
    Infeasible,
    ParamDependent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DualMode {
    General,
    PremiseSat,
    Vacuous,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DualConstraint {
    pub z: Vec<Param>,
    /// `A^T z - c = 0` per variable and `b^T z - d <= 0`.
    pub main: Vec<PolyAtom>,
    /// `A^T z = 0` per variable and `b^T z < 0`.
    pub alt: Option<Vec<PolyAtom>>,
    pub mode: DualMode,
    pub tag: VcTag,
}

/// Decides premise feasibility by LP when the premise is parameter-free.
pub fn premise_feasible(imp: &Implication) -> PremiseStatus {
    if !imp.premise_is_param_free() {
        return PremiseStatus::ParamDependent;
    }
    let mut lp = Lp::new();
    lp.add_vars(imp.nvars, true);
    for p in &imp.premise {
        let (coeffs, constant) = p.to_concrete(imp.nvars).expect("parameter-free premise");
        let row = coeffs.into_iter().enumerate().filter(|(_, c)| !c.is_zero()).collect();
        lp.add_row(row, Cmp::Le, -constant);
    }
    match lp.solve() {
        Feasibility::Feasible(_) => PremiseStatus::Feasible,
        Feasibility::Infeasible(_) => PremiseStatus::Infeasible,
    }
}

fn multipliers(imp: &Implication, prefix: &str) -> Vec<Param> {
    (0..imp.premise.len()).map(|i| Param::new(format!("{prefix}.{i}"), ParamKind::Multiplier)).collect()
}

/// `(A^T z)_j` for every variable and `b^T z`, with `b_i = -constant(p_i)`.
fn combine(imp: &Implication, z: &[Param]) -> (Vec<Poly>, Poly) {
    let mut cols = vec![Poly::zero(); imp.nvars];
    let mut bz = Poly::zero();
    for (p, zi) in imp.premise.iter().zip(z) {
        let zp = Poly::param(zi.clone());
        for (j, c) in p.var_terms() {
            cols[j] = &cols[j] + &(c * &zp);
        }
        bz = &bz - &(p.constant_term() * &zp);
    }
    (cols, bz)
}

fn main_atoms(imp: &Implication, cols: &[Poly], bz: &Poly) -> Vec<PolyAtom> {
    let mut out: Vec<PolyAtom> =
        cols.iter().enumerate().map(|(j, col)| PolyAtom::new(col - &imp.consequent.coeff(j), Rel::Eq)).collect();
    // d = -constant(consequent), so b^T z - d = bz + constant.
    out.push(PolyAtom::new(bz + imp.consequent.constant_term(), Rel::Le));
    out
}

/// General form with both disjuncts, fresh multipliers named `{prefix}.i`.
pub fn farkas_general(imp: &Implication, prefix: &str) -> DualConstraint {
    let z = multipliers(imp, prefix);
    let (cols, bz) = combine(imp, &z);
    let main = main_atoms(imp, &cols, &bz);
    let mut alt: Vec<PolyAtom> = cols.iter().map(|c| PolyAtom::new(c.clone(), Rel::Eq)).collect();
    alt.push(PolyAtom::new(bz, Rel::Lt));
    DualConstraint { z, main, alt: Some(alt), mode: DualMode::General, tag: imp.tag.clone() }
}

/// Conjunction-only form, valid when the premise is known to be satisfiable.
pub fn farkas_premise_sat(imp: &Implication, prefix: &str) -> DualConstraint {
    let z = multipliers(imp, prefix);
    let (cols, bz) = combine(imp, &z);
    let main = main_atoms(imp, &cols, &bz);
    DualConstraint { z, main, alt: None, mode: DualMode::PremiseSat, tag: imp.tag.clone() }
}

/// Screens the premise and picks the dual: vacuous for an empty premise,
/// conjunction-only for a feasible parameter-free premise (unless
/// `force_general`), the general form otherwise.
pub fn transform(imp: &Implication, prefix: &str, force_general: bool) -> DualConstraint {
    match premise_feasible(imp) {
        PremiseStatus::Infeasible => {
            DualConstraint { z: Vec::new(), main: Vec::new(), alt: None, mode: DualMode::Vacuous, tag: imp.tag.clone() }
        }
        PremiseStatus::Feasible if !force_general || imp.premise.is_empty() => farkas_premise_sat(imp, prefix),
        _ => farkas_general(imp, prefix),
    }
}

/// A quantifier-free conjunction over the existential parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConstraintSystem {
    pub vars: Vec<Param>,
    pub constraints: Vec<Constraint>,
}

impl ConstraintSystem {
    pub fn degree(&self) -> u32 {
        self.constraints.iter().flat_map(|c| c.atoms()).map(|a| a.poly.degree()).max().unwrap_or(0)
    }

    pub fn is_linear(&self) -> bool {
        self.degree() <= 1
    }

    pub fn has_disjunctions(&self) -> bool {
        self.constraints.iter().any(|c| matches!(c, Constraint::Or(_)))
    }

    /// Exact re-check of a valuation; returns the first violated constraint.
    pub fn check(&self, val: &Valuation) -> Result<(), String> {
        for c in &self.constraints {
            match c.holds(val) {
                Ok(true) => {}
                Ok(false) => return Err(format!("violated: {}", fmt_constraint(c))),
                Err(e) => return Err(e.to_string()),
            }
        }
        Ok(())
    }

    pub fn dump(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "; {} variables, {} constraints, degree {}\n",
            self.vars.len(),
            self.constraints.len(),
            self.degree()
        ));
        for c in &self.constraints {
            out.push_str(&fmt_constraint(c));
            out.push('\n');
        }
        out
    }
}

fn fmt_constraint(c: &Constraint) -> String {
    match c {
        Constraint::Atom(a) => a.to_string(),
        Constraint::Or(cases) => {
            let parts: Vec<String> = cases
                .iter()
                .map(|case| {
                    let inner: Vec<String> = case.iter().map(ToString::to_string).collect();
                    format!("({})", inner.join(" and "))
                })
                .collect();
            parts.join(" or ")
        }
    }
}

/// Conjoins the duals with the side constraints and `z >= 0`.
pub fn assemble(duals: &[DualConstraint], vcs: &VcSet) -> ConstraintSystem {
    let mut vars = vcs.params.clone();
    let mut constraints = Vec::new();
    for s in &vcs.side {
        assert!(s.form.is_state_free(), "side constraints range over parameters only");
        let a = PolyAtom::new(s.form.constant_term().clone(), s.rel);
        if !a.is_trivially_true() {
            constraints.push(Constraint::Atom(a));
        }
    }
    for d in duals {
        if d.mode == DualMode::Vacuous {
            continue;
        }
        for z in &d.z {
            vars.push(z.clone());
            constraints.push(Constraint::Atom(PolyAtom::new(-Poly::param(z.clone()), Rel::Le)));
        }
        match &d.alt {
            None => constraints.extend(d.main.iter().filter(|a| !a.is_trivially_true()).cloned().map(Constraint::Atom)),
            Some(alt) => constraints.push(Constraint::Or(vec![d.main.clone(), alt.clone()])),
        }
    }
    ConstraintSystem { vars, constraints }
}

/// Transforms every implication of a VC set and assembles the system.
pub fn dualize(vcs: &VcSet, force_general: bool) -> (Vec<DualConstraint>, ConstraintSystem) {
    let duals: Vec<DualConstraint> =
        vcs.implications.iter().enumerate().map(|(i, imp)| transform(imp, &format!("z.{i}"), force_general)).collect();
    let system = assemble(&duals, vcs);
    (duals, system)
}

/// Rewrites every monomial of degree above two using fresh product
/// variables `aux.k` with defining equalities, so the result is quadratic.
pub fn reduce_degree(system: &ConstraintSystem) -> ConstraintSystem {
    let mut memo: BTreeMap<Monomial, Param> = BTreeMap::new();
    let mut defs: Vec<Constraint> = Vec::new();
    let mut vars = system.vars.clone();

    let reduce_poly =
        |poly: &Poly, memo: &mut BTreeMap<Monomial, Param>, defs: &mut Vec<Constraint>, vars: &mut Vec<Param>| {
            let mut out = Poly::zero();
            for (mono, coeff) in poly.terms() {
                let mut factors: Vec<Param> =
                    mono.factors().iter().flat_map(|(p, e)| std::iter::repeat_n(p.clone(), *e as usize)).collect();
                while factors.len() > 2 {
                    let a = factors.remove(0);
                    let b = factors.remove(0);
                    let pair = Monomial::from_factors([(a.clone(), 1), (b.clone(), 1)]);
                    let aux = memo
                        .entry(pair.clone())
                        .or_insert_with(|| {
                            let p = Param::new(format!("aux.{}", vars.len()), ParamKind::Auxiliary);
                            vars.push(p.clone());
                            let product = Poly::term(pair, Rational::one());
                            defs.push(Constraint::Atom(PolyAtom::new(&Poly::param(p.clone()) - &product, Rel::Eq)));
                            p
                        })
                        .clone();
                    factors.insert(0, aux);
                }
                let m = Monomial::from_factors(factors.into_iter().map(|p| (p, 1)));
                out = &out + &Poly::term(m, coeff.clone());
            }
            out
        };

    let mut constraints = Vec::new();
    for c in &system.constraints {
        let mut map = |a: &PolyAtom| PolyAtom::new(reduce_poly(&a.poly, &mut memo, &mut defs, &mut vars), a.rel);
        constraints.push(match c {
            Constraint::Atom(a) => Constraint::Atom(map(a)),
            Constraint::Or(cases) => {
                Constraint::Or(cases.iter().map(|case| case.iter().map(&mut map).collect()).collect())
            }
        });
    }
    constraints.extend(defs);
    ConstraintSystem { vars, constraints }
}

/// Fills in auxiliary product variables from their factors.
pub fn complete_auxiliaries(system: &ConstraintSystem, val: &mut Valuation) {
    for c in &system.constraints {
        if let Constraint::Atom(a) = c {
            if a.rel != Rel::Eq {
                continue;
            }
            let aux = a.poly.terms().find_map(|(m, coeff)| match m.factors() {
                [(p, 1)] if p.kind() == ParamKind::Auxiliary && coeff.is_one() => Some(p.clone()),
                _ => None,
            });
            if let Some(p) = aux {
                if val.contains(p.name()) {
                    continue;
                }
                let rest = &a.poly - &Poly::param(p.clone());
                if let Ok(v) = rest.eval(val) {
                    val.insert(p.name(), -v);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{int, LinForm};
    use crate::vcgen::Family;

    fn tag() -> VcTag {
        VcTag { family: Family::Init, pair: None, loc: None, branch: None, edge: None, detail: String::new() }
    }

    fn imp(premise: Vec<LinForm>, consequent: LinForm) -> Implication {
        Implication { nvars: 1, premise, consequent, tag: tag(), relaxed: Vec::new() }
    }

    fn y() -> LinForm {
        LinForm::var(0)
    }

    fn c(v: i64) -> LinForm {
        LinForm::rational(int(v))
    }

    #[test]
    fn direct_instantiation() {
        // forall y: y <= 1 and -y <= 0 ==> y <= 2
        let i = imp(vec![&y() - &c(1), -y()], &y() - &c(2));
        let d = farkas_general(&i, "z");
        assert_eq!(d.mode, DualMode::General);
        let mut val = Valuation::new();
        val.insert("z.0", int(1));
        val.insert("z.1", int(0));
        assert!(d.main.iter().all(|a| a.holds(&val).unwrap()));
        assert!(!d.alt.as_ref().unwrap().iter().all(|a| a.holds(&val).unwrap()));
        // main: z0 - z1 - 1 = 0 and z0 - 2 <= 0
        assert_eq!(d.main[0].poly, &(&Poly::param(d.z[0].clone()) - &Poly::param(d.z[1].clone())) - &Poly::one());
    }

    #[test]
    fn screening() {
        // x <= 0.9, -x <= 0.2, -x <= -1: infeasible
        let nine = LinForm::rational(crate::expr::rat(9, 10));
        let fifth = LinForm::rational(crate::expr::rat(1, 5));
        let i = imp(vec![&y() - &nine, &-y() - &fifth, &-y() + &c(1)], c(1));
        assert_eq!(premise_feasible(&i), PremiseStatus::Infeasible);
        assert_eq!(transform(&i, "z", false).mode, DualMode::Vacuous);
        let i = imp(vec![&-y() - &fifth, &-y() + &c(1)], c(0));
        assert_eq!(premise_feasible(&i), PremiseStatus::Feasible);
        let eta = LinForm::param(Param::new("eta", ParamKind::Invariant));
        let i = imp(vec![eta.mul(&y()).unwrap()], c(0));
        assert_eq!(premise_feasible(&i), PremiseStatus::ParamDependent);
    }

    #[test]
    fn premise_sat_shape() {
        // forall x: x <= 1 and -x <= 1 ==> (a - 1) x <= b
        let a = LinForm::param(Param::new("a", ParamKind::Control));
        let b = LinForm::param(Param::new("b", ParamKind::Control));
        let cons = &(&a - &c(1)).mul(&y()).unwrap() - &b;
        let i = imp(vec![&y() - &c(1), &-y() - &c(1)], cons);
        let d = farkas_premise_sat(&i, "z");
        assert!(d.alt.is_none());
        assert_eq!(d.main.len(), 2);
        let mut val = Valuation::new();
        for (k, v) in [("a", 3), ("b", 2), ("z.0", 2), ("z.1", 0)] {
            val.insert(k, int(v));
        }
        assert!(d.main.iter().all(|at| at.holds(&val).unwrap()));
    }

    #[test]
    fn degree_reduction() {
        let p = |n: &str| Poly::param(Param::new(n, ParamKind::Control));
        let cubic = &(&p("a") * &p("b")) * &p("c");
        let sys = ConstraintSystem {
            vars: vec![],
            constraints: vec![Constraint::Atom(PolyAtom::new(&cubic - &Poly::one(), Rel::Eq))],
        };
        let red = reduce_degree(&sys);
        assert_eq!(red.degree(), 2);
        let mut val = Valuation::new();
        val.insert("a", int(1));
        val.insert("b", int(1));
        val.insert("c", int(1));
        complete_auxiliaries(&red, &mut val);
        red.check(&val).unwrap();
    }
}
