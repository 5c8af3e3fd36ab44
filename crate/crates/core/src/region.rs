//! Parameter-free polyhedral regions (conjunctions of atoms over the state
//! vector) and the LP-backed checks built on them: emptiness, pairwise
//! disjointness and exhaustive cover.

use num_traits::Zero;

use crate::expr::{Atom, Guard, LinForm, Rational, Rel};
use crate::simplex::{Cmp, Feasibility, Lp};

/// Conjunction of parameter-free atoms over `dim` state variables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Region {
    pub dim: usize,
    pub atoms: Vec<Atom>,
}

impl Region {
    pub fn universe(dim: usize) -> Self {
        Region { dim, atoms: Vec::new() }
    }

    /// Panics when an atom carries parameters; callers substitute first.
    pub fn new(dim: usize, atoms: Vec<Atom>) -> Self {
        for a in &atoms {
            assert!(a.form.is_param_free(), "region atoms must be parameter-free: {}", a.form);
        }
        Region { dim, atoms }
    }

    pub fn from_guard(dim: usize, guard: &Guard) -> Self {
        Region::new(dim, guard.atoms.clone())
    }

    pub fn with(&self, more: impl IntoIterator<Item = Atom>) -> Region {
        let mut atoms = self.atoms.clone();
        atoms.extend(more);
        Region::new(self.dim, atoms)
    }

    pub fn contains(&self, point: &[Rational]) -> bool {
        self.atoms.iter().all(|a| {
            let v = a.form.eval(&Default::default(), point).expect("parameter-free atom");
            a.holds(&v)
        })
    }

    /// The region as LP rows over free variables `0..dim`.
    pub fn to_lp(&self) -> Lp {
        let mut lp = Lp::new();
        lp.add_vars(self.dim, true);
        for a in &self.atoms {
            push_atom(&mut lp, &a.form, a.rel, 0);
        }
        lp
    }

    /// An exact point in the region, if any.
    pub fn witness(&self) -> Option<Vec<Rational>> {
        match self.to_lp().solve() {
            Feasibility::Feasible(p) => Some(p),
            Feasibility::Infeasible(_) => None,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.witness().is_none()
    }

    /// Pieces partitioning the complement of `atom`.
    pub fn negate(atom: &Atom) -> Vec<Atom> {
        match atom.rel {
            Rel::Le => vec![Atom::lt(-&atom.form)],
            Rel::Lt => vec![Atom::le(-&atom.form)],
            Rel::Eq => vec![Atom::lt(atom.form.clone()), Atom::lt(-&atom.form)],
        }
    }
}

/// Adds `form REL 0` as an LP row, shifting state variable `i` to column `offset + i`.
pub fn push_atom(lp: &mut Lp, form: &LinForm, rel: Rel, offset: usize) {
    let (coeffs, constant) = form.to_concrete(form.var_bound()).expect("parameter-free atom");
    let row: Vec<(usize, Rational)> =
        coeffs.into_iter().enumerate().filter(|(_, c)| !c.is_zero()).map(|(i, c)| (offset + i, c)).collect();
    let cmp = match rel {
        Rel::Le => Cmp::Le,
        Rel::Lt => Cmp::Lt,
        Rel::Eq => Cmp::Eq,
    };
    lp.add_row(row, cmp, -constant);
}

/// First pair of regions that intersect, with a common point.
pub fn find_overlap(regions: &[Region]) -> Option<(usize, usize, Vec<Rational>)> {
    for i in 0..regions.len() {
        for j in i + 1..regions.len() {
            let both = regions[i].with(regions[j].atoms.iter().cloned());
            if let Some(p) = both.witness() {
                return Some((i, j, p));
            }
        }
    }
    None
}

/// A point of `within` covered by none of `regions`, if one exists.
///
/// The complement of each region is split into disjoint pieces
/// (`not a1`, `a1 and not a2`, ...) and explored depth-first with LP pruning.
pub fn find_gap(within: &Region, regions: &[Region]) -> Option<Vec<Rational>> {
    if within.is_empty() {
        return None;
    }
    let Some((first, rest)) = regions.split_first() else {
        return within.witness();
    };
    let mut prefix: Vec<Atom> = Vec::new();
    for atom in &first.atoms {
        for piece in Region::negate(atom) {
            let sub = within.with(prefix.iter().cloned().chain(std::iter::once(piece)));
            if let Some(p) = find_gap(&sub, rest) {
                return Some(p);
            }
        }
        prefix.push(atom.clone());
    }
    None
}

/// Renders a point as `x = 1, y = -1/2`.
pub fn fmt_point(names: &[String], point: &[Rational]) -> String {
    let parts: Vec<String> = point
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let name = names.get(i).cloned().unwrap_or_else(|| format!("x{i}"));
            format!("{name} = {}", crate::expr::fmt_rational(v))
        })
        .collect();
    if parts.is_empty() {
        "the empty state".to_string()
    } else {
        parts.join(", ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse_atoms, Scope};
    use num_traits::One;

    fn region(text: &str) -> Region {
        let scope = Scope::with_vars(&["x"]);
        Region::from_guard(1, &parse_atoms(text, &scope).unwrap())
    }

    #[test]
    fn overlap_witness() {
        let rs = [region("x >= 100"), region("x >= 50")];
        let (i, j, p) = find_overlap(&rs).unwrap();
        assert_eq!((i, j), (0, 1));
        assert!(rs[0].contains(&p) && rs[1].contains(&p));
    }

    #[test]
    fn strict_boundaries_cover() {
        let rs = [region("x >= 1"), region("-1 <= x < 1"), region("x < -1")];
        assert!(find_overlap(&rs).is_none());
        assert!(find_gap(&Region::universe(1), &rs).is_none());
        let gappy = [region("x > 1"), region("x < 1")];
        let p = find_gap(&Region::universe(1), &gappy).unwrap();
        assert_eq!(p, vec![Rational::one()]);
    }

    #[test]
    fn equality_complement() {
        let rs = [region("x = 0"), region("x > 0")];
        let p = find_gap(&Region::universe(1), &rs).unwrap();
        assert!(p[0] < Rational::zero());
    }
}
