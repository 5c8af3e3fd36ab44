//! Exact two-phase primal simplex over rationals with Bland's rule.
//!
//! [`Lp`] holds a linear program over free or nonnegative variables with
//! `<=`, `>=`, `=`, `<` and `>` rows. Strict rows are decided exactly by
//! maximizing a shared slack `t <= 1` that each strict row must clear.

use num_traits::{One, Signed, Zero};

use crate::expr::Rational;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cmp {
    Le,
    Ge,
    Eq,
    Lt,
    Gt,
}

impl Cmp {
    pub fn is_strict(self) -> bool {
        matches!(self, Cmp::Lt | Cmp::Gt)
    }

    pub fn holds(self, lhs: &Rational, rhs: &Rational) -> bool {
        match self {
            Cmp::Le => lhs <= rhs,
            Cmp::Ge => lhs >= rhs,
            Cmp::Eq => lhs == rhs,
            Cmp::Lt => lhs < rhs,
            Cmp::Gt => lhs > rhs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Row {
    pub coeffs: Vec<(usize, Rational)>,
    pub cmp: Cmp,
    pub rhs: Rational,
}

impl Row {
    pub fn new(coeffs: Vec<(usize, Rational)>, cmp: Cmp, rhs: Rational) -> Self {
        Row { coeffs, cmp, rhs }
    }

    pub fn lhs(&self, point: &[Rational]) -> Rational {
        self.coeffs.iter().map(|(j, c)| c * &point[*j]).sum()
    }

    pub fn satisfied(&self, point: &[Rational]) -> bool {
        self.cmp.holds(&self.lhs(point), &self.rhs)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LpOutcome {
    Optimal { point: Vec<Rational>, value: Rational },
    Unbounded,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Feasibility {
    Feasible(Vec<Rational>),
    /// Infeasible; for systems without strict rows a Farkas ray is attached.
    Infeasible(Option<Vec<Rational>>),
}

impl Feasibility {
    pub fn is_feasible(&self) -> bool {
        matches!(self, Feasibility::Feasible(_))
    }

    pub fn point(&self) -> Option<&[Rational]> {
        match self {
            Feasibility::Feasible(p) => Some(p),
            Feasibility::Infeasible(_) => None,
        }
    }
}

/// A linear program. Variables are nonnegative unless marked free.
#[derive(Debug, Clone, Default)]
pub struct Lp {
    free: Vec<bool>,
    rows: Vec<Row>,
}

impl Lp {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, free: bool) -> usize {
        self.free.push(free);
        self.free.len() - 1
    }

    pub fn add_vars(&mut self, count: usize, free: bool) -> std::ops::Range<usize> {
        let start = self.free.len();
        self.free.extend(std::iter::repeat_n(free, count));
        start..self.free.len()
    }

    pub fn num_vars(&self) -> usize {
        self.free.len()
    }

    pub fn is_free(&self, var: usize) -> bool {
        self.free[var]
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn add_row(&mut self, coeffs: Vec<(usize, Rational)>, cmp: Cmp, rhs: Rational) {
        let mut merged: Vec<(usize, Rational)> = Vec::with_capacity(coeffs.len());
        let mut sorted = coeffs;
        sorted.sort_by_key(|(j, _)| *j);
        for (j, c) in sorted {
            assert!(j < self.free.len(), "row references undeclared variable {j}");
            match merged.last_mut() {
                Some((k, acc)) if *k == j => *acc += c,
                _ => merged.push((j, c)),
            }
        }
        merged.retain(|(_, c)| !c.is_zero());
        self.rows.push(Row { coeffs: merged, cmp, rhs });
    }

    /// Checks a point against sign restrictions and every row, exactly.
    pub fn satisfied_by(&self, point: &[Rational]) -> bool {
        point.len() == self.free.len()
            && point.iter().zip(&self.free).all(|(v, free)| *free || !v.is_negative())
            && self.rows.iter().all(|r| r.satisfied(point))
    }

    /// Decides feasibility, including strict rows.
    pub fn solve(&self) -> Feasibility {
        if !self.rows.iter().any(|r| r.cmp.is_strict()) {
            return match self.maximize(&[]) {
                LpOutcome::Optimal { point, .. } => Feasibility::Feasible(point),
                LpOutcome::Unbounded => unreachable!("zero objective cannot be unbounded"),
                LpOutcome::Infeasible => Feasibility::Infeasible(self.farkas_ray()),
            };
        }
        let mut relaxed = Lp { free: self.free.clone(), rows: Vec::new() };
        let t = relaxed.add_var(false);
        for r in &self.rows {
            let mut coeffs = r.coeffs.clone();
            let cmp = match r.cmp {
                Cmp::Lt => {
                    coeffs.push((t, Rational::one()));
                    Cmp::Le
                }
                Cmp::Gt => {
                    coeffs.push((t, -Rational::one()));
                    Cmp::Ge
                }
                other => other,
            };
            relaxed.rows.push(Row { coeffs, cmp, rhs: r.rhs.clone() });
        }
        relaxed.rows.push(Row { coeffs: vec![(t, Rational::one())], cmp: Cmp::Le, rhs: Rational::one() });
        match relaxed.maximize(&[(t, Rational::one())]) {
            LpOutcome::Optimal { mut point, value } if value.is_positive() => {
                point.truncate(self.free.len());
                Feasibility::Feasible(point)
            }
            _ => Feasibility::Infeasible(None),
        }
    }

    /// Maximizes `objective` over the non-strict rows. Strict rows are
    /// treated as their closures.
    pub fn maximize(&self, objective: &[(usize, Rational)]) -> LpOutcome {
        let n = self.free.len();
        // Column layout: for each variable a positive part, and for free
        // variables a negative part.
        let mut col_of = Vec::with_capacity(n);
        let mut ncols = 0;
        for &free in &self.free {
            col_of.push(ncols);
            ncols += if free { 2 } else { 1 };
        }
        let mut a: Vec<Vec<Rational>> = Vec::with_capacity(self.rows.len());
        let mut b: Vec<Rational> = Vec::with_capacity(self.rows.len());
        let mut kinds: Vec<Cmp> = Vec::with_capacity(self.rows.len());
        for r in &self.rows {
            let mut dense = vec![Rational::zero(); ncols];
            for (j, c) in &r.coeffs {
                dense[col_of[*j]] += c;
                if self.free[*j] {
                    dense[col_of[*j] + 1] -= c;
                }
            }
            let mut rhs = r.rhs.clone();
            let mut cmp = match r.cmp {
                Cmp::Lt => Cmp::Le,
                Cmp::Gt => Cmp::Ge,
                c => c,
            };
            if rhs.is_negative() {
                for v in dense.iter_mut() {
                    *v = -&*v;
                }
                rhs = -rhs;
                cmp = match cmp {
                    Cmp::Le => Cmp::Ge,
                    Cmp::Ge => Cmp::Le,
                    c => c,
                };
            }
            a.push(dense);
            b.push(rhs);
            kinds.push(cmp);
        }
        let mut c = vec![Rational::zero(); ncols];
        for (j, v) in objective {
            c[col_of[*j]] += v;
            if self.free[*j] {
                c[col_of[*j] + 1] -= v;
            }
        }
        match Tableau::solve(a, b, &kinds, c) {
            Outcome::Optimal(x, value) => {
                let point = (0..n)
                    .map(|j| if self.free[j] { &x[col_of[j]] - &x[col_of[j] + 1] } else { x[col_of[j]].clone() })
                    .collect();
                LpOutcome::Optimal { point, value }
            }
            Outcome::Unbounded => LpOutcome::Unbounded,
            Outcome::Infeasible => LpOutcome::Infeasible,
        }
    }

    /// For an infeasible system without strict rows, finds multipliers `y`
    /// (one per row; `>= 0` on inequality rows, free on equality rows) such
    /// that combining the rows as `sum y_i (a_i x - b_i) [<=|=] 0` (with `>=`
    /// rows negated first) yields `0 <= negative`.
    pub fn farkas_ray(&self) -> Option<Vec<Rational>> {
        if self.rows.iter().any(|r| r.cmp.is_strict()) {
            return None;
        }
        let mut aux = Lp::new();
        let ys: Vec<usize> = self.rows.iter().map(|r| aux.add_var(r.cmp == Cmp::Eq)).collect();
        let mut cols: Vec<Vec<(usize, Rational)>> = vec![Vec::new(); self.free.len()];
        let mut rhs_combo = Vec::new();
        for (i, r) in self.rows.iter().enumerate() {
            let sign = if r.cmp == Cmp::Ge { -Rational::one() } else { Rational::one() };
            for (j, c) in &r.coeffs {
                cols[*j].push((ys[i], c * &sign));
            }
            rhs_combo.push((ys[i], &r.rhs * &sign));
        }
        for (j, col) in cols.into_iter().enumerate() {
            let cmp = if self.free[j] { Cmp::Eq } else { Cmp::Ge };
            aux.add_row(col, cmp, Rational::zero());
        }
        aux.add_row(rhs_combo, Cmp::Le, -Rational::one());
        match aux.maximize(&[]) {
            LpOutcome::Optimal { point, .. } => Some(point),
            _ => None,
        }
    }

    /// Exact check of a ray produced by [`Lp::farkas_ray`].
    pub fn verify_ray(&self, y: &[Rational]) -> bool {
        if y.len() != self.rows.len() {
            return false;
        }
        let mut combo = vec![Rational::zero(); self.free.len()];
        let mut rhs = Rational::zero();
        for (r, yi) in self.rows.iter().zip(y) {
            if r.cmp.is_strict() || (r.cmp != Cmp::Eq && yi.is_negative()) {
                return false;
            }
            let sign = if r.cmp == Cmp::Ge { -Rational::one() } else { Rational::one() };
            for (j, c) in &r.coeffs {
                combo[*j] += c * yi * &sign;
            }
            rhs += &r.rhs * yi * &sign;
        }
        rhs.is_negative()
            && combo.iter().zip(&self.free).all(|(v, free)| if *free { v.is_zero() } else { !v.is_negative() })
    }
}

enum Outcome {
    Optimal(Vec<Rational>, Rational),
    Unbounded,
    Infeasible,
}

/// Dense tableau for `max c x` subject to `A x (<=|>=|=) b`, `b >= 0`, `x >= 0`.
struct Tableau {
    t: Vec<Vec<Rational>>,
    obj: Vec<Rational>,
    basis: Vec<usize>,
    width: usize,
    /// Columns that may never enter the basis.
    banned: Vec<bool>,
}

impl Tableau {
    fn solve(a: Vec<Vec<Rational>>, b: Vec<Rational>, kinds: &[Cmp], c: Vec<Rational>) -> Outcome {
        let m = a.len();
        let n = c.len();
        let slack_count = kinds.iter().filter(|k| **k != Cmp::Eq).count();
        let art_count = kinds.iter().filter(|k| **k != Cmp::Le).count();
        let width = n + slack_count + art_count;
        let mut t = Vec::with_capacity(m);
        let mut basis = Vec::with_capacity(m);
        let mut is_art = vec![false; width];
        let mut next_slack = n;
        let mut next_art = n + slack_count;
        for (i, mut row) in a.into_iter().enumerate() {
            row.resize(width + 1, Rational::zero());
            match kinds[i] {
                Cmp::Le => {
                    row[next_slack] = Rational::one();
                    basis.push(next_slack);
                    next_slack += 1;
                }
                Cmp::Ge => {
                    row[next_slack] = -Rational::one();
                    next_slack += 1;
                    row[next_art] = Rational::one();
                    is_art[next_art] = true;
                    basis.push(next_art);
                    next_art += 1;
                }
                _ => {
                    row[next_art] = Rational::one();
                    is_art[next_art] = true;
                    basis.push(next_art);
                    next_art += 1;
                }
            }
            row[width] = b[i].clone();
            t.push(row);
        }
        let mut tab = Tableau { t, obj: Vec::new(), basis, width, banned: vec![false; width] };

        if art_count > 0 {
            let phase1: Vec<Rational> =
                (0..width).map(|j| if is_art[j] { -Rational::one() } else { Rational::zero() }).collect();
            tab.set_objective(&phase1);
            if !tab.run() {
                unreachable!("phase one is bounded");
            }
            if tab.obj[width].is_negative() {
                return Outcome::Infeasible;
            }
            tab.evict_artificials(&is_art);
            tab.banned = is_art;
        }
        let mut full = c;
        full.resize(width, Rational::zero());
        tab.set_objective(&full);
        if !tab.run() {
            return Outcome::Unbounded;
        }
        let mut x = vec![Rational::zero(); n];
        for (i, &bv) in tab.basis.iter().enumerate() {
            if bv < n {
                x[bv] = tab.t[i][width].clone();
            }
        }
        Outcome::Optimal(x, tab.obj[width].clone())
    }

    fn set_objective(&mut self, c: &[Rational]) {
        let mut obj: Vec<Rational> = c.iter().map(|v| -v).collect();
        obj.push(Rational::zero());
        for (i, &bv) in self.basis.iter().enumerate() {
            let cb = &c[bv];
            if cb.is_zero() {
                continue;
            }
            for (o, v) in obj.iter_mut().zip(&self.t[i]) {
                if !v.is_zero() {
                    *o += cb * v;
                }
            }
        }
        self.obj = obj;
    }

    /// Runs primal simplex to optimality. Returns false when unbounded.
    fn run(&mut self) -> bool {
        loop {
            let entering = (0..self.width).find(|&j| !self.banned[j] && self.obj[j].is_negative());
            let Some(s) = entering else {
                return true;
            };
            let mut best: Option<(usize, Rational)> = None;
            for (i, row) in self.t.iter().enumerate() {
                if !row[s].is_positive() {
                    continue;
                }
                let ratio = &row[self.width] / &row[s];
                let better = match &best {
                    None => true,
                    Some((bi, br)) => ratio < *br || (ratio == *br && self.basis[i] < self.basis[*bi]),
                };
                if better {
                    best = Some((i, ratio));
                }
            }
            let Some((r, _)) = best else {
                return false;
            };
            self.pivot(r, s);
        }
    }

    fn pivot(&mut self, r: usize, s: usize) {
        let inv = Rational::one() / &self.t[r][s];
        for v in self.t[r].iter_mut() {
            if !v.is_zero() {
                *v *= &inv;
            }
        }
        let support: Vec<usize> = (0..=self.width).filter(|&j| !self.t[r][j].is_zero()).collect();
        let pivot_row = std::mem::take(&mut self.t[r]);
        for (i, row) in self.t.iter_mut().enumerate() {
            if i == r || row[s].is_zero() {
                continue;
            }
            let f = row[s].clone();
            for &j in &support {
                let delta = &f * &pivot_row[j];
                row[j] -= delta;
            }
        }
        if !self.obj[s].is_zero() {
            let f = self.obj[s].clone();
            for &j in &support {
                let delta = &f * &pivot_row[j];
                self.obj[j] -= delta;
            }
        }
        self.t[r] = pivot_row;
        self.basis[r] = s;
    }

    /// After a successful phase one, pivots basic artificials (at value zero)
    /// out of the basis, dropping rows that are linearly redundant.
    fn evict_artificials(&mut self, is_art: &[bool]) {
        let mut i = 0;
        while i < self.t.len() {
            if !is_art[self.basis[i]] {
                i += 1;
                continue;
            }
            match (0..self.width).find(|&j| !is_art[j] && !self.t[i][j].is_zero()) {
                Some(j) => {
                    self.pivot(i, j);
                    i += 1;
                }
                None => {
                    self.t.remove(i);
                    self.basis.remove(i);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{int, rat};

    #[test]
    fn infeasible_box_has_ray() {
        let mut lp = Lp::new();
        let x = lp.add_var(true);
        lp.add_row(vec![(x, int(1))], Cmp::Le, int(1));
        lp.add_row(vec![(x, int(1))], Cmp::Ge, int(2));
        match lp.solve() {
            Feasibility::Infeasible(Some(ray)) => {
                assert!(lp.verify_ray(&ray));
                assert_eq!(ray[0], ray[1]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn strict_rows_are_exact() {
        let mut lp = Lp::new();
        let x = lp.add_var(true);
        lp.add_row(vec![(x, int(1))], Cmp::Lt, int(1));
        lp.add_row(vec![(x, int(1))], Cmp::Ge, int(1));
        assert_eq!(lp.solve(), Feasibility::Infeasible(None));

        let mut lp = Lp::new();
        let x = lp.add_var(true);
        lp.add_row(vec![(x, int(1))], Cmp::Lt, int(1));
        lp.add_row(vec![(x, int(1))], Cmp::Gt, rat(99, 100));
        let p = lp.solve();
        assert!(p.is_feasible());
        assert!(lp.satisfied_by(p.point().unwrap()));
    }

    #[test]
    fn maximize_small() {
        // max x + y s.t. x + 2y <= 4, 3x + y <= 6
        let mut lp = Lp::new();
        let x = lp.add_var(false);
        let y = lp.add_var(false);
        lp.add_row(vec![(x, int(1)), (y, int(2))], Cmp::Le, int(4));
        lp.add_row(vec![(x, int(3)), (y, int(1))], Cmp::Le, int(6));
        match lp.maximize(&[(x, int(1)), (y, int(1))]) {
            LpOutcome::Optimal { point, value } => {
                assert_eq!(value, rat(14, 5));
                assert_eq!(point, vec![rat(8, 5), rat(6, 5)]);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(lp.maximize(&[(x, -int(1))]), LpOutcome::Optimal { point: vec![int(0), int(0)], value: int(0) });
    }

    #[test]
    fn unbounded_and_redundant_equalities() {
        let mut lp = Lp::new();
        let x = lp.add_var(true);
        let y = lp.add_var(true);
        lp.add_row(vec![(x, int(1)), (y, int(1))], Cmp::Eq, int(2));
        lp.add_row(vec![(x, int(2)), (y, int(2))], Cmp::Eq, int(4));
        assert_eq!(lp.maximize(&[(x, int(1))]), LpOutcome::Unbounded);
        let p = lp.solve();
        assert!(lp.satisfied_by(p.point().unwrap()));
    }

    #[test]
    fn degenerate_cycle_prone_instance_terminates() {
        // Beale's classic cycling example; Bland's rule must terminate.
        let mut lp = Lp::new();
        let v: Vec<usize> = lp.add_vars(4, false).collect();
        lp.add_row(vec![(v[0], rat(1, 4)), (v[1], int(-60)), (v[2], rat(-1, 25)), (v[3], int(9))], Cmp::Le, int(0));
        lp.add_row(vec![(v[0], rat(1, 2)), (v[1], int(-90)), (v[2], rat(-1, 50)), (v[3], int(3))], Cmp::Le, int(0));
        lp.add_row(vec![(v[2], int(1))], Cmp::Le, int(1));
        let obj = vec![(v[0], rat(3, 4)), (v[1], int(-150)), (v[2], rat(1, 50)), (v[3], int(-6))];
        match lp.maximize(&obj) {
            LpOutcome::Optimal { value, .. } => assert_eq!(value, rat(1, 20)),
            other => panic!("{other:?}"),
        }
    }
}
