use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use num_traits::{One, Signed, Zero};

use super::{fmt_rational, ExprError, Param, Rational, Valuation};

/// Product of parameters with positive exponents, sorted by parameter.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Monomial(Vec<(Param, u32)>);

impl Monomial {
    pub fn one() -> Self {
        Monomial(Vec::new())
    }

    pub fn single(p: Param) -> Self {
        Monomial(vec![(p, 1)])
    }

    pub fn from_factors(factors: impl IntoIterator<Item = (Param, u32)>) -> Self {
        let mut map: BTreeMap<Param, u32> = BTreeMap::new();
        for (p, e) in factors {
            if e > 0 {
                *map.entry(p).or_insert(0) += e;
            }
        }
        Monomial(map.into_iter().collect())
    }

    pub fn factors(&self) -> &[(Param, u32)] {
        &self.0
    }

    pub fn is_one(&self) -> bool {
        self.0.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().map(|(_, e)| e).sum()
    }

    pub fn exponent(&self, p: &Param) -> u32 {
        self.0.iter().find(|(q, _)| q == p).map_or(0, |(_, e)| *e)
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        Monomial::from_factors(self.0.iter().chain(other.0.iter()).cloned())
    }

    /// The monomial with `p` removed entirely.
    pub fn without(&self, p: &Param) -> Monomial {
        Monomial(self.0.iter().filter(|(q, _)| q != p).cloned().collect())
    }

    pub fn eval(&self, val: &Valuation) -> Result<Rational, ExprError> {
        let mut acc = Rational::one();
        for (p, e) in &self.0 {
            let v = val.get(p.name()).ok_or_else(|| ExprError::Unbound(p.name().to_string()))?;
            acc *= num_traits::pow(v.clone(), *e as usize);
        }
        Ok(acc)
    }
}

impl fmt::Display for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("1");
        }
        for (i, (p, e)) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("*")?;
            }
            if *e == 1 {
                write!(f, "{p}")?;
            } else {
                write!(f, "{p}^{e}")?;
            }
        }
        Ok(())
    }
}

/// Polynomial over parameters with rational coefficients. Zero coefficients
/// are never stored, so structural equality is polynomial equality.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Poly(BTreeMap<Monomial, Rational>);

impl Poly {
    pub fn zero() -> Self {
        Poly(BTreeMap::new())
    }

    pub fn one() -> Self {
        Self::constant(Rational::one())
    }

    pub fn constant(r: Rational) -> Self {
        let mut m = BTreeMap::new();
        if !r.is_zero() {
            m.insert(Monomial::one(), r);
        }
        Poly(m)
    }

    pub fn param(p: Param) -> Self {
        Self::term(Monomial::single(p), Rational::one())
    }

    pub fn term(m: Monomial, c: Rational) -> Self {
        let mut map = BTreeMap::new();
        if !c.is_zero() {
            map.insert(m, c);
        }
        Poly(map)
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &Rational)> {
        self.0.iter()
    }

    pub fn num_terms(&self) -> usize {
        self.0.len()
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_constant(&self) -> bool {
        self.0.keys().all(Monomial::is_one)
    }

    pub fn as_constant(&self) -> Option<Rational> {
        if self.is_constant() {
            Some(self.0.get(&Monomial::one()).cloned().unwrap_or_else(Rational::zero))
        } else {
            None
        }
    }

    pub fn constant_part(&self) -> Rational {
        self.0.get(&Monomial::one()).cloned().unwrap_or_else(Rational::zero)
    }

    pub fn degree(&self) -> u32 {
        self.0.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    pub fn params(&self) -> BTreeSet<Param> {
        self.0.keys().flat_map(|m| m.factors().iter().map(|(p, _)| p.clone())).collect()
    }

    fn add_term(&mut self, m: Monomial, c: Rational) {
        if c.is_zero() {
            return;
        }
        let entry = self.0.entry(m.clone()).or_insert_with(Rational::zero);
        *entry += c;
        if entry.is_zero() {
            self.0.remove(&m);
        }
    }

    pub fn scale(&self, c: &Rational) -> Poly {
        if c.is_zero() {
            return Poly::zero();
        }
        Poly(self.0.iter().map(|(m, k)| (m.clone(), k * c)).collect())
    }

    pub fn eval(&self, val: &Valuation) -> Result<Rational, ExprError> {
        let mut acc = Rational::zero();
        for (m, c) in &self.0 {
            acc += m.eval(val)? * c;
        }
        Ok(acc)
    }

    pub fn partial_eval(&self, val: &Valuation) -> Poly {
        let mut out = Poly::zero();
        for (m, c) in &self.0 {
            let mut coeff = c.clone();
            let mut rest = Vec::new();
            for (p, e) in m.factors() {
                match val.get(p.name()) {
                    Some(v) => coeff *= num_traits::pow(v.clone(), *e as usize),
                    None => rest.push((p.clone(), *e)),
                }
            }
            out.add_term(Monomial::from_factors(rest), coeff);
        }
        out
    }

    /// Writes `self = q * p + r` where neither `q` nor `r` mention `p`.
    /// Returns `None` if `p` occurs with exponent above one.
    pub fn split_linear(&self, p: &Param) -> Option<(Poly, Poly)> {
        let mut with = Poly::zero();
        let mut without = Poly::zero();
        for (m, c) in &self.0 {
            match m.exponent(p) {
                0 => without.add_term(m.clone(), c.clone()),
                1 => with.add_term(m.without(p), c.clone()),
                _ => return None,
            }
        }
        Some((with, without))
    }
}

impl fmt::Display for Poly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("0");
        }
        for (i, (m, c)) in self.0.iter().enumerate() {
            let neg = c.is_negative();
            let mag = c.abs();
            match (i, neg) {
                (0, true) => f.write_str("-")?,
                (0, false) => {}
                (_, true) => f.write_str(" - ")?,
                (_, false) => f.write_str(" + ")?,
            }
            if m.is_one() {
                f.write_str(&fmt_rational(&mag))?;
            } else if mag.is_one() {
                write!(f, "{m}")?;
            } else {
                write!(f, "{}*{m}", fmt_rational(&mag))?;
            }
        }
        Ok(())
    }
}

impl Add for &Poly {
    type Output = Poly;

    fn add(self, rhs: &Poly) -> Poly {
        let mut out = self.clone();
        for (m, c) in &rhs.0 {
            out.add_term(m.clone(), c.clone());
        }
        out
    }
}

impl Sub for &Poly {
    type Output = Poly;

    fn sub(self, rhs: &Poly) -> Poly {
        let mut out = self.clone();
        for (m, c) in &rhs.0 {
            out.add_term(m.clone(), -c);
        }
        out
    }
}

impl Mul for &Poly {
    type Output = Poly;

    fn mul(self, rhs: &Poly) -> Poly {
        let mut out = Poly::zero();
        for (m1, c1) in &self.0 {
            for (m2, c2) in &rhs.0 {
                out.add_term(m1.mul(m2), c1 * c2);
            }
        }
        out
    }
}

impl Neg for &Poly {
    type Output = Poly;

    fn neg(self) -> Poly {
        Poly(self.0.iter().map(|(m, c)| (m.clone(), -c)).collect())
    }
}

impl Add for Poly {
    type Output = Poly;

    fn add(self, rhs: Poly) -> Poly {
        &self + &rhs
    }
}

impl Sub for Poly {
    type Output = Poly;

    fn sub(self, rhs: Poly) -> Poly {
        &self - &rhs
    }
}

impl Mul for Poly {
    type Output = Poly;

    fn mul(self, rhs: Poly) -> Poly {
        &self * &rhs
    }
}

impl Neg for Poly {
    type Output = Poly;

    fn neg(self) -> Poly {
        -&self
    }
}
