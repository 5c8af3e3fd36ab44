//! Exact symbolic arithmetic.
//!
//! Everything the synthesizer manipulates is an affine form over the state
//! vector whose coefficients are polynomials over named parameters
//! (certificate, invariant and control unknowns, Farkas multipliers, ...).
//! All constants are arbitrary-precision rationals; nothing in this module
//! rounds.

mod parse;
mod poly;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::{Add, Neg, Sub};
use std::sync::Arc;

use num_bigint::BigInt;
use num_traits::{One, Signed, Zero};
use thiserror::Error;

pub use parse::{parse_atoms, parse_expr, Atom, Guard, ModeSet, Rel, Scope, Symbol};
pub use poly::{Monomial, Poly};

pub type Rational = num_rational::BigRational;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ExprError {
    #[error("no value bound for parameter `{0}`")]
    Unbound(String),
    #[error("dimension mismatch: expected {expected} entries, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("expression is not affine in the state variables")]
    NonLinear,
    #[error("division by a non-constant expression")]
    NonConstantDivisor,
    #[error("division by zero")]
    DivisionByZero,
    #[error("column {col}: {msg}")]
    Syntax { col: usize, msg: String },
}

/// Builds `num / den` from machine integers.
pub fn rat(num: i64, den: i64) -> Rational {
    Rational::new(BigInt::from(num), BigInt::from(den))
}

pub fn int(n: i64) -> Rational {
    Rational::from_integer(BigInt::from(n))
}

/// Parses `3`, `-1/2`, `0.25`, `1e3` or `2.5e-2` as an exact rational.
pub fn parse_rational(text: &str) -> Option<Rational> {
    let s = text.trim();
    if let Some((n, d)) = s.split_once('/') {
        let n = parse_rational(n)?;
        let d = parse_rational(d)?;
        if d.is_zero() {
            return None;
        }
        return Some(n / d);
    }
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let (mantissa, exp) = match body.find(['e', 'E']) {
        Some(i) => (&body[..i], body[i + 1..].parse::<i32>().ok()?),
        None => (body, 0),
    };
    let (int_part, frac_part) = mantissa.split_once('.').unwrap_or((mantissa, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.bytes().all(|b| b.is_ascii_digit()) || !frac_part.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let digits = format!("{int_part}{frac_part}");
    let num: BigInt = if digits.is_empty() { BigInt::zero() } else { digits.parse().ok()? };
    let scale = exp - frac_part.len() as i32;
    let ten = BigInt::from(10);
    let mut value = Rational::from_integer(num);
    if scale >= 0 {
        value *= Rational::from_integer(num_traits::pow(ten, scale as usize));
    } else {
        value /= Rational::from_integer(num_traits::pow(ten, (-scale) as usize));
    }
    Some(if neg { -value } else { value })
}

/// Canonical text for a rational: `3`, `-1/2`.
pub fn fmt_rational(r: &Rational) -> String {
    if r.is_integer() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

pub mod rational_serde {
    //! Serializes rationals as their canonical `p/q` text.
    use super::{fmt_rational, parse_rational, Rational};
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(r: &Rational, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&fmt_rational(r))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Rational, D::Error> {
        let text = String::deserialize(d)?;
        parse_rational(&text).ok_or_else(|| D::Error::custom(format!("not a rational: {text}")))
    }
}

/// Role of an existential (or universally quantified disturbance) symbol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamKind {
    Certificate,
    Invariant,
    Control,
    Slack,
    Multiplier,
    Disturbance,
    Auxiliary,
}

/// A named parameter. Names are unique within one synthesis problem.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Param {
    name: Arc<str>,
    kind: ParamKind,
}

impl Param {
    pub fn new(name: impl Into<Arc<str>>, kind: ParamKind) -> Self {
        Param { name: name.into(), kind }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> ParamKind {
        self.kind
    }
}

impl fmt::Display for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

/// Assignment of rationals to parameter names.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Valuation(BTreeMap<Arc<str>, Rational>);

impl Valuation {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<Arc<str>>, value: Rational) {
        self.0.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Rational> {
        self.0.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.0.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Rational)> {
        self.0.iter().map(|(k, v)| (&**k, v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Entries of `other` override entries of `self`.
    pub fn merged(&self, other: &Valuation) -> Valuation {
        let mut out = self.clone();
        for (k, v) in &other.0 {
            out.0.insert(k.clone(), v.clone());
        }
        out
    }
}

impl FromIterator<(Arc<str>, Rational)> for Valuation {
    fn from_iter<T: IntoIterator<Item = (Arc<str>, Rational)>>(iter: T) -> Self {
        Valuation(iter.into_iter().collect())
    }
}

/// Affine form `sum_i c_i(params) * x_i + c_0(params)`.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LinForm {
    coeffs: BTreeMap<usize, Poly>,
    constant: Poly,
}

impl LinForm {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: Poly) -> Self {
        LinForm { coeffs: BTreeMap::new(), constant: c }
    }

    pub fn rational(r: Rational) -> Self {
        Self::constant(Poly::constant(r))
    }

    pub fn var(index: usize) -> Self {
        let mut coeffs = BTreeMap::new();
        coeffs.insert(index, Poly::one());
        LinForm { coeffs, constant: Poly::zero() }
    }

    pub fn param(p: Param) -> Self {
        Self::constant(Poly::param(p))
    }

    /// Concrete affine form from dense coefficients.
    pub fn from_concrete(coeffs: &[Rational], constant: Rational) -> Self {
        let mut form = LinForm::rational(constant);
        for (i, c) in coeffs.iter().enumerate() {
            if !c.is_zero() {
                form.coeffs.insert(i, Poly::constant(c.clone()));
            }
        }
        form
    }

    pub fn from_parts(coeffs: impl IntoIterator<Item = (usize, Poly)>, constant: Poly) -> Self {
        let mut out = LinForm { coeffs: BTreeMap::new(), constant };
        for (i, c) in coeffs {
            out.add_coeff(i, c);
        }
        out
    }

    fn add_coeff(&mut self, index: usize, c: Poly) {
        if c.is_zero() {
            return;
        }
        let entry = self.coeffs.entry(index).or_insert_with(Poly::zero);
        *entry = &*entry + &c;
        if entry.is_zero() {
            self.coeffs.remove(&index);
        }
    }

    pub fn coeff(&self, index: usize) -> Poly {
        self.coeffs.get(&index).cloned().unwrap_or_default()
    }

    pub fn coeff_ref(&self, index: usize) -> Option<&Poly> {
        self.coeffs.get(&index)
    }

    pub fn constant_term(&self) -> &Poly {
        &self.constant
    }

    pub fn var_terms(&self) -> impl Iterator<Item = (usize, &Poly)> {
        self.coeffs.iter().map(|(i, p)| (*i, p))
    }

    /// One past the largest variable index used, or 0.
    pub fn var_bound(&self) -> usize {
        self.coeffs.keys().next_back().map_or(0, |i| i + 1)
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty() && self.constant.is_zero()
    }

    /// True when no state variable occurs.
    pub fn is_state_free(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn is_param_free(&self) -> bool {
        self.constant.is_constant() && self.coeffs.values().all(Poly::is_constant)
    }

    pub fn params(&self) -> BTreeSet<Param> {
        let mut out = self.constant.params();
        for c in self.coeffs.values() {
            out.extend(c.params());
        }
        out
    }

    pub fn mentions_kind(&self, kind: ParamKind) -> bool {
        self.params().iter().any(|p| p.kind() == kind)
    }

    /// Maximum total parameter degree over all coefficients.
    pub fn param_degree(&self) -> u32 {
        self.coeffs.values().chain(std::iter::once(&self.constant)).map(Poly::degree).max().unwrap_or(0)
    }

    pub fn scale(&self, factor: &Poly) -> LinForm {
        if factor.is_zero() {
            return LinForm::zero();
        }
        LinForm::from_parts(self.coeffs.iter().map(|(i, c)| (*i, c * factor)), &self.constant * factor)
    }

    pub fn scale_rational(&self, factor: &Rational) -> LinForm {
        self.scale(&Poly::constant(factor.clone()))
    }

    /// Product of two forms, defined when at least one side is state-free.
    pub fn mul(&self, other: &LinForm) -> Result<LinForm, ExprError> {
        if self.is_state_free() {
            Ok(other.scale(&self.constant))
        } else if other.is_state_free() {
            Ok(self.scale(&other.constant))
        } else {
            Err(ExprError::NonLinear)
        }
    }

    /// Replaces variable `i` by `image[i]`.
    pub fn substitute_state(&self, image: &[LinForm]) -> Result<LinForm, ExprError> {
        if self.var_bound() > image.len() {
            return Err(ExprError::Dimension { expected: self.var_bound(), got: image.len() });
        }
        let mut out = LinForm::constant(self.constant.clone());
        for (i, c) in &self.coeffs {
            out = &out + &image[*i].scale(c);
        }
        Ok(out)
    }

    pub fn eval(&self, params: &Valuation, state: &[Rational]) -> Result<Rational, ExprError> {
        if self.var_bound() > state.len() {
            return Err(ExprError::Dimension { expected: self.var_bound(), got: state.len() });
        }
        let mut acc = self.constant.eval(params)?;
        for (i, c) in &self.coeffs {
            acc += c.eval(params)? * &state[*i];
        }
        Ok(acc)
    }

    /// Substitutes the parameters bound in `params`, leaving the rest symbolic.
    pub fn partial_eval(&self, params: &Valuation) -> LinForm {
        LinForm::from_parts(
            self.coeffs.iter().map(|(i, c)| (*i, c.partial_eval(params))),
            self.constant.partial_eval(params),
        )
    }

    /// Dense concrete coefficients over `dim` variables, if parameter-free.
    pub fn to_concrete(&self, dim: usize) -> Option<(Vec<Rational>, Rational)> {
        if !self.is_param_free() || self.var_bound() > dim {
            return None;
        }
        let mut coeffs = vec![Rational::zero(); dim];
        for (i, c) in &self.coeffs {
            coeffs[*i] = c.as_constant()?;
        }
        Some((coeffs, self.constant.as_constant()?))
    }

    /// Moves a parameter occurring only affinely into the variable slot `index`.
    /// Fails when the parameter multiplies a state variable or appears with degree > 1.
    pub fn lift_param_to_var(&self, param: &Param, index: usize) -> Result<LinForm, ExprError> {
        let mut coeffs: Vec<(usize, Poly)> = Vec::new();
        for (i, c) in &self.coeffs {
            if c.params().contains(param) {
                return Err(ExprError::NonLinear);
            }
            coeffs.push((*i, c.clone()));
        }
        let (with, without) = self.constant.split_linear(param).ok_or(ExprError::NonLinear)?;
        coeffs.push((index, with));
        Ok(LinForm::from_parts(coeffs, without))
    }

    /// Renders with the given variable names (`x0`, `x1`, ... for missing names).
    pub fn display_with<'a>(&'a self, names: &'a [String]) -> impl fmt::Display + 'a {
        DisplayForm { form: self, names }
    }
}

struct DisplayForm<'a> {
    form: &'a LinForm,
    names: &'a [String],
}

impl fmt::Display for DisplayForm<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (i, c) in &self.form.coeffs {
            let name = self.names.get(*i).cloned().unwrap_or_else(|| format!("x{i}"));
            write_term(f, &mut first, c, Some(&name))?;
        }
        if !self.form.constant.is_zero() || first {
            write_term(f, &mut first, &self.form.constant, None)?;
        }
        Ok(())
    }
}

fn write_term(f: &mut fmt::Formatter<'_>, first: &mut bool, coeff: &Poly, var: Option<&str>) -> fmt::Result {
    match (coeff.as_constant(), var) {
        (Some(c), Some(v)) => {
            let (neg, mag) = (c.is_negative(), c.abs());
            sign(f, first, neg)?;
            if mag.is_one() {
                write!(f, "{v}")
            } else {
                write!(f, "{}*{v}", fmt_rational(&mag))
            }
        }
        (Some(c), None) => {
            sign(f, first, c.is_negative())?;
            write!(f, "{}", fmt_rational(&c.abs()))
        }
        (None, Some(v)) => {
            sign(f, first, false)?;
            write!(f, "({coeff})*{v}")
        }
        (None, None) => {
            sign(f, first, false)?;
            write!(f, "{coeff}")
        }
    }
}

fn sign(f: &mut fmt::Formatter<'_>, first: &mut bool, negative: bool) -> fmt::Result {
    let out = match (*first, negative) {
        (true, true) => "-",
        (true, false) => "",
        (false, true) => " - ",
        (false, false) => " + ",
    };
    *first = false;
    f.write_str(out)
}

impl fmt::Display for LinForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.display_with(&[]))
    }
}

impl Add for &LinForm {
    type Output = LinForm;

    fn add(self, rhs: &LinForm) -> LinForm {
        let mut out = self.clone();
        for (i, c) in &rhs.coeffs {
            out.add_coeff(*i, c.clone());
        }
        out.constant = &out.constant + &rhs.constant;
        out
    }
}

impl Sub for &LinForm {
    type Output = LinForm;

    fn sub(self, rhs: &LinForm) -> LinForm {
        self + &(-rhs)
    }
}

impl Neg for &LinForm {
    type Output = LinForm;

    fn neg(self) -> LinForm {
        LinForm { coeffs: self.coeffs.iter().map(|(i, c)| (*i, -c)).collect(), constant: -&self.constant }
    }
}

impl Add for LinForm {
    type Output = LinForm;

    fn add(self, rhs: LinForm) -> LinForm {
        &self + &rhs
    }
}

impl Sub for LinForm {
    type Output = LinForm;

    fn sub(self, rhs: LinForm) -> LinForm {
        &self - &rhs
    }
}

impl Neg for LinForm {
    type Output = LinForm;

    fn neg(self) -> LinForm {
        -&self
    }
}

/// Adds two forms; kept as a named operation for callers that prefer it.
pub fn lin_add(a: &LinForm, b: &LinForm) -> LinForm {
    a + b
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(name: &str) -> Param {
        Param::new(name, ParamKind::Certificate)
    }

    fn x() -> LinForm {
        LinForm::var(0)
    }

    #[test]
    fn cancellation() {
        let a = &x() + &LinForm::rational(int(1));
        let b = -x();
        assert_eq!(lin_add(&a, &b), LinForm::rational(int(1)));
    }

    #[test]
    fn symbolic_merge() {
        let alpha = LinForm::param(p("alpha"));
        let beta = LinForm::param(p("beta"));
        let a = &alpha.mul(&x()).unwrap() + &beta;
        let sum = lin_add(&a, &x());
        let expected_coeff = &Poly::param(p("alpha")) + &Poly::one();
        assert_eq!(sum.coeff(0), expected_coeff);
        assert_eq!(sum.constant_term(), &Poly::param(p("beta")));
    }

    #[test]
    fn halves_merge_checked_by_evaluation() {
        let half = rat(1, 2);
        let a = &x().scale_rational(&half) + &LinForm::rational(int(1));
        let b = x().scale_rational(&half);
        let sum = lin_add(&a, &b);
        let expected = &x() + &LinForm::rational(int(1));
        for v in [-1, 0, 1] {
            let s = [int(v)];
            assert_eq!(sum.eval(&Valuation::new(), &s).unwrap(), expected.eval(&Valuation::new(), &s).unwrap());
        }
        assert_eq!(sum, expected);
    }

    #[test]
    fn substitute_halving_map() {
        let form = &x() + &LinForm::rational(int(1));
        let image = [x().scale_rational(&rat(1, 2))];
        let out = form.substitute_state(&image).unwrap();
        assert_eq!(out, &x().scale_rational(&rat(1, 2)) + &LinForm::rational(int(1)));
    }

    #[test]
    fn substitute_identity() {
        let form = &LinForm::param(p("a")).mul(&x()).unwrap() + &LinForm::rational(rat(3, 7));
        assert_eq!(form.substitute_state(&[x()]).unwrap(), form);
    }

    #[test]
    fn substitute_control_parameter_multiplies() {
        let alpha = Poly::param(p("alpha0"));
        let beta = Poly::param(p("beta0"));
        let kappa = Param::new("kappa", ParamKind::Control);
        let form = LinForm::from_parts([(0, alpha.clone())], beta.clone());
        let image = [LinForm::param(kappa.clone()).mul(&x()).unwrap()];
        let out = form.substitute_state(&image).unwrap();
        assert_eq!(out.coeff(0), &alpha * &Poly::param(kappa));
        assert_eq!(out.constant_term(), &beta);
        assert_eq!(out.param_degree(), 2);
    }

    #[test]
    fn substitute_dimension_mismatch() {
        let form = LinForm::var(1);
        assert!(matches!(form.substitute_state(&[x()]), Err(ExprError::Dimension { .. })));
    }

    #[test]
    fn eval_examples() {
        let form = &x() + &LinForm::rational(int(1));
        assert_eq!(form.eval(&Valuation::new(), &[int(100)]).unwrap(), int(101));

        let alpha = p("alpha");
        let beta = p("beta");
        let form = &LinForm::param(alpha.clone()).mul(&x()).unwrap() + &LinForm::param(beta.clone());
        let mut val = Valuation::new();
        val.insert(alpha.name(), rat(-1, 32));
        val.insert(beta.name(), rat(4787, 512));
        // -280/32 + 4787/512 = -4480/512 + 4787/512
        assert_eq!(form.eval(&val, &[int(280)]).unwrap(), rat(307, 512));

        assert!(LinForm::zero().eval(&Valuation::new(), &[int(5)]).unwrap().is_zero());
    }

    #[test]
    fn eval_missing_binding() {
        let form = LinForm::param(p("theta"));
        assert_eq!(form.eval(&Valuation::new(), &[]), Err(ExprError::Unbound("theta".into())));
    }

    #[test]
    fn decimal_literals_are_exact() {
        assert_eq!(parse_rational("0.1").unwrap(), rat(1, 10));
        assert_eq!(parse_rational("-1/32").unwrap(), rat(-1, 32));
        assert_eq!(parse_rational("5.24").unwrap(), rat(524, 100));
        assert_eq!(parse_rational("1e3").unwrap(), int(1000));
        assert_eq!(parse_rational("2.5e-2").unwrap(), rat(1, 40));
        assert!(parse_rational("1/0").is_none());
        assert!(parse_rational("abc").is_none());
    }

    #[test]
    fn lift_disturbance_to_variable() {
        let w = Param::new("w", ParamKind::Disturbance);
        let form = &x().scale_rational(&rat(1, 2)) + &LinForm::param(w.clone());
        let lifted = form.lift_param_to_var(&w, 1).unwrap();
        assert_eq!(lifted, &x().scale_rational(&rat(1, 2)) + &LinForm::var(1));
        let bilinear = LinForm::param(w.clone()).mul(&x()).unwrap();
        assert_eq!(bilinear.lift_param_to_var(&w, 1), Err(ExprError::NonLinear));
    }

    #[test]
    fn display_roundtrip_text() {
        let form = &x().scale_rational(&rat(-1, 32)) + &LinForm::rational(rat(4787, 512));
        assert_eq!(form.display_with(&["x".into()]).to_string(), "-1/32*x + 4787/512");
        assert_eq!(LinForm::zero().to_string(), "0");
    }
}
