//! Recursive-descent parser for affine expressions and guard conjunctions.
//!
//! Expressions: `+ - * / ^`, parentheses, exact decimal or fractional
//! literals, identifiers resolved through a [`Scope`]. Products require one
//! state-free factor; divisors must be nonzero constants.
//!
//! Guards: conjunctions (`&&` or `and`) of possibly chained comparisons
//! (`-1 <= x < 1`), `true`, `false`, and mode atoms `mode = m` or
//! `mode in {m1, m2}`.

use std::collections::{BTreeMap, BTreeSet};

use num_traits::{ToPrimitive, Zero};

use super::{parse_rational, ExprError, LinForm, Param, Poly, Rational};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Symbol {
    Var(usize),
    Param(Param),
    Const(Rational),
}

/// Name resolution for the parser.
#[derive(Debug, Clone, Default)]
pub struct Scope {
    symbols: BTreeMap<String, Symbol>,
    modes: BTreeSet<String>,
}

impl Scope {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_vars<S: AsRef<str>>(names: &[S]) -> Self {
        let mut s = Scope::new();
        for (i, n) in names.iter().enumerate() {
            s.bind(n.as_ref(), Symbol::Var(i));
        }
        s
    }

    pub fn bind(&mut self, name: &str, sym: Symbol) {
        self.symbols.insert(name.to_string(), sym);
    }

    pub fn add_mode(&mut self, name: &str) {
        self.modes.insert(name.to_string());
    }

    pub fn lookup(&self, name: &str) -> Option<&Symbol> {
        self.symbols.get(name)
    }

    pub fn has_mode(&self, name: &str) -> bool {
        self.modes.contains(name)
    }
}

/// Relation of an atom `form REL 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Rel {
    Le,
    Lt,
    Eq,
}

/// Normalized atom `form REL 0`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Atom {
    pub form: LinForm,
    pub rel: Rel,
}

impl Atom {
    pub fn le(form: LinForm) -> Self {
        Atom { form, rel: Rel::Le }
    }

    pub fn lt(form: LinForm) -> Self {
        Atom { form, rel: Rel::Lt }
    }

    pub fn eq(form: LinForm) -> Self {
        Atom { form, rel: Rel::Eq }
    }

    /// The unsatisfiable atom `1 <= 0`.
    pub fn falsum() -> Self {
        Atom::le(LinForm::rational(Rational::from_integer(1.into())))
    }

    pub fn holds(&self, value: &Rational) -> bool {
        match self.rel {
            Rel::Le => *value <= Rational::zero(),
            Rel::Lt => *value < Rational::zero(),
            Rel::Eq => value.is_zero(),
        }
    }
}

/// Set of admissible modes; `None` means every mode.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ModeSet(pub Option<BTreeSet<String>>);

impl ModeSet {
    pub fn all() -> Self {
        ModeSet(None)
    }

    pub fn only(names: impl IntoIterator<Item = String>) -> Self {
        ModeSet(Some(names.into_iter().collect()))
    }

    pub fn contains(&self, mode: &str) -> bool {
        self.0.as_ref().is_none_or(|s| s.contains(mode))
    }

    pub fn intersect(&self, other: &ModeSet) -> ModeSet {
        match (&self.0, &other.0) {
            (None, _) => other.clone(),
            (_, None) => self.clone(),
            (Some(a), Some(b)) => ModeSet(Some(a.intersection(b).cloned().collect())),
        }
    }
}

/// A conjunction of atoms restricted to a set of modes.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Guard {
    pub atoms: Vec<Atom>,
    pub modes: ModeSet,
}

impl Guard {
    pub fn top() -> Self {
        Guard::default()
    }

    pub fn conj(&self, other: &Guard) -> Guard {
        let mut atoms = self.atoms.clone();
        atoms.extend(other.atoms.iter().cloned());
        Guard { atoms, modes: self.modes.intersect(&other.modes) }
    }

    pub fn is_param_free(&self) -> bool {
        self.atoms.iter().all(|a| a.form.is_param_free())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(Rational),
    Ident(String),
    Op(&'static str),
}

fn lex(text: &str) -> Result<Vec<(Tok, usize)>, ExprError> {
    const OPS: [&str; 17] = ["<=", ">=", "==", "&&", "+", "-", "*", "/", "^", "(", ")", "<", ">", "=", "{", "}", ","];
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let col = text[..i].chars().count() + 1;
        if c.is_ascii_digit() || (c == b'.' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit)) {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    while j < bytes.len() && bytes[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let lit = &text[start..i];
            let value = parse_rational(lit).ok_or(ExprError::Syntax { col, msg: format!("bad number `{lit}`") })?;
            out.push((Tok::Num(value), col));
            continue;
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((Tok::Ident(text[start..i].to_string()), col));
            continue;
        }
        match OPS.iter().find(|op| text[i..].starts_with(**op)) {
            Some(op) => {
                out.push((Tok::Op(op), col));
                i += op.len();
            }
            None => {
                let ch = text[i..].chars().next().unwrap_or('?');
                return Err(ExprError::Syntax { col, msg: format!("unexpected character `{ch}`") });
            }
        }
    }
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    end_col: usize,
    scope: &'a Scope,
}

impl<'a> Parser<'a> {
    fn new(text: &str, scope: &'a Scope) -> Result<Self, ExprError> {
        Ok(Parser { toks: lex(text)?, pos: 0, end_col: text.chars().count() + 1, scope })
    }

    fn col(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end_col, |t| t.1)
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, ExprError> {
        Err(ExprError::Syntax { col: self.col(), msg: msg.into() })
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.0)
    }

    fn peek_op(&self) -> Option<&'static str> {
        match self.peek() {
            Some(Tok::Op(o)) => Some(o),
            _ => None,
        }
    }

    fn eat_op(&mut self, op: &str) -> bool {
        if self.peek_op() == Some(op) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn eat_ident(&mut self, word: &str) -> bool {
        if matches!(self.peek(), Some(Tok::Ident(w)) if w == word) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_op(&mut self, op: &str) -> Result<(), ExprError> {
        if self.eat_op(op) {
            Ok(())
        } else {
            self.err(format!("expected `{op}`"))
        }
    }

    fn at_end(&self) -> bool {
        self.pos >= self.toks.len()
    }

    fn expr(&mut self) -> Result<LinForm, ExprError> {
        let mut acc = self.term()?;
        loop {
            if self.eat_op("+") {
                acc = &acc + &self.term()?;
            } else if self.eat_op("-") {
                acc = &acc - &self.term()?;
            } else {
                return Ok(acc);
            }
        }
    }

    fn term(&mut self) -> Result<LinForm, ExprError> {
        let mut acc = self.unary()?;
        loop {
            let col = self.col();
            if self.eat_op("*") {
                let rhs = self.unary()?;
                acc = acc
                    .mul(&rhs)
                    .map_err(|_| ExprError::Syntax { col, msg: "product of two state-dependent factors".into() })?;
            } else if self.eat_op("/") {
                let rhs = self.unary()?;
                let d = match (rhs.is_state_free(), rhs.constant_term().as_constant()) {
                    (true, Some(d)) => d,
                    _ => return Err(ExprError::Syntax { col, msg: "divisor must be a constant".into() }),
                };
                if d.is_zero() {
                    return Err(ExprError::Syntax { col, msg: "division by zero".into() });
                }
                acc = acc.scale_rational(&(Rational::from_integer(1.into()) / d));
            } else {
                return Ok(acc);
            }
        }
    }

    fn unary(&mut self) -> Result<LinForm, ExprError> {
        if self.eat_op("-") {
            return Ok(-self.unary()?);
        }
        if self.eat_op("+") {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<LinForm, ExprError> {
        let base = self.primary()?;
        if !self.eat_op("^") {
            return Ok(base);
        }
        let col = self.col();
        let exp = match self.peek() {
            Some(Tok::Num(n)) if n.is_integer() => n.to_integer().to_u32(),
            _ => None,
        };
        let Some(exp) = exp else {
            return Err(ExprError::Syntax { col, msg: "exponent must be a nonnegative integer".into() });
        };
        self.pos += 1;
        if !base.is_state_free() && exp > 1 {
            return Err(ExprError::Syntax { col, msg: "power of a state-dependent expression".into() });
        }
        if exp == 0 {
            return Ok(LinForm::rational(Rational::from_integer(1.into())));
        }
        let p = base.constant_term().clone();
        let mut acc = Poly::one();
        for _ in 0..exp {
            acc = &acc * &p;
        }
        Ok(if base.is_state_free() { LinForm::constant(acc) } else { base })
    }

    fn primary(&mut self) -> Result<LinForm, ExprError> {
        let col = self.col();
        match self.peek().cloned() {
            Some(Tok::Num(n)) => {
                self.pos += 1;
                Ok(LinForm::rational(n))
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                match self.scope.lookup(&name) {
                    Some(Symbol::Var(i)) => Ok(LinForm::var(*i)),
                    Some(Symbol::Param(p)) => Ok(LinForm::param(p.clone())),
                    Some(Symbol::Const(c)) => Ok(LinForm::rational(c.clone())),
                    None => Err(ExprError::Syntax { col, msg: format!("unknown identifier `{name}`") }),
                }
            }
            Some(Tok::Op("(")) => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect_op(")")?;
                Ok(e)
            }
            _ => self.err("expected an expression"),
        }
    }

    fn rel_op(&mut self) -> Option<&'static str> {
        let op = self.peek_op()?;
        if matches!(op, "<=" | "<" | ">=" | ">" | "=" | "==") {
            self.pos += 1;
            Some(op)
        } else {
            None
        }
    }

    fn guard(&mut self) -> Result<Guard, ExprError> {
        let mut g = Guard::top();
        loop {
            self.literal(&mut g)?;
            if self.eat_op("&&") || self.eat_ident("and") {
                continue;
            }
            return Ok(g);
        }
    }

    fn literal(&mut self, g: &mut Guard) -> Result<(), ExprError> {
        if self.eat_ident("true") {
            return Ok(());
        }
        if self.eat_ident("false") {
            g.atoms.push(Atom::falsum());
            return Ok(());
        }
        if matches!(self.peek(), Some(Tok::Ident(w)) if w == "mode") && self.scope.lookup("mode").is_none() {
            self.pos += 1;
            let modes = self.mode_rhs()?;
            g.modes = g.modes.intersect(&ModeSet::only(modes));
            return Ok(());
        }
        // A parenthesised guard and a parenthesised expression both start
        // with `(`; try the comparison reading first.
        let save = self.pos;
        match self.comparison(g) {
            Ok(()) => Ok(()),
            Err(first) => {
                self.pos = save;
                if self.eat_op("(") {
                    if let Ok(inner) = self.guard() {
                        if self.eat_op(")") {
                            *g = g.conj(&inner);
                            return Ok(());
                        }
                    }
                }
                self.pos = save;
                Err(first)
            }
        }
    }

    fn mode_rhs(&mut self) -> Result<Vec<String>, ExprError> {
        let mut names = Vec::new();
        if self.eat_op("=") || self.eat_op("==") {
            names.push(self.mode_name()?);
        } else if self.eat_ident("in") {
            self.expect_op("{")?;
            loop {
                names.push(self.mode_name()?);
                if !self.eat_op(",") {
                    break;
                }
            }
            self.expect_op("}")?;
        } else {
            return self.err("expected `=` or `in` after `mode`");
        }
        Ok(names)
    }

    fn mode_name(&mut self) -> Result<String, ExprError> {
        let col = self.col();
        let name = match self.peek() {
            Some(Tok::Ident(n)) => n.clone(),
            Some(Tok::Num(n)) if n.is_integer() => n.to_integer().to_string(),
            _ => return self.err("expected a mode name"),
        };
        if !self.scope.has_mode(&name) {
            return Err(ExprError::Syntax { col, msg: format!("unknown mode `{name}`") });
        }
        self.pos += 1;
        Ok(name)
    }

    fn comparison(&mut self, g: &mut Guard) -> Result<(), ExprError> {
        let mut lhs = self.expr()?;
        let Some(mut op) = self.rel_op() else {
            return self.err("expected a comparison");
        };
        loop {
            let rhs = self.expr()?;
            g.atoms.push(match op {
                "<=" => Atom::le(&lhs - &rhs),
                "<" => Atom::lt(&lhs - &rhs),
                ">=" => Atom::le(&rhs - &lhs),
                ">" => Atom::lt(&rhs - &lhs),
                _ => Atom::eq(&lhs - &rhs),
            });
            match self.rel_op() {
                Some(next) => {
                    op = next;
                    lhs = rhs;
                }
                None => return Ok(()),
            }
        }
    }
}

/// Parses an affine expression.
pub fn parse_expr(text: &str, scope: &Scope) -> Result<LinForm, ExprError> {
    let mut p = Parser::new(text, scope)?;
    let e = p.expr()?;
    if !p.at_end() {
        return p.err("unexpected trailing input");
    }
    Ok(e)
}

/// Parses a guard conjunction.
pub fn parse_atoms(text: &str, scope: &Scope) -> Result<Guard, ExprError> {
    let mut p = Parser::new(text, scope)?;
    let g = p.guard()?;
    if !p.at_end() {
        return p.err("unexpected trailing input");
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{int, rat, ParamKind, Valuation};

    fn scope() -> Scope {
        let mut s = Scope::with_vars(&["x", "y"]);
        s.bind("alpha", Symbol::Param(Param::new("alpha", ParamKind::Control)));
        s.bind("w", Symbol::Param(Param::new("w", ParamKind::Disturbance)));
        s.add_mode("odd");
        s.add_mode("even");
        s
    }

    #[test]
    fn temperature_update() {
        let e = parse_expr("x - (x - 280)/100 + (alpha*x + 3) + 0.1*(2*w - 1)", &scope()).unwrap();
        let mut v = Valuation::new();
        v.insert("alpha", rat(-1, 32));
        v.insert("w", int(1));
        let got = e.eval(&v, &[int(280), int(0)]).unwrap();
        assert_eq!(got, int(280) - rat(280, 32) + int(3) + rat(1, 10));
    }

    #[test]
    fn chained_guard_and_modes() {
        let g = parse_atoms("-1 <= x < 1 && mode in {odd, even} and y >= 2", &scope()).unwrap();
        assert_eq!(g.atoms.len(), 3);
        assert_eq!(g.atoms[1].rel, Rel::Lt);
        assert!(g.modes.contains("odd"));
        let g = parse_atoms("mode = odd", &scope()).unwrap();
        assert!(!g.modes.contains("even"));
    }

    #[test]
    fn parenthesised_comparison_and_guard() {
        let g = parse_atoms("(x + 1) <= 3", &scope()).unwrap();
        assert_eq!(g.atoms.len(), 1);
        let g = parse_atoms("(x <= 3 && y > 0) && true", &scope()).unwrap();
        assert_eq!(g.atoms.len(), 2);
        let g = parse_atoms("false", &scope()).unwrap();
        assert_eq!(g.atoms, vec![Atom::falsum()]);
    }

    #[test]
    fn errors_carry_columns() {
        match parse_expr("x + z", &scope()) {
            Err(ExprError::Syntax { col, .. }) => assert_eq!(col, 5),
            other => panic!("{other:?}"),
        }
        assert!(parse_expr("x * y", &scope()).is_err());
        assert!(parse_expr("x / alpha", &scope()).is_err());
        assert!(parse_atoms("mode = sideways", &scope()).is_err());
        assert!(parse_atoms("x <= ", &scope()).is_err());
    }

    #[test]
    fn parameter_powers() {
        let e = parse_expr("alpha^2 * x", &scope()).unwrap();
        assert_eq!(e.param_degree(), 2);
    }
}
