//! Guarded deterministic Streett automata over model observations.
//!
//! ```text
//! states: q0, q1, q2
//! init: q0
//! q0 -- x >= 1 --> q0
//! q0 -- -1 <= x < 1 --> q1
//! q0 -- x < -1 --> q2
//! q2 -- true --> q2
//! pair: A={q0, q2} B={}
//! ```
//!
//! Guards are conjunctions over the model's state variables and modes. The
//! product reads the observation with a one-step lag: the automaton moves on
//! the *current* model state while the model moves to the next one.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

use crate::expr::{parse_atoms, ExprError, Guard, Rational, Scope, Valuation};
use crate::model::{guard_holds, is_ident, StochModel};
use crate::region::{find_gap, find_overlap, fmt_point, Region};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum DsaError {
    #[error("line {line}, column {col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("unknown state `{0}`")]
    UnknownState(String),
    #[error("nondeterminism in state {state}: transitions at lines {first} and {second} both fire at {witness}")]
    Nondeterministic { state: String, first: usize, second: usize, witness: String },
    #[error("state {state} has no transition for {witness}")]
    Incomplete { state: String, witness: String },
}

/// Variables and modes an automaton's guards may mention.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Signature {
    pub vars: Vec<String>,
    pub modes: Vec<String>,
}

impl Signature {
    pub fn of(model: &StochModel) -> Self {
        Signature { vars: model.vars.clone(), modes: model.modes.clone() }
    }

    fn scope(&self) -> Scope {
        let mut s = Scope::with_vars(&self.vars);
        for m in &self.modes {
            s.add_mode(m);
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transition {
    pub source: usize,
    pub guard: Guard,
    pub target: usize,
    pub line: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StreettPair {
    pub a: BTreeSet<usize>,
    pub b: BTreeSet<usize>,
}

/// Drift obligation of a state with respect to one pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StateClass {
    /// In `A` but not `B`: strict decrease by epsilon.
    Decrease,
    /// In `B`: increase bounded by `M`.
    Bounded,
    /// Outside `A` and `B`: no increase.
    NonIncrease,
}

impl fmt::Display for StateClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StateClass::Decrease => "decrease",
            StateClass::Bounded => "bounded-increase",
            StateClass::NonIncrease => "non-increase",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GuardedDsa {
    pub states: Vec<String>,
    pub init: usize,
    pub transitions: Vec<Transition>,
    pub pairs: Vec<StreettPair>,
    pub signature: Signature,
}

impl GuardedDsa {
    pub fn state_index(&self, name: &str) -> Option<usize> {
        self.states.iter().position(|s| s == name)
    }

    pub fn outgoing(&self, q: usize) -> impl Iterator<Item = &Transition> + '_ {
        self.transitions.iter().filter(move |t| t.source == q)
    }

    /// Outgoing transitions of `q` whose guard admits `mode`.
    pub fn outgoing_in_mode<'a>(&'a self, q: usize, mode: &'a str) -> impl Iterator<Item = &'a Transition> + 'a {
        self.outgoing(q).filter(move |t| t.guard.modes.contains(mode))
    }

    /// The unique successor of `q` on observing `(state, mode)`.
    pub fn step(&self, q: usize, state: &[Rational], mode: &str) -> usize {
        let empty = Valuation::new();
        self.outgoing_in_mode(q, mode)
            .find(|t| guard_holds(&t.guard, &empty, state).expect("automaton guards are parameter-free"))
            .map(|t| t.target)
            .expect("validated automaton is total")
    }

    pub fn classify(&self, pair: usize, q: usize) -> StateClass {
        let p = &self.pairs[pair];
        if p.b.contains(&q) {
            StateClass::Bounded
        } else if p.a.contains(&q) {
            StateClass::Decrease
        } else {
            StateClass::NonIncrease
        }
    }

    /// A language-equivalent automaton whose initial state is a fresh copy of
    /// the old one that belongs to no acceptance set. It is visited once, so
    /// acceptance is unchanged, but it gives the first product location its
    /// own certificate piece and invariant.
    pub fn with_transient_initial(&self) -> GuardedDsa {
        let mut name = format!("{}_start", self.states[self.init]);
        while self.states.contains(&name) {
            name.push('_');
        }
        let mut out = self.clone();
        let fresh = out.states.len();
        out.states.push(name);
        let copies: Vec<Transition> =
            self.outgoing(self.init).map(|t| Transition { source: fresh, ..t.clone() }).collect();
        out.transitions.extend(copies);
        out.init = fresh;
        out
    }

    fn validate(&self) -> Result<(), DsaError> {
        let dim = self.signature.vars.len();
        for (q, name) in self.states.iter().enumerate() {
            for mode in &self.signature.modes {
                let here: Vec<&Transition> = self.outgoing_in_mode(q, mode).collect();
                let regions: Vec<Region> = here.iter().map(|t| Region::from_guard(dim, &t.guard)).collect();
                let at = |p: &[Rational]| {
                    let s = fmt_point(&self.signature.vars, p);
                    if self.signature.modes.len() > 1 {
                        format!("{s} (mode {mode})")
                    } else {
                        s
                    }
                };
                if let Some((i, j, p)) = find_overlap(&regions) {
                    return Err(DsaError::Nondeterministic {
                        state: name.clone(),
                        first: here[i].line,
                        second: here[j].line,
                        witness: at(&p),
                    });
                }
                if let Some(p) = find_gap(&Region::universe(dim), &regions) {
                    return Err(DsaError::Incomplete { state: name.clone(), witness: at(&p) });
                }
            }
        }
        Ok(())
    }
}

fn parse_state_set(text: &str, states: &[String]) -> Result<BTreeSet<usize>, DsaError> {
    let inner = text.trim().strip_prefix('{').and_then(|t| t.strip_suffix('}')).ok_or(DsaError::Syntax {
        line: 0,
        col: 0,
        msg: format!("expected `{{...}}`, got `{}`", text.trim()),
    })?;
    let mut out = BTreeSet::new();
    for part in inner.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let i = states.iter().position(|s| s == part).ok_or_else(|| DsaError::UnknownState(part.to_string()))?;
        out.insert(i);
    }
    Ok(out)
}

/// Parses and validates an automaton against a model signature.
pub fn parse_dsa(text: &str, signature: &Signature) -> Result<GuardedDsa, DsaError> {
    let scope = signature.scope();
    let mut states: Option<Vec<String>> = None;
    let mut init: Option<(String, usize)> = None;
    let mut raw_edges: Vec<(String, String, String, usize, usize)> = Vec::new();
    let mut raw_pairs: Vec<(String, usize)> = Vec::new();
    let err = |line: usize, col: usize, msg: String| DsaError::Syntax { line, col, msg };

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.split('#').next().unwrap_or("");
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some((left, target)) = trimmed.rsplit_once("-->") {
            let (source, guard) =
                left.split_once("--").ok_or_else(|| err(lineno, 1, "expected `q -- guard --> q'`".into()))?;
            let guard_col = line.find(guard).map_or(1, |i| line[..i].chars().count() + 1);
            raw_edges.push((source.trim().into(), guard.to_string(), target.trim().into(), lineno, guard_col));
            continue;
        }
        let Some((key, value)) = trimmed.split_once(':') else {
            return Err(err(lineno, 1, "expected `key: value` or a transition".into()));
        };
        match key.trim() {
            "states" => {
                let names: Vec<String> = value.split(',').map(|s| s.trim().to_string()).collect();
                if let Some(bad) = names.iter().find(|n| !is_ident(n)) {
                    return Err(err(lineno, 1, format!("bad state name `{bad}`")));
                }
                let unique: BTreeSet<&String> = names.iter().collect();
                if unique.len() != names.len() {
                    return Err(err(lineno, 1, "duplicate state name".into()));
                }
                states = Some(names);
            }
            "init" => init = Some((value.trim().to_string(), lineno)),
            "pair" => raw_pairs.push((value.to_string(), lineno)),
            other => return Err(err(lineno, 1, format!("unknown key `{other}`"))),
        }
    }

    let states = states.ok_or_else(|| err(1, 1, "missing `states:` line".into()))?;
    let (init_name, init_line) = init.ok_or_else(|| err(1, 1, "missing `init:` line".into()))?;
    let init = states.iter().position(|s| *s == init_name).ok_or_else(|| {
        if init_name.contains(',') {
            err(init_line, 1, "exactly one initial state is allowed".into())
        } else {
            DsaError::UnknownState(init_name.clone())
        }
    })?;

    let mut transitions = Vec::new();
    for (src, guard, dst, line, col) in raw_edges {
        let source = states.iter().position(|s| *s == src).ok_or(DsaError::UnknownState(src))?;
        let target = states.iter().position(|s| *s == dst).ok_or(DsaError::UnknownState(dst))?;
        let guard = parse_atoms(&guard, &scope).map_err(|e| match e {
            ExprError::Syntax { col: c, msg } => err(line, col + c - 1, msg),
            other => err(line, col, other.to_string()),
        })?;
        transitions.push(Transition { source, guard, target, line });
    }

    let mut pairs = Vec::new();
    for (text, line) in raw_pairs {
        let a_pos = text.find("A=").ok_or_else(|| err(line, 1, "expected `A={...} B={...}`".into()))?;
        let b_pos = text.find("B=").ok_or_else(|| err(line, 1, "expected `A={...} B={...}`".into()))?;
        if b_pos < a_pos {
            return Err(err(line, 1, "expected `A={...}` before `B={...}`".into()));
        }
        let fix = |e: DsaError| match e {
            DsaError::Syntax { msg, .. } => err(line, 1, msg),
            other => other,
        };
        let a = parse_state_set(&text[a_pos + 2..b_pos], &states).map_err(fix)?;
        let b = parse_state_set(&text[b_pos + 2..], &states).map_err(fix)?;
        pairs.push(StreettPair { a, b });
    }

    let dsa = GuardedDsa { states, init, transitions, pairs, signature: signature.clone() };
    dsa.validate()?;
    Ok(dsa)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::int;

    const FIG3: &str = "states: q0, q1, q2\ninit: q0\n\
        q0 -- x >= 1 --> q0\nq0 -- -1 <= x < 1 --> q1\nq0 -- x < -1 --> q2\n\
        q1 -- x >= 1 --> q0\nq1 -- -1 <= x < 1 --> q1\nq1 -- x < -1 --> q2\n\
        q2 -- true --> q2\npair: A={q0, q2} B={}\n";

    fn sig() -> Signature {
        Signature { vars: vec!["x".into()], modes: vec!["main".into()] }
    }

    #[test]
    fn example_automaton() {
        let dsa = parse_dsa(FIG3, &sig()).unwrap();
        assert_eq!(dsa.states.len(), 3);
        assert_eq!(dsa.transitions.len(), 7);
        assert_eq!(dsa.pairs, vec![StreettPair { a: [0, 2].into(), b: BTreeSet::new() }]);
        assert_eq!(dsa.step(0, &[int(100)], "main"), 0);
        assert_eq!(dsa.step(0, &[int(0)], "main"), 1);
        assert_eq!(dsa.step(2, &[int(-7)], "main"), 2);
        assert_eq!(dsa.classify(0, 0), StateClass::Decrease);
        assert_eq!(dsa.classify(0, 1), StateClass::NonIncrease);
    }

    #[test]
    fn nondeterminism_witness() {
        let text =
            "states: q0\ninit: q0\nq0 -- x >= 100 --> q0\nq0 -- x >= 50 --> q0\nq0 -- x < 50 --> q0\npair: A={} B={}\n";
        match parse_dsa(text, &sig()) {
            Err(DsaError::Nondeterministic { witness, first: 3, second: 4, .. }) => {
                let x: Rational = crate::expr::parse_rational(witness.trim_start_matches("x = ")).unwrap();
                assert!(x >= int(100));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn incompleteness_and_unknown_states() {
        let text = "states: q0\ninit: q0\nq0 -- x > 0 --> q0\npair: A={} B={}\n";
        assert!(matches!(parse_dsa(text, &sig()), Err(DsaError::Incomplete { .. })));
        let text = "states: q0\ninit: q0\nq0 -- true --> q0\npair: A={q9} B={}\n";
        assert_eq!(parse_dsa(text, &sig()), Err(DsaError::UnknownState("q9".into())));
    }

    #[test]
    fn transient_initial_copy() {
        let dsa = parse_dsa(FIG3, &sig()).unwrap().with_transient_initial();
        assert_eq!(dsa.states[dsa.init], "q0_start");
        assert_eq!(dsa.outgoing(dsa.init).count(), 3);
        assert_eq!(dsa.classify(0, dsa.init), StateClass::NonIncrease);
        dsa.validate().unwrap();
    }
}
