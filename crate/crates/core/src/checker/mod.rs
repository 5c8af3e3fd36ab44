//! Concrete certificates, their file format, and the two independent
//! checks: an exact symbolic re-derivation of every condition and a
//! Monte-Carlo simulation of the product process.

mod sim;
mod symbolic;

use std::collections::BTreeMap;

use num_traits::{Signed, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::automata::GuardedDsa;
use crate::expr::{fmt_rational, parse_atoms, parse_rational, Atom, LinForm, Rational, Rel, Scope, Valuation};
use crate::model::StochModel;
use crate::templates::{locations, CertTemplate, InvTemplate, Loc, VPiece};

pub use sim::{post_value, simulate, LocationResidual, PairStats, SimOptions, SimReport, Stepper};
pub use symbolic::{symbolic_check, CheckOutcome, CheckReport, Violation};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum CheckError {
    #[error("certificate: {0}")]
    Format(String),
    #[error("certificate does not match the model: {0}")]
    Mismatch(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Expr(#[from] crate::expr::ExprError),
}

/// Certificate for one Streett pair: affine pieces per location and the
/// bound `M` on the increase at `B` states.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairCertificate {
    pub bound: Rational,
    pub pieces: BTreeMap<Loc, Vec<VPiece>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    #[serde(default)]
    pub solver: String,
    #[serde(default)]
    pub backend: String,
    #[serde(default)]
    pub mode: String,
    #[serde(default)]
    pub wall_time_ms: u64,
}

/// A concrete witness: certificates for every pair, an invariant, control
/// values and the decrease constant. Locations index the automaton returned
/// by [`Certificate::automaton`].
#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub model: String,
    pub epsilon: Rational,
    pub controls: Valuation,
    pub transient_initial: bool,
    pub pairs: Vec<PairCertificate>,
    /// Rows `form <= 0` per location.
    pub invariant: BTreeMap<Loc, Vec<LinForm>>,
    pub provenance: Provenance,
}

impl Certificate {
    /// Reads the synthesized parameters off a solver valuation.
    #[allow(clippy::too_many_arguments)]
    pub fn from_solution(
        model: &StochModel,
        certs: &[CertTemplate],
        inv: &InvTemplate,
        m_params: &[Option<crate::expr::Param>],
        values: &Valuation,
        epsilon: Rational,
        transient_initial: bool,
        provenance: Provenance,
    ) -> Certificate {
        let controls: Valuation =
            model.control_params().filter_map(|p| values.get(p.name()).map(|v| (p.name().into(), v.clone()))).collect();
        let pairs = certs
            .iter()
            .zip(m_params)
            .map(|(c, m)| PairCertificate {
                bound: m.as_ref().and_then(|m| values.get(m.name()).cloned()).unwrap_or_else(Rational::zero),
                pieces: c.instantiate(values).pieces,
            })
            .collect();
        Certificate {
            model: model.name.clone(),
            epsilon,
            controls,
            transient_initial,
            pairs,
            invariant: inv.instantiate(values).rows,
            provenance,
        }
    }

    /// The automaton the certificate's locations refer to.
    pub fn automaton(&self, base: &GuardedDsa) -> GuardedDsa {
        if self.transient_initial {
            base.with_transient_initial()
        } else {
            base.clone()
        }
    }

    pub fn is_concrete(&self) -> bool {
        self.invariant.values().flatten().all(LinForm::is_param_free)
            && self
                .pairs
                .iter()
                .flat_map(|p| p.pieces.values().flatten())
                .all(|p| p.form.is_param_free() && p.guard.iter().all(|a| a.form.is_param_free()))
    }

    pub fn to_json(&self, model: &StochModel, base: &GuardedDsa) -> String {
        let dsa = self.automaton(base);
        let names = &model.vars;
        let atom_text = |a: &Atom| {
            let rel = match a.rel {
                Rel::Le => "<=",
                Rel::Lt => "<",
                Rel::Eq => "=",
            };
            format!("{} {rel} 0", a.form.display_with(names))
        };
        let file = CertFile {
            model: self.model.clone(),
            epsilon: fmt_rational(&self.epsilon),
            controls: self.controls.iter().map(|(k, v)| (k.to_string(), fmt_rational(v))).collect(),
            transient_initial: self.transient_initial,
            pairs: self
                .pairs
                .iter()
                .map(|p| PairFile {
                    bound: fmt_rational(&p.bound),
                    locations: p
                        .pieces
                        .iter()
                        .map(|(loc, ps)| LocPieces {
                            state: dsa.states[loc.0].clone(),
                            mode: model.modes[loc.1].clone(),
                            pieces: ps
                                .iter()
                                .map(|vp| PieceFile {
                                    guard: if vp.guard.is_empty() {
                                        "true".to_string()
                                    } else {
                                        vp.guard.iter().map(atom_text).collect::<Vec<_>>().join(" && ")
                                    },
                                    value: vp.form.display_with(names).to_string(),
                                })
                                .collect(),
                        })
                        .collect(),
                })
                .collect(),
            invariant: self
                .invariant
                .iter()
                .map(|(loc, rows)| InvFile {
                    state: dsa.states[loc.0].clone(),
                    mode: model.modes[loc.1].clone(),
                    rows: rows.iter().map(|r| atom_text(&Atom::le(r.clone()))).collect(),
                })
                .collect(),
            provenance: self.provenance.clone(),
        };
        serde_json::to_string_pretty(&file).expect("certificate serializes")
    }

    pub fn from_json(text: &str, model: &StochModel, base: &GuardedDsa) -> Result<Certificate, CheckError> {
        let file: CertFile = serde_json::from_str(text).map_err(|e| CheckError::Format(e.to_string()))?;
        let dsa = if file.transient_initial { base.with_transient_initial() } else { base.clone() };
        let scope = Scope::with_vars(&model.vars);
        let rational =
            |s: &str| parse_rational(s.trim()).ok_or_else(|| CheckError::Format(format!("not a rational: `{s}`")));
        let loc_of = |state: &str, mode: &str| -> Result<Loc, CheckError> {
            let q = dsa.state_index(state).ok_or_else(|| CheckError::Mismatch(format!("unknown state `{state}`")))?;
            let m = model
                .modes
                .iter()
                .position(|x| x == mode)
                .ok_or_else(|| CheckError::Mismatch(format!("unknown mode `{mode}`")))?;
            Ok((q, m))
        };
        let atoms = |text: &str| -> Result<Vec<Atom>, CheckError> {
            let g = parse_atoms(text, &scope).map_err(|e| CheckError::Format(format!("`{text}`: {e}")))?;
            Ok(g.atoms)
        };
        let all_locs = locations(model, &dsa);
        let mut pairs = Vec::new();
        for (i, p) in file.pairs.iter().enumerate() {
            let mut pieces = BTreeMap::new();
            for lp in &p.locations {
                let loc = loc_of(&lp.state, &lp.mode)?;
                let mut vps = Vec::new();
                for pf in &lp.pieces {
                    let form = crate::expr::parse_expr(&pf.value, &scope)
                        .map_err(|e| CheckError::Format(format!("`{}`: {e}", pf.value)))?;
                    vps.push(VPiece { guard: atoms(&pf.guard)?, form });
                }
                if vps.is_empty() {
                    return Err(CheckError::Format(format!("pair {i}: no pieces at {} @ {}", lp.state, lp.mode)));
                }
                pieces.insert(loc, vps);
            }
            if let Some(l) = all_locs.iter().find(|l| !pieces.contains_key(l)) {
                return Err(CheckError::Mismatch(format!(
                    "pair {i} has no value at {} @ {}",
                    dsa.states[l.0], model.modes[l.1]
                )));
            }
            pairs.push(PairCertificate { bound: rational(&p.bound)?, pieces });
        }
        let mut invariant = BTreeMap::new();
        for inv in &file.invariant {
            let loc = loc_of(&inv.state, &inv.mode)?;
            let mut rows: Vec<LinForm> = Vec::new();
            for r in &inv.rows {
                for a in atoms(r)? {
                    match a.rel {
                        Rel::Le => rows.push(a.form),
                        Rel::Eq => {
                            rows.push(-&a.form);
                            rows.push(a.form);
                        }
                        Rel::Lt => return Err(CheckError::Format(format!("strict invariant row `{r}`"))),
                    }
                }
            }
            invariant.entry(loc).or_insert_with(Vec::new).extend(rows);
        }
        if let Some(l) = all_locs.iter().find(|l| !invariant.contains_key(l)) {
            return Err(CheckError::Mismatch(format!("no invariant at {} @ {}", dsa.states[l.0], model.modes[l.1])));
        }
        let mut controls = Valuation::new();
        for (k, v) in &file.controls {
            controls.insert(k.as_str(), rational(v)?);
        }
        Ok(Certificate {
            model: file.model,
            epsilon: rational(&file.epsilon)?,
            controls,
            transient_initial: file.transient_initial,
            pairs,
            invariant,
            provenance: file.provenance,
        })
    }

    /// Value of pair `i`'s certificate at a state; the first piece whose
    /// guard holds applies.
    pub fn value(&self, pair: usize, loc: Loc, state: &[Rational]) -> Option<Rational> {
        let empty = Valuation::new();
        self.pairs[pair].pieces.get(&loc)?.iter().find_map(|p| {
            let inside = p.guard.iter().all(|a| a.holds(&a.form.eval(&empty, state).expect("concrete guard")));
            inside.then(|| p.form.eval(&empty, state).expect("concrete certificate"))
        })
    }

    pub fn in_invariant(&self, loc: Loc, state: &[Rational]) -> bool {
        let empty = Valuation::new();
        self.invariant
            .get(&loc)
            .is_some_and(|rows| rows.iter().all(|r| !r.eval(&empty, state).expect("concrete row").is_positive()))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CertFile {
    model: String,
    epsilon: String,
    #[serde(default)]
    controls: BTreeMap<String, String>,
    #[serde(default)]
    transient_initial: bool,
    pairs: Vec<PairFile>,
    invariant: Vec<InvFile>,
    #[serde(default)]
    provenance: Provenance,
}

#[derive(Debug, Serialize, Deserialize)]
struct PairFile {
    bound: String,
    locations: Vec<LocPieces>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LocPieces {
    state: String,
    mode: String,
    pieces: Vec<PieceFile>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PieceFile {
    #[serde(default = "always")]
    guard: String,
    value: String,
}

fn always() -> String {
    "true".to_string()
}

#[derive(Debug, Serialize, Deserialize)]
struct InvFile {
    state: String,
    mode: String,
    rows: Vec<String>,
}
