//! End-to-end synthesis: templates, verification conditions, Farkas duals,
//! backend dispatch, exact re-check of the solver model and the independent
//! symbolic check of the resulting certificate.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use num_traits::One;
use thiserror::Error;

use crate::automata::GuardedDsa;
use crate::backends::{
    choose_backend, complete_multipliers, run_solver, simplex_solve, BackendError, BackendKind, SolverConfig, Verdict,
};
use crate::checker::{symbolic_check, Certificate, CheckError, CheckOutcome, CheckReport, Provenance, Violation};
use crate::expr::{lin_add, Atom, LinForm, Rational, Valuation};
use crate::farkas::{dualize, reduce_degree, DualMode};
use crate::model::{ModelError, StochModel};
use crate::templates::{
    cert_template, inv_template, manual_post_lookup, parse_invariant, post_expectation, CertTemplate, InvTemplate,
    PieceMode, PostTable, TemplateError,
};
use crate::vcgen::{build_product_vcs, VcError, VcInput, VcSet};

/// What is synthesized: certificates only (V), plus the invariant (VI),
/// plus controls under a given invariant (VC), or all three (VIC).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthMode {
    V,
    VI,
    VC,
    VIC,
}

impl SynthMode {
    pub fn synthesizes_invariant(self) -> bool {
        matches!(self, SynthMode::VI | SynthMode::VIC)
    }

    pub fn synthesizes_controls(self) -> bool {
        matches!(self, SynthMode::VC | SynthMode::VIC)
    }
}

impl FromStr for SynthMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_uppercase().as_str() {
            "V" => Ok(SynthMode::V),
            "VI" => Ok(SynthMode::VI),
            "VC" => Ok(SynthMode::VC),
            "VIC" => Ok(SynthMode::VIC),
            _ => Err(format!("unknown mode `{s}` (V, VI, VC or VIC)")),
        }
    }
}

impl fmt::Display for SynthMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SynthMode::V => "V",
            SynthMode::VI => "VI",
            SynthMode::VC => "VC",
            SynthMode::VIC => "VIC",
        })
    }
}

#[derive(Debug, Error)]
pub enum JobError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Vc(#[from] VcError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Check(#[from] CheckError),
}

#[derive(Debug, Clone)]
pub struct JobSpec {
    pub model: StochModel,
    pub dsa: GuardedDsa,
    pub mode: SynthMode,
    /// Rows per location of a synthesized invariant.
    pub inv_rows: usize,
    /// Invariant text for V and VC.
    pub invariant: Option<String>,
    /// Control parameters fixed to values before synthesis.
    pub fixed_controls: Valuation,
    pub backend: BackendKind,
    pub qcp: bool,
    pub solver: SolverConfig,
    /// Give the initial automaton state a transient copy.
    pub fresh_init: bool,
    pub pieces: PieceMode,
}

impl JobSpec {
    pub fn new(model: StochModel, dsa: GuardedDsa, mode: SynthMode, solver: SolverConfig) -> Self {
        JobSpec {
            model,
            dsa,
            mode,
            inv_rows: 2,
            invariant: None,
            fixed_controls: Valuation::new(),
            backend: BackendKind::Auto,
            qcp: false,
            solver,
            fresh_init: false,
            pieces: PieceMode::Single,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct JobStats {
    pub implications: usize,
    pub vacuous: usize,
    pub premise_sat: usize,
    pub general: usize,
    pub variables: usize,
    pub constraints: usize,
    pub degree: u32,
    pub backend: String,
    /// Set when the requested backend was overridden.
    pub forced_backend: Option<String>,
    /// Set when the solver's model needed the LP repair pass.
    pub repaired: bool,
    pub wall_ms: u64,
}

#[derive(Debug, Clone)]
pub enum JobOutcome {
    /// A certificate that passed the independent check.
    Certified {
        cert: Box<Certificate>,
        check: CheckReport,
    },
    /// The constraint system has no solution: no certificate of this shape.
    Unsat,
    Unknown(String),
    /// The independent check rejected the certificate built from the solver
    /// model. This is an internal inconsistency.
    CheckFailed {
        cert: Box<Certificate>,
        violation: Box<Violation>,
    },
}

#[derive(Debug, Clone)]
pub struct JobResult {
    pub outcome: JobOutcome,
    pub stats: JobStats,
    pub vc_dump: String,
    pub dual_dump: String,
    pub smtlib: Option<String>,
}

struct Prepared {
    model: StochModel,
    dsa: GuardedDsa,
    certs: Vec<CertTemplate>,
    inv: InvTemplate,
    vcs: VcSet,
}

fn prepare(spec: &JobSpec, inv_override: Option<&InvTemplate>) -> Result<Prepared, JobError> {
    let model = if spec.fixed_controls.is_empty() {
        spec.model.clone()
    } else {
        for (name, _) in spec.fixed_controls.iter() {
            if !spec.model.control_params().any(|p| p.name() == name) {
                return Err(JobError::Usage(format!("`{name}` is not a control parameter of the model")));
            }
        }
        spec.model.with_fixed_controls(&spec.fixed_controls)?
    };
    if spec.mode.synthesizes_controls() && !model.has_controls() {
        return Err(JobError::Usage(format!("mode {} needs a model with free control parameters", spec.mode)));
    }
    if !spec.mode.synthesizes_controls() && model.has_controls() {
        let names: Vec<&str> = model.control_params().map(|p| p.name()).collect();
        return Err(JobError::Usage(format!("mode {} needs fixed controls; unset: {}", spec.mode, names.join(", "))));
    }
    let dsa = if spec.fresh_init { spec.dsa.with_transient_initial() } else { spec.dsa.clone() };
    let inv = match (inv_override, spec.mode.synthesizes_invariant(), &spec.invariant) {
        (Some(inv), _, _) => inv.clone(),
        (None, true, None) => inv_template(&model, &dsa, spec.inv_rows),
        (None, true, Some(_)) => {
            return Err(JobError::Usage(format!("mode {} synthesizes the invariant; drop --invariant", spec.mode)))
        }
        (None, false, Some(text)) => parse_invariant(text, &model, &dsa)?,
        (None, false, None) => return Err(JobError::Usage(format!("mode {} needs an invariant file", spec.mode))),
    };
    let certs: Vec<CertTemplate> =
        (0..dsa.pairs.len()).map(|i| cert_template(&model, &dsa, i, spec.pieces)).collect::<Result<_, _>>()?;
    let posts: Vec<PostTable> = certs
        .iter()
        .map(|c| match &model.manual_post {
            Some(_) => manual_post_lookup(c, &model, &dsa),
            None => post_expectation(c, &model, &dsa),
        })
        .collect::<Result<_, _>>()?;
    let mut vcs = build_product_vcs(&VcInput { model: &model, dsa: &dsa, certs: &certs, posts: &posts, inv: &inv })?;
    if inv_override.is_none() && spec.mode.synthesizes_invariant() {
        // Rows are invariant under positive scaling, so boxing their
        // coefficients loses no invariant and narrows the search.
        let minus_one = LinForm::rational(-Rational::one());
        for p in inv.params() {
            let f = LinForm::param(p);
            vcs.side.push(Atom::le(lin_add(&f, &minus_one)));
            vcs.side.push(Atom::le(lin_add(&f.scale_rational(&-Rational::one()), &minus_one)));
        }
    }
    Ok(Prepared { model, dsa, certs, inv, vcs })
}

/// Builds the verification conditions without solving.
pub fn emit_vcs(spec: &JobSpec) -> Result<String, JobError> {
    let p = prepare(spec, None)?;
    Ok(p.vcs.dump(&p.model))
}

/// Runs a job end to end.
pub fn run_job(spec: &JobSpec) -> Result<JobResult, JobError> {
    let start = Instant::now();
    let prepared = prepare(spec, None)?;
    let force_general = spec.mode == SynthMode::VIC;
    let (duals, system) = dualize(&prepared.vcs, force_general);
    let mut stats = JobStats {
        implications: duals.len(),
        vacuous: duals.iter().filter(|d| d.mode == DualMode::Vacuous).count(),
        premise_sat: duals.iter().filter(|d| d.mode == DualMode::PremiseSat).count(),
        general: duals.iter().filter(|d| d.mode == DualMode::General).count(),
        ..JobStats::default()
    };
    let solved_system = if spec.qcp { reduce_degree(&system) } else { system.clone() };
    stats.variables = solved_system.vars.len();
    stats.constraints = solved_system.constraints.len();
    stats.degree = solved_system.degree();

    let mut backend = choose_backend(&solved_system, spec.backend);
    if spec.model.has_parametric_guards() && spec.backend != BackendKind::Smt {
        backend = BackendKind::Smt;
        stats.forced_backend = Some("control parameters in branch guards".into());
    } else if backend == BackendKind::Lp && (!solved_system.is_linear() || solved_system.has_disjunctions()) {
        return Err(JobError::Usage(format!(
            "lp backend needs a linear system without disjunctions; this one has degree {}{}",
            solved_system.degree(),
            if solved_system.has_disjunctions() { " and disjunctions" } else { "" }
        )));
    }
    stats.backend = backend.to_string();
    let smtlib =
        (backend == BackendKind::Smt).then(|| crate::backends::emit_smtlib(&solved_system, &spec.solver.logic));
    let verdict = match backend {
        BackendKind::Lp => simplex_solve(&solved_system)?,
        _ => run_solver(&solved_system, &spec.solver)?,
    };
    let vc_dump = prepared.vcs.dump(&prepared.model);
    let dual_dump = solved_system.dump();
    let finish = |outcome: JobOutcome, mut stats: JobStats| {
        stats.wall_ms = start.elapsed().as_millis() as u64;
        Ok(JobResult { outcome, stats, vc_dump: vc_dump.clone(), dual_dump: dual_dump.clone(), smtlib: smtlib.clone() })
    };
    let values = match verdict {
        Verdict::Unsat { .. } => return finish(JobOutcome::Unsat, stats),
        Verdict::Unknown(reason) => return finish(JobOutcome::Unknown(reason), stats),
        Verdict::Sat { values, .. } => values,
    };

    // Exact re-check: keep the solver's non-multiplier values and recover
    // the multipliers per dual.
    let partial: Valuation = values
        .iter()
        .filter(|(k, _)| !k.starts_with("z.") && !k.starts_with("aux."))
        .map(|(k, v)| (k.into(), v.clone()))
        .collect();
    let rechecked = if system.check(&values).is_ok() {
        Ok(values)
    } else {
        complete_multipliers(&system, &partial).and_then(|full| {
            system.check(&full)?;
            Ok(full)
        })
    };
    let (prepared, values) = match rechecked {
        Ok(full) => (prepared, full),
        Err(_) => {
            stats.repaired = true;
            match repair(spec, &prepared, &partial)? {
                Some(r) => r,
                None => {
                    return finish(
                        JobOutcome::Unknown("solver model does not re-check exactly and could not be repaired".into()),
                        stats,
                    )
                }
            }
        }
    };

    let mut all_controls = spec.fixed_controls.clone();
    for p in spec.model.control_params() {
        if let Some(v) = values.get(p.name()) {
            all_controls.insert(p.name(), v.clone());
        }
    }
    let mut cert = Certificate::from_solution(
        &prepared.model,
        &prepared.certs,
        &prepared.inv,
        &prepared.vcs.m_params,
        &values,
        Rational::one(),
        spec.fresh_init,
        Provenance {
            solver: if backend == BackendKind::Lp {
                "internal simplex".into()
            } else {
                spec.solver.program.display().to_string()
            },
            backend: backend.to_string(),
            mode: spec.mode.to_string(),
            wall_time_ms: 0,
        },
    );
    cert.model = spec.model.name.clone();
    cert.controls = all_controls;
    cert.provenance.wall_time_ms = start.elapsed().as_millis() as u64;
    let check = symbolic_check(&cert, &spec.model, &spec.dsa)?;
    let outcome = match check.outcome.clone() {
        CheckOutcome::Valid => JobOutcome::Certified { cert: Box::new(cert), check },
        CheckOutcome::Invalid(v) => JobOutcome::CheckFailed { cert: Box::new(cert), violation: v },
    };
    finish(outcome, stats)
}

/// Fixes the (rationalized) controls and invariant from a solver model whose
/// values do not re-check exactly, and re-solves for the certificate
/// coefficients by LP.
fn repair(spec: &JobSpec, prepared: &Prepared, partial: &Valuation) -> Result<Option<(Prepared, Valuation)>, JobError> {
    let mut fixed = spec.fixed_controls.clone();
    for p in prepared.model.control_params() {
        match partial.get(p.name()) {
            Some(v) => fixed.insert(p.name(), v.clone()),
            None => return Ok(None),
        }
    }
    let inv = prepared.inv.instantiate(partial);
    if !inv.is_param_free() {
        return Ok(None);
    }
    let mut fixed_spec = spec.clone();
    fixed_spec.fixed_controls = fixed.clone();
    fixed_spec.mode = SynthMode::V;
    fixed_spec.fresh_init = false;
    fixed_spec.dsa = prepared.dsa.clone();
    let re = match prepare(&fixed_spec, Some(&inv)) {
        Ok(p) => p,
        Err(JobError::Model(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    let (_, system) = dualize(&re.vcs, false);
    if !system.is_linear() || system.has_disjunctions() {
        return Ok(None);
    }
    match simplex_solve(&system)? {
        Verdict::Sat { mut values, .. } => {
            if system.check(&values).is_err() {
                return Ok(None);
            }
            for (k, v) in fixed.iter() {
                values.insert(k, v.clone());
            }
            // Certificates and invariant are read off the repaired problem.
            Ok(Some((Prepared { model: prepared.model.clone(), dsa: prepared.dsa.clone(), ..re }, values)))
        }
        _ => Ok(None),
    }
}

/// Checks a certificate file against a model and automaton.
pub fn check_certificate(
    text: &str,
    model: &StochModel,
    dsa: &GuardedDsa,
) -> Result<(Certificate, CheckReport), JobError> {
    let cert = Certificate::from_json(text, model, dsa)?;
    let report = symbolic_check(&cert, model, dsa)?;
    Ok((cert, report))
}
