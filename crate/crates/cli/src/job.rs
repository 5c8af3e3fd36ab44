use std::path::{Path, PathBuf};

use streett_core::automata::{parse_dsa, GuardedDsa, Signature};
use streett_core::backends::{BackendKind, SolverConfig};
use streett_core::expr::{parse_rational, Valuation};
use streett_core::model::{parse_model, StochModel};
use streett_core::pipeline::{JobError, JobSpec, SynthMode};
use streett_core::templates::PieceMode;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {msg}")]
    Parse { path: String, msg: String },
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Job(#[from] JobError),
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.display().to_string(), source })
}

pub fn load_inputs(model_path: &Path, automaton_path: &Path) -> Result<(StochModel, GuardedDsa), CliError> {
    let model = parse_model(&read_text(model_path)?)
        .map_err(|e| CliError::Parse { path: model_path.display().to_string(), msg: e.to_string() })?;
    let dsa = parse_dsa(&read_text(automaton_path)?, &Signature::of(&model))
        .map_err(|e| CliError::Parse { path: automaton_path.display().to_string(), msg: e.to_string() })?;
    Ok((model, dsa))
}

/// Parses `name=value` items with exact rational values.
pub fn parse_assignments<S: AsRef<str>>(items: &[S]) -> Result<Valuation, CliError> {
    let mut out = Valuation::new();
    for item in items {
        let item = item.as_ref();
        let (name, value) =
            item.split_once('=').ok_or_else(|| CliError::Usage(format!("expected name=value, got `{item}`")))?;
        let value = parse_rational(value.trim())
            .ok_or_else(|| CliError::Usage(format!("`{}` is not a rational number", value.trim())))?;
        out.insert(name.trim(), value);
    }
    Ok(out)
}

/// Synthesis options shared by the command line and the manifest.
#[derive(Debug, Clone)]
pub struct JobOptions {
    pub mode: SynthMode,
    pub inv_rows: usize,
    pub invariant: Option<PathBuf>,
    pub set: Vec<String>,
    pub backend: BackendKind,
    pub qcp: bool,
    pub fresh_init: bool,
    pub pieces: PieceMode,
    pub solver: SolverConfig,
}

impl JobOptions {
    pub fn spec(&self, model_path: &Path, automaton_path: &Path) -> Result<JobSpec, CliError> {
        let (model, dsa) = load_inputs(model_path, automaton_path)?;
        let mut spec = JobSpec::new(model, dsa, self.mode, self.solver.clone());
        spec.inv_rows = self.inv_rows;
        spec.invariant = self.invariant.as_deref().map(read_text).transpose()?;
        spec.fixed_controls = parse_assignments(&self.set)?;
        spec.backend = self.backend;
        spec.qcp = self.qcp;
        spec.fresh_init = self.fresh_init;
        spec.pieces = self.pieces;
        Ok(spec)
    }
}
