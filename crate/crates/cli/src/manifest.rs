//! The benchmark corpus index, `manifest.toml`:
//!
//! ```toml
//! [[benchmark]]
//! name = "Temperature4"
//! mode = "VC"
//! invariant = "invariant.txt"   # relative to the benchmark directory
//! qcp = true
//! ```
//!
//! Each benchmark lives in `<corpus>/<dir>/` (default `dir = name`) with a
//! `model.txt` and an `automaton.txt`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use streett_core::backends::{BackendKind, SolverConfig};
use streett_core::pipeline::{JobSpec, SynthMode};
use streett_core::templates::PieceMode;

use crate::job::{read_text, CliError, JobOptions};

#[derive(Debug, Clone, Deserialize)]
pub struct Manifest {
    #[serde(rename = "benchmark", default)]
    pub benchmarks: Vec<BenchEntry>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchEntry {
    pub name: String,
    pub dir: Option<String>,
    pub mode: String,
    /// The property in words, for the report only.
    #[serde(default)]
    pub property: String,
    pub invariant: Option<String>,
    pub inv_rows: Option<usize>,
    #[serde(default)]
    pub fresh_init: bool,
    pub pieces: Option<String>,
    #[serde(default)]
    pub qcp: bool,
    pub backend: Option<String>,
    /// Controls fixed before synthesis.
    #[serde(default)]
    pub set: BTreeMap<String, String>,
}

impl BenchEntry {
    pub fn dir(&self, corpus: &Path) -> PathBuf {
        corpus.join(self.dir.as_deref().unwrap_or(&self.name))
    }

    pub fn model_path(&self, corpus: &Path) -> PathBuf {
        self.dir(corpus).join("model.txt")
    }

    pub fn automaton_path(&self, corpus: &Path) -> PathBuf {
        self.dir(corpus).join("automaton.txt")
    }

    pub fn options(&self, corpus: &Path, solver: &SolverConfig) -> Result<JobOptions, CliError> {
        let bad = |what: &str, e: String| CliError::Usage(format!("benchmark {}: {what}: {e}", self.name));
        let mode: SynthMode = self.mode.parse().map_err(|e| bad("mode", e))?;
        let pieces: PieceMode = match &self.pieces {
            Some(p) => p.parse().map_err(|e| bad("pieces", e))?,
            None => PieceMode::default(),
        };
        let backend: BackendKind = match &self.backend {
            Some(b) => b.parse().map_err(|e| bad("backend", e))?,
            None => BackendKind::Auto,
        };
        Ok(JobOptions {
            mode,
            inv_rows: self.inv_rows.unwrap_or(2),
            invariant: self.invariant.as_ref().map(|f| self.dir(corpus).join(f)),
            set: self.set.iter().map(|(k, v)| format!("{k}={v}")).collect(),
            backend,
            qcp: self.qcp,
            fresh_init: self.fresh_init,
            pieces,
            solver: solver.clone(),
        })
    }

    pub fn spec(&self, corpus: &Path, solver: &SolverConfig) -> Result<JobSpec, CliError> {
        self.options(corpus, solver)?.spec(&self.model_path(corpus), &self.automaton_path(corpus))
    }
}

pub fn load_manifest(corpus: &Path) -> Result<Manifest, CliError> {
    let path = corpus.join("manifest.toml");
    let text = read_text(&path)?;
    let manifest: Manifest =
        toml::from_str(&text).map_err(|e| CliError::Parse { path: path.display().to_string(), msg: e.to_string() })?;
    let mut seen = std::collections::BTreeSet::new();
    for b in &manifest.benchmarks {
        if !seen.insert(b.name.as_str()) {
            return Err(CliError::Parse {
                path: path.display().to_string(),
                msg: format!("duplicate benchmark `{}`", b.name),
            });
        }
    }
    Ok(manifest)
}
