//! Runs manifest entries on a pool of worker threads. Every job owns its
//! solver process; a failing job only affects its own row.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::Serialize;
use streett_core::backends::{BackendError, SolverConfig};
use streett_core::pipeline::{run_job, JobError, JobOutcome};

use crate::job::CliError;
use crate::manifest::BenchEntry;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BenchRow {
    pub name: String,
    pub mode: String,
    /// `sat`, `unsat`, `unknown`, `error` or `solver unavailable`.
    pub verdict: String,
    /// `valid`, `invalid` or `-` when nothing was checked.
    pub check: String,
    pub wall_ms: u64,
    pub backend: String,
    pub forced_backend: Option<String>,
    pub detail: Option<String>,
    /// The certificate as JSON when one was certified.
    #[serde(skip)]
    pub certificate: Option<String>,
}

impl BenchRow {
    pub fn passed(&self) -> bool {
        self.verdict == "sat" && self.check == "valid"
    }
}

pub fn run_one(entry: &BenchEntry, corpus: &Path, solver: &SolverConfig) -> BenchRow {
    let start = Instant::now();
    let mut row = BenchRow {
        name: entry.name.clone(),
        mode: entry.mode.clone(),
        verdict: "error".into(),
        check: "-".into(),
        wall_ms: 0,
        backend: "-".into(),
        forced_backend: None,
        detail: None,
        certificate: None,
    };
    let result = entry.spec(corpus, solver).and_then(|spec| Ok((run_job(&spec).map_err(CliError::from)?, spec)));
    row.wall_ms = start.elapsed().as_millis() as u64;
    match result {
        Ok((res, spec)) => {
            row.backend = res.stats.backend.clone();
            row.forced_backend = res.stats.forced_backend.clone();
            match res.outcome {
                JobOutcome::Certified { cert, .. } => {
                    row.verdict = "sat".into();
                    row.check = "valid".into();
                    row.certificate = Some(cert.to_json(&spec.model, &spec.dsa));
                }
                JobOutcome::Unsat => row.verdict = "unsat".into(),
                JobOutcome::Unknown(reason) => {
                    row.verdict = "unknown".into();
                    row.detail = Some(reason);
                }
                JobOutcome::CheckFailed { violation, .. } => {
                    row.verdict = "sat".into();
                    row.check = "invalid".into();
                    row.detail = Some(format!("internal inconsistency: {violation}"));
                }
            }
        }
        Err(CliError::Job(JobError::Backend(e @ BackendError::SolverUnavailable(..)))) => {
            row.verdict = "solver unavailable".into();
            row.detail = Some(e.to_string());
        }
        Err(e) => row.detail = Some(e.to_string()),
    }
    row
}

/// Runs the entries with `jobs` workers; rows come back in manifest order.
pub fn run_bench(entries: &[BenchEntry], corpus: &Path, solver: &SolverConfig, jobs: usize) -> Vec<BenchRow> {
    let next = AtomicUsize::new(0);
    let rows: Mutex<Vec<Option<BenchRow>>> = Mutex::new(vec![None; entries.len()]);
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, entries.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(entry) = entries.get(i) else { break };
                let row = run_one(entry, corpus, solver);
                rows.lock().expect("row table")[i] = Some(row);
            });
        }
    });
    rows.into_inner().expect("row table").into_iter().map(|r| r.expect("every job reports")).collect()
}

pub fn render_table(rows: &[BenchRow]) -> String {
    let name_w = rows.iter().map(|r| r.name.len()).max().unwrap_or(4).max(9);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<name_w$}  {:<4}  {:<18}  {:<7}  {:>10}  backend",
        "benchmark", "mode", "verdict", "check", "time (s)"
    );
    for r in rows {
        let backend = match &r.forced_backend {
            Some(f) => format!("{} (forced: {f})", r.backend),
            None => r.backend.clone(),
        };
        let _ = writeln!(
            out,
            "{:<name_w$}  {:<4}  {:<18}  {:<7}  {:>10.2}  {backend}",
            r.name,
            r.mode,
            r.verdict,
            r.check,
            r.wall_ms as f64 / 1000.0
        );
        if let Some(d) = &r.detail {
            let _ = writeln!(out, "{:<name_w$}  {d}", "");
        }
    }
    out
}
