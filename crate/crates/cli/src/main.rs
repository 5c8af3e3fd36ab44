use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use streett_cli::bench::{render_table, run_bench};
use streett_cli::manifest::load_manifest;
use streett_cli::{load_inputs, read_text, CliError, JobOptions};
use streett_core::backends::{BackendKind, SolverConfig};
use streett_core::checker::{simulate, CheckOutcome, SimOptions};
use streett_core::pipeline::{check_certificate, emit_vcs, run_job, JobOutcome, SynthMode};
use streett_core::templates::PieceMode;

const EXIT_OK: u8 = 0;
const EXIT_NEGATIVE: u8 = 1;
const EXIT_UNKNOWN: u8 = 2;
const EXIT_USAGE: u8 = 3;

#[derive(Parser)]
#[command(name = "streett", version, about = "Synthesize and check Streett supermartingale certificates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a certificate (mode V) or a certificate and invariant (VI).
    Verify(SynthArgs),
    /// Synthesize controls as well: VC under a given invariant, VIC without.
    Control(SynthArgs),
    /// Check a certificate file against a model and automaton.
    Check { model: PathBuf, automaton: PathBuf, certificate: PathBuf },
    /// Simulate the product process, optionally recording certificate drift.
    Simulate {
        model: PathBuf,
        automaton: PathBuf,
        #[arg(long)]
        certificate: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        trajectories: usize,
        #[arg(long, default_value_t = 1000)]
        horizon: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// A-visits after the last B-visit that make a trajectory suspect.
        #[arg(long, default_value_t = 50)]
        suspect_after: u64,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Run the benchmark corpus.
    Bench {
        /// Corpus directory containing manifest.toml.
        #[arg(default_value = "benchmarks")]
        corpus: PathBuf,
        /// Only run the named benchmarks.
        #[arg(long = "only")]
        only: Vec<String>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long, default_value_t = 300)]
        timeout: u64,
        #[arg(long)]
        solver: Option<PathBuf>,
        /// Write the rows as JSON to this file.
        #[arg(long)]
        json: Option<PathBuf>,
        /// Write each certificate to DIR/<name>.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SynthArgs {
    model: PathBuf,
    automaton: PathBuf,
    /// V or VI for verify, VC or VIC for control.
    #[arg(long)]
    mode: Option<SynthMode>,
    #[arg(long, default_value_t = BackendKind::Auto)]
    backend: BackendKind,
    /// Lower the constraint system to degree two before solving.
    #[arg(long)]
    qcp: bool,
    /// Rows per location of a synthesized invariant.
    #[arg(long, default_value_t = 2)]
    inv_rows: usize,
    /// Invariant file (modes V and VC).
    #[arg(long)]
    invariant: Option<PathBuf>,
    /// Solver timeout in seconds.
    #[arg(long, default_value_t = 300)]
    timeout: u64,
    /// Write the verification conditions to FILE (`-` for stdout).
    #[arg(long, value_name = "FILE")]
    emit_vcs: Option<PathBuf>,
    /// Write the dual constraint system to FILE (`-` for stdout).
    #[arg(long, value_name = "FILE")]
    emit_dual: Option<PathBuf>,
    /// Write the SMT-LIB script to FILE (`-` for stdout).
    #[arg(long, value_name = "FILE")]
    emit_smt: Option<PathBuf>,
    #[arg(long)]
    solver: Option<PathBuf>,
    /// Give the initial automaton state a transient copy.
    #[arg(long)]
    fresh_init: bool,
    /// Certificate pieces per location: single, edges, branches or cells.
    #[arg(long, default_value_t = PieceMode::Single)]
    v_pieces: PieceMode,
    /// Fix a control parameter, e.g. `--set kappa=1/2`.
    #[arg(long = "set", value_name = "NAME=VALUE")]
    set: Vec<String>,
    /// Write the certificate here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                CliError::Job(streett_core::pipeline::JobError::Backend(_)) => EXIT_UNKNOWN,
                _ => EXIT_USAGE,
            }
        }
    };
    ExitCode::from(code)
}

fn write_out(path: &Path, text: &str) -> Result<(), CliError> {
    if path == Path::new("-") {
        print!("{text}");
        if !text.ends_with('\n') {
            println!();
        }
        Ok(())
    } else {
        std::fs::write(path, text).map_err(|source| CliError::Io { path: path.display().to_string(), source })
    }
}

fn run(command: Command) -> Result<u8, CliError> {
    match command {
        Command::Verify(args) => synthesize(args, false),
        Command::Control(args) => synthesize(args, true),
        Command::Check { model, automaton, certificate } => {
            let (model, dsa) = load_inputs(&model, &automaton)?;
            let (_, report) = check_certificate(&read_text(&certificate)?, &model, &dsa)?;
            match report.outcome {
                CheckOutcome::Valid => {
                    println!("valid ({} queries)", report.queries);
                    Ok(EXIT_OK)
                }
                CheckOutcome::Invalid(v) => {
                    println!("invalid: {v}");
                    Ok(EXIT_NEGATIVE)
                }
            }
        }
        Command::Simulate { model, automaton, certificate, trajectories, horizon, seed, suspect_after, json } => {
            let (model, dsa) = load_inputs(&model, &automaton)?;
            let cert = match &certificate {
                Some(path) => Some(
                    streett_core::checker::Certificate::from_json(&read_text(path)?, &model, &dsa)
                        .map_err(|e| CliError::Parse { path: path.display().to_string(), msg: e.to_string() })?,
                ),
                None => None,
            };
            let opts = SimOptions { trajectories, horizon, seed, suspect_after };
            let report = simulate(&model, &dsa, cert.as_ref(), &opts)
                .map_err(|e| CliError::Usage(format!("simulation: {e}")))?;
            if json {
                println!("{}", report.to_json());
            } else {
                println!("{report}");
            }
            let bad = report.invariant_violations > 0 || report.drift_violations() > 0;
            Ok(if bad { EXIT_NEGATIVE } else { EXIT_OK })
        }
        Command::Bench { corpus, only, jobs, timeout, solver, json, out } => {
            let manifest = load_manifest(&corpus)?;
            let entries: Vec<_> =
                manifest.benchmarks.into_iter().filter(|b| only.is_empty() || only.contains(&b.name)).collect();
            if let Some(missing) = only.iter().find(|n| !entries.iter().any(|b| &b.name == *n)) {
                return Err(CliError::Usage(format!("no benchmark named `{missing}`")));
            }
            let solver = SolverConfig::resolve(solver, Duration::from_secs(timeout));
            let rows = run_bench(&entries, &corpus, &solver, jobs);
            print!("{}", render_table(&rows));
            if let Some(path) = json {
                let text = serde_json::to_string_pretty(&rows).expect("rows serialize");
                write_out(&path, &text)?;
            }
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)
                    .map_err(|source| CliError::Io { path: dir.display().to_string(), source })?;
                for r in &rows {
                    if let Some(c) = &r.certificate {
                        write_out(&dir.join(format!("{}.json", r.name)), c)?;
                    }
                }
            }
            let passed = rows.iter().filter(|r| r.passed()).count();
            println!("{passed}/{} certified", rows.len());
            Ok(if passed == rows.len() {
                EXIT_OK
            } else if rows.iter().all(|r| r.passed() || r.verdict == "unsat" || r.check == "invalid") {
                EXIT_NEGATIVE
            } else {
                EXIT_UNKNOWN
            })
        }
    }
}

fn synthesize(args: SynthArgs, control: bool) -> Result<u8, CliError> {
    let mode = args.mode.unwrap_or(if control { SynthMode::VIC } else { SynthMode::V });
    if mode.synthesizes_controls() != control {
        let cmd = if control { "control" } else { "verify" };
        return Err(CliError::Usage(format!("mode {mode} does not belong to `{cmd}`")));
    }
    let opts = JobOptions {
        mode,
        inv_rows: args.inv_rows,
        invariant: args.invariant.clone(),
        set: args.set.clone(),
        backend: args.backend,
        qcp: args.qcp,
        fresh_init: args.fresh_init,
        pieces: args.v_pieces,
        solver: SolverConfig::resolve(args.solver.clone(), Duration::from_secs(args.timeout)),
    };
    let spec = opts.spec(&args.model, &args.automaton)?;
    if let Some(path) = &args.emit_vcs {
        write_out(path, &emit_vcs(&spec)?)?;
    }
    let result = run_job(&spec)?;
    if let Some(path) = &args.emit_dual {
        write_out(path, &result.dual_dump)?;
    }
    if let (Some(path), Some(script)) = (&args.emit_smt, &result.smtlib) {
        write_out(path, script)?;
    }
    let s = &result.stats;
    eprintln!(
        "{} implications ({} vacuous, {} premise-sat, {} general); {} variables, {} constraints, degree {}; backend {}{}",
        s.implications,
        s.vacuous,
        s.premise_sat,
        s.general,
        s.variables,
        s.constraints,
        s.degree,
        s.backend,
        s.forced_backend.as_ref().map(|f| format!(" (forced: {f})")).unwrap_or_default()
    );
    match result.outcome {
        JobOutcome::Certified { cert, check } => {
            let text = cert.to_json(&spec.model, &spec.dsa);
            match &args.out {
                Some(path) => write_out(path, &text)?,
                None => println!("{text}"),
            }
            eprintln!(
                "certified: independent check passed ({} queries){}; {:.2} s",
                check.queries,
                if s.repaired { "; solver model repaired by LP" } else { "" },
                s.wall_ms as f64 / 1000.0
            );
            Ok(EXIT_OK)
        }
        JobOutcome::Unsat => {
            println!("unsat: no certificate of this template shape");
            Ok(EXIT_NEGATIVE)
        }
        JobOutcome::Unknown(reason) => {
            println!("unknown: {reason}");
            Ok(EXIT_UNKNOWN)
        }
        JobOutcome::CheckFailed { violation, .. } => {
            println!("internal inconsistency: the solver's certificate fails the independent check: {violation}");
            Ok(EXIT_NEGATIVE)
        }
    }
}
