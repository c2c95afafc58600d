use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adept_core::analysis::{compare, render_tally_lines, CompareError};
use adept_core::backend::{Backend, LiveBackend, Script, ScriptError, ScriptedBackend, API_KEY_ENV};
use adept_core::config::{
    check_persona_dir, load_document, load_model_config, load_personas, load_scenario, BackendKind, ConfigError,
    ModelConfig,
};
use adept_core::engine::{run_debate, RunError};
use adept_core::par::parallel_available;
use adept_core::persistence::{load_trace, persist_report, persist_trace, write_comparison, PersistError};
use adept_core::replay::{replay_trace, ReplayError};
use adept_core::trace::DebateTrace;
use clap::{Parser, Subcommand, ValueEnum};

/// Exit codes: 0 success, 1 validation or configuration error, 2 backend
/// failure (partial trace persisted), 3 I/O error or unreadable trace,
/// 4 invariant violation or hash mismatch.
#[derive(Parser)]
#[command(name = "adept", version, about = "Run and audit structured multi-persona policy debates")]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendChoice {
    Live,
    Scripted,
}

#[derive(Subcommand)]
enum Command {
    /// Run a debate: openings, rebuttals, secret ballot, summary.
    Run {
        /// Scenario file with the fixed policy options.
        #[arg(long, default_value = "options.yaml")]
        scenario: PathBuf,
        /// Directory of persona YAML files; file name order is speaking order.
        #[arg(long, default_value = "personas")]
        personas: PathBuf,
        /// Model configuration. Required for the live backend; the scripted
        /// backend falls back to built-in defaults.
        #[arg(long)]
        model_config: Option<PathBuf>,
        /// Directory for the trace and report files.
        #[arg(long, default_value = "debate_outputs")]
        out: PathBuf,
        /// Backend to use [default: the model config's backend_kind, or
        /// scripted when --script is given].
        #[arg(long, value_enum)]
        backend: Option<BackendChoice>,
        /// Script fixture or recorded trace for the scripted backend.
        #[arg(long)]
        script: Option<PathBuf>,
        /// Issue the independent calls of each phase concurrently.
        #[arg(long)]
        parallel: bool,
    },
    /// Re-run a recorded trace offline and check its canonical hash.
    Replay {
        trace: PathBuf,
        #[arg(long, default_value = "debate_outputs")]
        out: PathBuf,
        #[arg(long)]
        parallel: bool,
    },
    /// Print the vote tally of a trace.
    Tally { trace: PathBuf },
    /// Compare two debates on the same scenario (vote shifts, membership, coalitions).
    Compare {
        trace_a: PathBuf,
        trace_b: PathBuf,
        /// Text report path; the JSON report is written beside it with a .json extension.
        #[arg(long, default_value = "debate_outputs/comparison.txt")]
        out: PathBuf,
    },
    /// Validate a persona directory or a single scenario, persona or model config file.
    Validate { path: PathBuf },
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl ToString) -> Self {
        Failure {
            code,
            message: message.to_string(),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        let code = if matches!(e, ConfigError::Io { .. }) { 3 } else { 1 };
        Failure::new(code, e)
    }
}

impl From<ScriptError> for Failure {
    fn from(e: ScriptError) -> Self {
        let code = if matches!(e, ScriptError::Io { .. }) { 3 } else { 1 };
        Failure::new(code, e)
    }
}

impl From<PersistError> for Failure {
    fn from(e: PersistError) -> Self {
        let code = match e {
            PersistError::Io { .. } | PersistError::Parse(_) => 3,
            PersistError::UnsupportedVersion(_) | PersistError::Incomplete(_) => 1,
            PersistError::HashMismatch { .. } | PersistError::InvalidTrace(_) => 4,
        };
        Failure::new(code, e)
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(level)),
        )
        .init();

    let outcome = match cli.command {
        Command::Run {
            scenario,
            personas,
            model_config,
            out,
            backend,
            script,
            parallel,
        } => cmd_run(RunArgs {
            scenario,
            personas,
            model_config,
            out,
            backend,
            script,
            parallel,
        }),
        Command::Replay { trace, out, parallel } => cmd_replay(&trace, &out, parallel),
        Command::Tally { trace } => cmd_tally(&trace),
        Command::Compare { trace_a, trace_b, out } => cmd_compare(&trace_a, &trace_b, &out),
        Command::Validate { path } => cmd_validate(&path),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            if !f.message.is_empty() {
                eprintln!("error: {}", f.message);
            }
            ExitCode::from(f.code)
        }
    }
}

struct RunArgs {
    scenario: PathBuf,
    personas: PathBuf,
    model_config: Option<PathBuf>,
    out: PathBuf,
    backend: Option<BackendChoice>,
    script: Option<PathBuf>,
    parallel: bool,
}

fn check_parallel(parallel: bool) {
    if parallel && !parallel_available() {
        eprintln!("warning: built without the `parallel` feature; calls run sequentially");
    }
}

fn cmd_run(args: RunArgs) -> Outcome {
    // credential check comes before anything else is loaded or created
    if args.backend == Some(BackendChoice::Live) && std::env::var(API_KEY_ENV).map_or(true, |k| k.trim().is_empty()) {
        return Err(Failure::new(1, format!("{API_KEY_ENV} is not set; the live backend needs it")));
    }
    let mut config = match &args.model_config {
        Some(path) => load_model_config(path)?,
        None if args.backend == Some(BackendChoice::Live) => {
            return Err(Failure::new(1, "the live backend needs --model-config"));
        }
        None => ModelConfig::scripted("scripted"),
    };
    let kind = match args.backend {
        Some(BackendChoice::Live) => BackendKind::Live,
        Some(BackendChoice::Scripted) => BackendKind::Scripted,
        None if args.script.is_some() => BackendKind::Scripted,
        None => config.backend_kind,
    };
    config.backend_kind = kind;
    if args.parallel {
        check_parallel(true);
        config.parallel_independent_calls = true;
    }

    let script = match (kind, &args.script) {
        (BackendKind::Scripted, Some(path)) => Some(Script::load(path)?),
        (BackendKind::Scripted, None) => return Err(Failure::new(1, "the scripted backend needs --script")),
        (BackendKind::Live, _) => None,
    };
    let scenario = load_scenario(&args.scenario)?;
    let personas = load_personas(&args.personas)?;

    let backend: Box<dyn Backend> = match script {
        None => Box::new(LiveBackend::from_env(&config).map_err(|e| Failure::new(1, e))?),
        Some(script) => {
            let scripted: BTreeSet<&str> = script.panel().iter().map(String::as_str).collect();
            let panel: BTreeSet<&str> = personas.iter().map(|p| p.name.as_str()).collect();
            if scripted != panel {
                return Err(Failure::new(
                    1,
                    format!(
                        "script panel {scripted:?} does not match the personas in {} {panel:?}",
                        args.personas.display()
                    ),
                ));
            }
            Box::new(ScriptedBackend::new(script))
        }
    };

    tracing::info!(personas = personas.len(), options = scenario.options.len(), "starting debate");
    let trace = match run_debate(&scenario, &personas, &config, backend.as_ref()) {
        Ok(trace) => trace,
        Err(RunError::Aborted { trace, source }) => {
            let path = persist_trace(&trace, &args.out)?;
            eprintln!("partial trace written to {}", path.display());
            return Err(Failure::new(2, format!("backend failure: {source}")));
        }
        Err(RunError::InvalidInput(msg)) => return Err(Failure::new(1, msg)),
        Err(e @ RunError::Prompt(_)) => return Err(Failure::new(4, e)),
    };
    finish(&trace, &args.out)
}

fn print_warnings(trace: &DebateTrace) {
    for w in &trace.warnings {
        eprintln!("warning: {w}");
    }
}

fn finish(trace: &DebateTrace, out: &Path) -> Outcome {
    print_warnings(trace);
    let trace_path = persist_trace(trace, out)?;
    let report_path = persist_report(trace, out)?;
    print_tally(trace)?;
    eprintln!("trace:  {}", trace_path.display());
    eprintln!("report: {}", report_path.display());
    Ok(())
}

fn print_tally(trace: &DebateTrace) -> Outcome {
    let tally = trace
        .tally
        .as_ref()
        .ok_or_else(|| Failure::new(1, "trace has no tally (the run was aborted)"))?;
    println!("{}", trace.scenario.title);
    for line in render_tally_lines(tally, &trace.scenario) {
        println!("{line}");
    }
    Ok(())
}

fn cmd_replay(path: &Path, out: &Path, parallel: bool) -> Outcome {
    check_parallel(parallel);
    let original = load_trace(path)?;
    let outcome = match replay_trace(&original, parallel) {
        Ok(o) => o,
        Err(e @ ReplayError::Script(_)) => return Err(Failure::new(1, e)),
        Err(ReplayError::Run(RunError::Aborted { source, .. })) => {
            return Err(Failure::new(4, format!("recording does not reproduce: {source}")));
        }
        Err(e) => return Err(Failure::new(4, e)),
    };
    if let Some(drift) = &outcome.template_drift {
        eprintln!("warning: template drift: {drift}");
    }
    println!("original {}", outcome.original_hash);
    println!("replay   {}", outcome.replay_hash);
    let trace_path = persist_trace(&outcome.trace, out)?;
    eprintln!("replayed trace: {}", trace_path.display());
    if outcome.matches() {
        println!("match");
        Ok(())
    } else {
        println!("MISMATCH");
        Err(Failure::new(4, "canonical hashes differ"))
    }
}

fn cmd_tally(path: &Path) -> Outcome {
    let trace = load_trace(path)?;
    print_tally(&trace)
}

fn cmd_compare(a: &Path, b: &Path, out: &Path) -> Outcome {
    let ta = load_trace(a)?;
    let tb = load_trace(b)?;
    let report = compare(&ta, &tb).map_err(|e| match e {
        CompareError::ScenarioMismatch => Failure::new(1, e),
        CompareError::MissingBallot(..) => Failure::new(1, e),
    })?;
    let (text, json) = write_comparison(&report, out)?;
    println!("{}", report.shift_summary());
    eprintln!("comparison: {} / {}", text.display(), json.display());
    Ok(())
}

fn cmd_validate(path: &Path) -> Outcome {
    if !path.exists() {
        return Err(Failure::new(1, format!("{}: no such file or directory", path.display())));
    }
    let verdicts = if path.is_dir() {
        check_persona_dir(path)?
            .into_iter()
            .map(|(p, v)| (p, v.map(|spec| format!("persona `{}`", spec.name))))
            .collect()
    } else {
        let verdict = load_document(path).map(|doc| doc.kind().to_string());
        vec![(path.to_path_buf(), verdict)]
    };
    let mut failures = Vec::new();
    for (file, verdict) in verdicts {
        match verdict {
            Ok(what) => println!("OK    {}  ({what})", file.display()),
            Err(e) => {
                println!("ERROR {}", file.display());
                failures.push(e);
            }
        }
    }
    if failures.is_empty() {
        return Ok(());
    }
    for (i, e) in failures.iter().enumerate() {
        eprintln!("  {}. {e}", i + 1);
    }
    let io = failures.iter().any(|e| matches!(e, ConfigError::Io { .. }));
    Err(Failure::new(if io { 3 } else { 1 }, format!("{} invalid file(s)", failures.len())))
}
