//! The `sead` command line. Exit codes: 0 ok, 1 findings, 2 usage or IO,
//! 3 non-quiescent run.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::json;

use crate::catalogue::builtin_registry;
use crate::diagnostic::{self, Diagnostic, Rule};
use crate::dot;
use crate::mdl::{compile, parse, validate, Library, MdlDocument, Registry};
use crate::simulation::{run, RunOptions, RunReport, Scenario, SimConfig};
use crate::verification;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FINDINGS: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NON_QUIESCENT: i32 = 3;

/// Names the default config file when `--config` is absent.
pub const CONFIG_ENV: &str = "SEAD_CONFIG";

#[derive(Debug, Parser)]
#[command(name = "sead", version, about = "Design, verify and simulate platooning manoeuvres")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse and validate MDL documents against the built-in catalogue.
    Validate(Docs),
    /// Validate, then run the stability and synchronisation checks.
    Verify {
        #[command(flatten)]
        docs: Docs,
        /// Print every reachable (result, final states) outcome.
        #[arg(long)]
        enumerate: bool,
    },
    /// Simulate one or more scenarios.
    Run(RunArgs),
    /// Write the DOT graph of a catalogue id or an MDL file.
    ExportDot {
        target: String,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct Docs {
    /// MDL files or directories of `*.mdl.json`; none means the catalogue.
    paths: Vec<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(required = true)]
    scenarios: Vec<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON file mirroring the simulation parameters.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Message drop probability.
    #[arg(long)]
    drop: Option<f64>,
    #[arg(long)]
    t_max: Option<f64>,
    /// JSONL trace file; a directory when several scenarios run.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// DOT export of the manoeuvres the scenario starts.
    #[arg(long)]
    dot: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

/// Runs the command line and returns the process exit code.
pub fn main_with<I, T>(args: I, env_config: Option<PathBuf>, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { write!(err, "{text}") } else { write!(out, "{text}") };
            return code;
        }
    };
    let result = match cli.command {
        Command::Validate(docs) => cmd_validate(&docs, out, err),
        Command::Verify { docs, enumerate } => cmd_verify(&docs, enumerate, out, err),
        Command::Run(args) => cmd_run(&args, env_config, out, err),
        Command::ExportDot { target, output } => cmd_export_dot(&target, output.as_deref(), out),
    };
    result.unwrap_or_else(|msg| {
        let _ = writeln!(err, "error: {msg}");
        EXIT_USAGE
    })
}

pub fn main() -> i32 {
    let env_config = std::env::var_os(CONFIG_ENV).filter(|v| !v.is_empty()).map(PathBuf::from);
    main_with(std::env::args_os(), env_config, &mut std::io::stdout(), &mut std::io::stderr())
}

type CmdResult = Result<i32, String>;

fn read(path: &Path) -> Result<Vec<u8>, String> {
    std::fs::read(path).map_err(|e| format!("cannot read {}: {e}", path.display()))
}

fn expand(paths: &[PathBuf]) -> Result<Vec<PathBuf>, String> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| format!("cannot list {}: {e}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.to_string_lossy().ends_with(".mdl.json"))
                .collect();
            found.sort();
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

/// Parsed documents keyed by their source name, plus parse diagnostics.
struct Loaded {
    docs: Vec<(String, MdlDocument)>,
    diagnostics: Vec<Diagnostic>,
    registry: Registry,
}

fn load(paths: &[PathBuf]) -> Result<Loaded, String> {
    let builtin = builtin_registry();
    if paths.is_empty() {
        let docs = builtin.iter().map(|d| (format!("catalogue/{}.mdl.json", d.id), (**d).clone())).collect();
        return Ok(Loaded { docs, diagnostics: Vec::new(), registry: builtin });
    }
    let mut docs = Vec::new();
    let mut diagnostics = Vec::new();
    for p in expand(paths)? {
        let bytes = read(&p)?;
        let name = p.display().to_string();
        match parse(&bytes) {
            Ok(d) => docs.push((name, d)),
            Err(e) => diagnostics.push(Diagnostic::error(
                Rule::ParseError,
                format!("{name}:{}", e.path().unwrap_or("$")),
                e.to_string(),
            )),
        }
    }
    let registry = builtin.overlay(docs.iter().map(|(_, d)| d.clone()));
    Ok(Loaded { docs, diagnostics, registry })
}

fn report(diags: &mut Vec<Diagnostic>, json: bool, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    diags.sort();
    diags.dedup();
    for d in diags.iter() {
        let _ = writeln!(err, "{d}");
    }
    if json {
        let _ = writeln!(out, "{}", diagnostic::to_json(diags));
    }
    if diagnostic::has_errors(diags) {
        EXIT_FINDINGS
    } else {
        EXIT_OK
    }
}

fn cmd_validate(docs: &Docs, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    let loaded = load(&docs.paths)?;
    let mut diags = loaded.diagnostics;
    for (_, d) in &loaded.docs {
        diags.extend(validate(d, &loaded.registry));
    }
    Ok(report(&mut diags, docs.json, out, err))
}

fn cmd_verify(docs: &Docs, enumerate: bool, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    let loaded = load(&docs.paths)?;
    let mut diags = loaded.diagnostics;
    let mut outcomes = BTreeMap::new();
    for (_, d) in &loaded.docs {
        let found = validate(d, &loaded.registry);
        let invalid = diagnostic::has_errors(&found);
        diags.extend(found);
        if invalid {
            continue;
        }
        let Ok(behaviour) = compile(d, &loaded.registry) else { continue };
        diags.extend(verification::verify(&behaviour));
        if enumerate {
            let en = verification::enumerate_outcomes(&behaviour);
            outcomes.insert(d.id.to_string(), en.outcomes);
        }
    }
    if enumerate {
        if docs.json {
            let _ = writeln!(out, "{}", serde_json::to_string_pretty(&outcomes).expect("outcomes serialize"));
        } else {
            for (id, set) in &outcomes {
                let _ = writeln!(out, "{id}");
                for o in set {
                    let _ = writeln!(out, "  {o}");
                }
            }
        }
    }
    Ok(report(&mut diags, docs.json && !enumerate, out, err))
}

fn cmd_export_dot(target: &str, output: Option<&Path>, out: &mut dyn Write) -> CmdResult {
    let registry = builtin_registry();
    let doc = match registry.get(target) {
        Some(d) => (**d).clone(),
        None => {
            let bytes = read(Path::new(target))?;
            parse(&bytes).map_err(|e| format!("{target}: {e}"))?
        }
    };
    let text = dot::document_dot(&doc);
    write_or_print(output, &text, out)?;
    Ok(EXIT_OK)
}

fn write_or_print(path: Option<&Path>, text: &str, out: &mut dyn Write) -> Result<(), String> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| format!("cannot write {}: {e}", p.display())),
        None => out.write_all(text.as_bytes()).map_err(|e| e.to_string()),
    }
}

/// Defaults, then the config file (`--config`, else `SEAD_CONFIG`), then flags.
fn resolve_config(args: &RunArgs, env_config: Option<PathBuf>) -> Result<SimConfig, String> {
    let mut config = match args.config.clone().or(env_config) {
        Some(p) => SimConfig::load(&p).map_err(|e| format!("{}: {e}", p.display()))?,
        None => SimConfig::default(),
    };
    if let Some(p) = args.drop {
        config.drop_probability = p;
    }
    if let Some(t) = args.t_max {
        config.t_max = t;
    }
    config.check().map_err(|e| e.to_string())?;
    Ok(config)
}

fn cmd_run(args: &RunArgs, env_config: Option<PathBuf>, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    let config = resolve_config(args, env_config)?;
    let scenarios = args
        .scenarios
        .iter()
        .map(|p| Scenario::load(p).map(|s| (p.clone(), s)).map_err(|e| format!("{}: {e}", p.display())))
        .collect::<Result<Vec<_>, _>>()?;
    let library = Arc::new(
        Library::build(&builtin_registry()).map_err(|e| format!("catalogue does not compile: {e:?}"))?,
    );
    let options = RunOptions { seed: args.seed, ..RunOptions::default() };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs.max(1))
        .build()
        .map_err(|e| e.to_string())?;
    let reports: Vec<RunReport> = pool.install(|| {
        scenarios
            .par_iter()
            .map(|(_, s)| run(s, &config, &library, options))
            .collect()
    });

    let several = scenarios.len() > 1;
    if let (Some(dir), true) = (&args.trace, several) {
        std::fs::create_dir_all(dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))?;
    }
    let mut code = EXIT_OK;
    let mut dots = String::new();
    for ((path, scenario), report) in scenarios.iter().zip(&reports) {
        if let Some(t) = &args.trace {
            let file = if several { t.join(format!("{}.jsonl", stem(path))) } else { t.clone() };
            std::fs::write(&file, report.trace.to_jsonl()).map_err(|e| format!("cannot write {}: {e}", file.display()))?;
        }
        print_summary(out, &stem(path), args.seed, report);
        if !report.quiescent {
            let _ = writeln!(err, "{}: NON_QUIESCENT at t={} s", path.display(), report.end_time);
            code = code.max(EXIT_NON_QUIESCENT);
        } else if !report.all_stable() || !report.violations.is_empty() {
            for v in &report.violations {
                let _ = writeln!(err, "{}: {v}", path.display());
            }
            code = code.max(EXIT_FINDINGS);
        }
        let mut seen = Vec::new();
        for e in &scenario.script {
            if seen.contains(&e.action) {
                continue;
            }
            if let Some(b) = library.get(&e.action) {
                dots.push_str(&dot::to_dot(b));
            }
            seen.push(e.action.clone());
        }
    }
    if let Some(p) = &args.dot {
        std::fs::write(p, &dots).map_err(|e| format!("cannot write {}: {e}", p.display()))?;
    }
    Ok(code)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "scenario".into())
}

fn print_summary(out: &mut dyn Write, name: &str, seed: u64, r: &RunReport) {
    let status = if r.quiescent { "quiescent" } else { "NOT quiescent" };
    let _ = writeln!(out, "{name} (seed {seed}): {status} at {:.1} s, {} messages", r.end_time, r.messages_sent);
    let _ = writeln!(out, "  {:<12} {:<6} {:<10} {:>9} {:>9} {:>7}", "manoeuvre", "leader", "result", "duration", "messages", "aborts");
    for s in &r.summary {
        let _ = writeln!(
            out,
            "  {:<12} {:<6} {:<10} {:>8.1}s {:>9} {:>7}",
            s.manoeuvre.as_str(),
            s.leader.as_str(),
            s.result.join(","),
            s.duration,
            s.messages,
            s.aborts
        );
    }
    let finals: Vec<String> = r.finals.iter().map(|(v, s)| format!("{v}={s}")).collect();
    let _ = writeln!(out, "  finals: {}", finals.join(" "));
    let _ = writeln!(out, "  {}", json!({"all_stable": r.all_stable(), "violations": r.violations.len(), "min_gap": r.min_gap}));
}
