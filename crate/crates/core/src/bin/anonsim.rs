use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anonsim::checks::{check_trace, CheckReport, Status};
use anonsim::scenario::{fuzz, run_and_check, FuzzConfig, ModeSpec, Scenario};
use anonsim::trace::{Algorithm, Trace};
use clap::{Parser, Subcommand};

const EXIT_VIOLATION: u8 = 1;
const EXIT_USAGE: u8 = 2;

/// Simulate and check consensus and weak-set algorithms for anonymous networks.
#[derive(Parser)]
#[command(name = "anonsim", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario file and check the resulting trace.
    Run {
        scenario: PathBuf,
        /// Trace destination; overrides `output` in the scenario.
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Print the full report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Run many randomized variations of a template scenario.
    Fuzz {
        template: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        runs: u64,
        /// Largest process count to draw (defaults to the template's n).
        #[arg(long)]
        max_n: Option<usize>,
        /// lockstep, skewed or mixed (defaults to the template's mode).
        #[arg(long)]
        mode: Option<String>,
        /// Largest stabilization round to draw for ES/ESS.
        #[arg(long)]
        max_stabilization: Option<u32>,
        /// Where to write a scenario reproducing the smallest failing seed.
        #[arg(long)]
        repro: Option<PathBuf>,
        /// Worker threads (default: all cores).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Check an existing JSONL trace.
    Check {
        trace: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Run a few built-in scenarios and narrate them.
    Demo,
}

/// Errors that map to exit code 2.
#[derive(Debug, thiserror::Error)]
enum UsageError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Scenario { path: PathBuf, source: anonsim::scenario::ScenarioError },
    #[error("{path}: {source}")]
    Trace { path: PathBuf, source: anonsim::trace::TraceError },
    #[error("{0}")]
    Other(String),
}

fn read(path: &Path) -> Result<String, UsageError> {
    fs::read_to_string(path).map_err(|source| UsageError::Io { path: path.into(), source })
}

fn load_scenario(path: &Path) -> Result<Scenario, UsageError> {
    Scenario::from_toml(&read(path)?).map_err(|source| UsageError::Scenario { path: path.into(), source })
}

fn print_report(r: &CheckReport, json: bool) {
    if json {
        println!("{}", serde_json::to_string_pretty(r).expect("reports serialize"));
        return;
    }
    for (name, v) in &r.checks {
        let status = match v.status {
            Status::Ok => "ok",
            Status::Violation => "VIOLATION",
            Status::Skipped => "skipped",
        };
        let round = v.round.map(|k| format!(" (round {k})")).unwrap_or_default();
        let witness = if v.witness.is_empty() { String::new() } else { format!(": {}", v.witness) };
        println!("{name:<18} {status}{round}{witness}");
    }
    for (p, d) in &r.decisions {
        println!("process {p} decided {} in round {}", d.value, d.round);
    }
}

fn verdict(r: &CheckReport) -> u8 {
    if r.passed() {
        0
    } else {
        EXIT_VIOLATION
    }
}

fn write_trace(trace: &Trace, path: &Path) -> Result<(), UsageError> {
    let io_err = |source| UsageError::Io { path: path.into(), source };
    let file = fs::File::create(path).map_err(io_err)?;
    let mut w = io::BufWriter::new(file);
    trace.write_jsonl(&mut w).map_err(io_err)?;
    w.flush().map_err(io_err)
}

fn cmd_run(path: &Path, output: Option<PathBuf>, seed: Option<u64>, json: bool) -> Result<u8, UsageError> {
    let mut s = load_scenario(path)?;
    if let Some(seed) = seed {
        s.seed = seed;
    }
    let (trace, report) = run_and_check(&s).map_err(|source| UsageError::Scenario { path: path.into(), source })?;
    if let Some(out) = output.or(s.output.clone()) {
        write_trace(&trace, &out)?;
        eprintln!("wrote {} events to {}", trace.events.len(), out.display());
    }
    print_report(&report, json);
    Ok(verdict(&report))
}

struct FuzzArgs {
    template: PathBuf,
    seed: u64,
    runs: u64,
    max_n: Option<usize>,
    mode: Option<String>,
    max_stabilization: Option<u32>,
    repro: Option<PathBuf>,
    jobs: Option<usize>,
}

fn cmd_fuzz(a: FuzzArgs) -> Result<u8, UsageError> {
    let template = load_scenario(&a.template)?;
    let mut cfg = FuzzConfig::new(template, a.runs, a.seed);
    if let Some(m) = a.max_n {
        if m == 0 {
            return Err(UsageError::Other("--max-n must be at least 1".into()));
        }
        cfg.max_n = m;
    }
    if let Some(m) = a.mode {
        cfg.mode = match m.as_str() {
            "lockstep" => ModeSpec::Lockstep,
            "skewed" => ModeSpec::Skewed,
            "mixed" => ModeSpec::Mixed,
            other => return Err(UsageError::Other(format!("unknown mode `{other}`"))),
        };
    }
    if let Some(k) = a.max_stabilization {
        cfg.max_stabilization = k;
    }
    if let Some(j) = a.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| UsageError::Other(e.to_string()))?;
    }
    let records = fuzz(&cfg);
    let failed: Vec<_> = records.iter().filter(|r| !r.passed()).collect();
    for r in &failed {
        let why: Vec<String> = match &r.error {
            Some(e) => vec![format!("error: {e}")],
            None => r.report.violations().map(|(n, v)| format!("{n}: {}", v.witness)).collect(),
        };
        println!("seed {} FAIL {}", r.seed, why.join("; "));
    }
    println!("{} runs, {} failed", records.len(), failed.len());
    let Some(first) = failed.first() else { return Ok(0) };
    println!("smallest failing seed: {}", first.seed);
    let toml = first.scenario.to_toml();
    match a.repro {
        Some(path) => {
            fs::write(&path, toml).map_err(|source| UsageError::Io { path: path.clone(), source })?;
            println!("repro scenario written to {}", path.display());
        }
        None => println!("repro scenario:\n{toml}"),
    }
    Ok(EXIT_VIOLATION)
}

fn cmd_check(path: &Path, json: bool) -> Result<u8, UsageError> {
    let file = fs::File::open(path).map_err(|source| UsageError::Io { path: path.into(), source })?;
    let trace =
        Trace::read_jsonl(BufReader::new(file)).map_err(|source| UsageError::Trace { path: path.into(), source })?;
    let report = check_trace(&trace);
    print_report(&report, json);
    Ok(verdict(&report))
}

fn cmd_demo() -> Result<u8, UsageError> {
    let cases: [(&str, Algorithm, Vec<u64>); 3] = [
        ("one process, ES consensus", Algorithm::Es, vec![5]),
        ("two processes, ES consensus", Algorithm::Es, vec![3, 7]),
        ("one process, ESS consensus", Algorithm::Ess, vec![9]),
    ];
    let mut code = 0;
    for (title, alg, values) in cases {
        let mut s = Scenario::new(alg, values.len(), 12, 0);
        s.env = Some(anonsim::schedule::EnvKind::Ms);
        s.values = Some(values.clone());
        let (trace, report) = run_and_check(&s).map_err(|e| UsageError::Other(e.to_string()))?;
        println!("== {title}: proposals {values:?}, {} events", trace.events.len());
        for (p, d) in &report.decisions {
            println!("   process {p} decides {} in round {}", d.value, d.round);
        }
        code = code.max(verdict(&report));
    }
    let mut s = Scenario::new(Algorithm::Emulation, 4, 20, 1);
    s.values = Some(vec![4, 8, 15, 16]);
    let (trace, report) = run_and_check(&s).map_err(|e| UsageError::Other(e.to_string()))?;
    println!("== four processes over an emulated network: {} events", trace.events.len());
    for (p, d) in &report.decisions {
        println!("   process {p} decides {} in round {}", d.value, d.round);
    }
    Ok(code.max(verdict(&report)))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Run { scenario, output, seed, json } => cmd_run(&scenario, output, seed, json),
        Cmd::Fuzz { template, seed, runs, max_n, mode, max_stabilization, repro, jobs } => {
            cmd_fuzz(FuzzArgs { template, seed, runs, max_n, mode, max_stabilization, repro, jobs })
        }
        Cmd::Check { trace, json } => cmd_check(&trace, json),
        Cmd::Demo => cmd_demo(),
    };
    match res {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}
