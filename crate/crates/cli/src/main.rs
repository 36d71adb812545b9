use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use miocp::driver::{relative_errors, RoundingMode};
use miocp::experiment::{run_experiment, ExperimentConfig};
use miocp::rounding::{accumulated_deviation, sur_round, write_deviation_csv, ControlTable};
use miocp::verify::{run_suite, VerifyReport, SUITES};

#[derive(Parser)]
#[command(
    name = "miocp",
    version,
    about = "Relax-and-round solver for mixed-integer optimal control"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Round relaxed multipliers from a controls CSV by sum-up rounding.
    Round(RoundArgs),
    /// Run a preset or a config file through the relax-round-refine loop.
    Experiment(ExperimentArgs),
    /// Run randomized self-checks and print a JSON report.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct RoundArgs {
    /// Controls CSV with columns t_start,t_end,mode_1..,u_1..
    input: PathBuf,
    /// Output CSV; stdout when omitted.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Deviation report CSV; a summary goes to stderr when omitted.
    #[arg(long)]
    deviation: Option<PathBuf>,
    /// Bisect the input grid this many times before rounding.
    #[arg(long, default_value_t = 0)]
    bisect: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Sur,
    Minmax,
}

/// `from,to,max_switches` with 1-based modes.
#[derive(Clone, Copy, Debug)]
struct BudgetArg([u32; 3]);

impl FromStr for BudgetArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(format!("expected i,j,K but got '{s}'"));
        }
        let mut out = [0u32; 3];
        for (o, p) in out.iter_mut().zip(&parts) {
            *o = p
                .parse()
                .map_err(|_| format!("'{p}' is not a non-negative integer"))?;
        }
        Ok(BudgetArg(out))
    }
}

#[derive(Args)]
struct ExperimentArgs {
    /// Preset name (heat or lotka); optional with --config.
    name: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; defaults to the config's `out` or runs/<name>.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Switch budget `i,j,K` (1-based modes); repeatable.
    #[arg(long = "budget")]
    budgets: Vec<BudgetArg>,
    /// Last refinement index k_max.
    #[arg(long)]
    refinements: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Suite name or `all`.
    #[arg(default_value = "all")]
    suite: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Round(a) => cmd_round(a),
        Command::Experiment(a) => cmd_experiment(a),
        Command::Verify(a) => cmd_verify(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &anyhow::Error) -> ExitCode {
    let validation = e.chain().any(|c| {
        c.downcast_ref::<miocp::Error>()
            .is_some_and(miocp::Error::is_validation)
    });
    if validation {
        ExitCode::from(2)
    } else {
        ExitCode::from(1)
    }
}

fn open(path: &Path) -> Result<File> {
    File::open(path).with_context(|| format!("cannot open {}", path.display()))
}

fn create(path: &Path) -> Result<File> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    File::create(path).with_context(|| format!("cannot create {}", path.display()))
}

fn cmd_round(a: RoundArgs) -> Result<ExitCode> {
    let table = ControlTable::read_csv(open(&a.input)?)
        .with_context(|| format!("reading {}", a.input.display()))?;
    let mut relaxed = table.to_relaxed()?;
    for _ in 0..a.bisect {
        relaxed = relaxed.inject(&relaxed.grid().refine_bisect())?;
    }
    let beta = sur_round(&relaxed);
    let out = ControlTable::from_binary(&beta, relaxed.omega());
    match &a.output {
        Some(p) => out.write_csv(create(p)?)?,
        None => out.write_csv(io::stdout().lock())?,
    }
    let report = accumulated_deviation(&relaxed, &beta)?;
    match &a.deviation {
        Some(p) => write_deviation_csv(&report, create(p)?)?,
        None => eprintln!(
            "max accumulated deviation {} (bound {})",
            report.overall_max, report.bound
        ),
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_experiment(a: ExperimentArgs) -> Result<ExitCode> {
    let mut config = match (&a.config, &a.name) {
        (Some(path), _) => {
            ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?
        }
        (None, Some(name)) => ExperimentConfig::preset(name)?,
        (None, None) => {
            return Err(
                miocp::Error::InvalidConfig("give a preset name or --config".into()).into(),
            );
        }
    };
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    if let Some(mode) = a.mode {
        config.algorithm.mode = match mode {
            ModeArg::Sur => RoundingMode::Sur,
            ModeArg::Minmax => RoundingMode::Minmax,
        };
    }
    if !a.budgets.is_empty() {
        config.algorithm.budgets = a.budgets.iter().map(|b| b.0).collect();
    }
    if let Some(k) = a.refinements {
        config.algorithm.k_max = k;
    }
    if let Some(eps) = a.epsilon {
        config.algorithm.epsilon = eps;
    }
    config.validate()?;
    let out_dir = a
        .out
        .or_else(|| config.out.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(a.name.as_deref().unwrap_or("custom")));

    let report = run_experiment(&config, &out_dir)?;
    let history = &report.outcome.history;
    let mut stdout = io::stdout().lock();
    writeln!(
        stdout,
        "{:>3} {:>10} {:>14} {:>14} {:>10}",
        "k", "dt_max", "J_rel", "J", "rel_error"
    )?;
    for (r, e) in history.iter().zip(relative_errors(history)) {
        writeln!(
            stdout,
            "{:>3} {:>10.4} {:>14.6e} {:>14.6e} {:>10.4}",
            r.k, r.dt_max, r.j_rel, r.j_int, e
        )?;
    }
    writeln!(
        stdout,
        "terminated: {}; returned iteration {} with J = {:.6e}; artifacts in {} ({:.1} s)",
        report.outcome.reason.label(),
        report.outcome.solution.k,
        report.outcome.solution.cost,
        out_dir.display(),
        report.elapsed.as_secs_f64()
    )?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(a: VerifyArgs) -> Result<ExitCode> {
    let names: Vec<&str> = if a.suite == "all" {
        SUITES.to_vec()
    } else {
        vec![a.suite.as_str()]
    };
    let mut reports: Vec<VerifyReport> = Vec::new();
    for name in names {
        let report = run_suite(name, a.seed)?;
        for c in &report.criteria {
            eprintln!(
                "{} {}: measured {:e}, threshold {:e} over {} instances",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.measured,
                c.threshold,
                c.instances
            );
        }
        reports.push(report);
    }
    let passed = reports.iter().all(VerifyReport::passed);
    let json = serde_json::json!({ "passed": passed, "suites": reports });
    let text = serde_json::to_string_pretty(&json)? + "\n";
    match &a.out {
        Some(p) => create(p)?.write_all(text.as_bytes())?,
        None => io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(if passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}
