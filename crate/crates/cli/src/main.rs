use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use bondsim::harness::report::{render_batch_csv, render_comparison_csv};
use bondsim::harness::{
    compare, emit_batch, emit_comparison, emit_reports, load_scenario, run, run_failover_batch, Mode, Scenario,
};

/// Packet-level simulator of bonded router links: failover and QoS experiments.
#[derive(Parser)]
#[command(name = "bondsim", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario and write its CSV report and summary.
    Run(Common),
    /// Run the randomized failover batch.
    Batch {
        #[command(flatten)]
        common: Common,
        /// Trials per cell (one-link batch) or in total (two-link batch).
        #[arg(long)]
        trials: Option<u32>,
    },
    /// Run the scenario bonded and single-link and compare per-service QoS.
    Compare(Common),
    /// Parse and validate a scenario file.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// Scenario file (TOML); defaults apply when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, value_enum)]
    mode: Option<CliMode>,
}

#[derive(Clone, Copy, ValueEnum)]
enum CliMode {
    Bonded,
    Single,
}

enum Failure {
    Config(anyhow::Error),
    Violations,
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Config(e)
    }
}

fn scenario(c: &Common) -> Result<Scenario> {
    let mut s = match &c.scenario {
        Some(p) => load_scenario(p).with_context(|| format!("loading {}", p.display()))?,
        None => Scenario::default(),
    };
    if let Some(seed) = c.seed {
        s.seed = seed;
    }
    if let Some(m) = c.mode {
        s.mode = match m {
            CliMode::Bonded => Mode::Bonded,
            CliMode::Single => Mode::SingleLink,
        };
    }
    Ok(s)
}

fn print_paths(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn cmd_run(c: &Common) -> Result<(), Failure> {
    let s = scenario(c)?;
    let r = run(&s).context("running scenario")?;
    print_paths(&emit_reports(&r, &c.out).context("writing reports")?);
    for q in &r.qos {
        println!(
            "{:<12} delay {:>9} ms  jitter {:>7} ms  throughput {:>8} Mb/s  loss {:>7} %",
            q.service, q.delay_ms, q.jitter_ms, q.throughput_mbps, q.loss_pct
        );
    }
    for d in &r.downtime {
        println!("{:<12} downtime {} ms", d.label, d.total_ms());
    }
    if r.violations.total() > 0 || !r.conservation_ok() {
        eprintln!(
            "invariant violations: ordering {}, duplicate {}, modified {}, conservation {}",
            r.violations.ordering,
            r.violations.duplicate,
            r.violations.modified,
            if r.conservation_ok() { "ok" } else { "FAILED" }
        );
        return Err(Failure::Violations);
    }
    Ok(())
}

fn cmd_batch(c: &Common, trials: Option<u32>) -> Result<(), Failure> {
    let mut s = scenario(c)?;
    if let Some(n) = trials {
        s.failover.trials_per_cell = n;
        s.failover.trials = n;
    }
    let b = run_failover_batch(&s).context("running failover batch")?;
    print_paths(&emit_batch(&b, &c.out).context("writing reports")?);
    print!("{}", render_batch_csv(&b));
    let bad = b
        .trials
        .iter()
        .filter(|t| t.violations.total() > 0 || !t.conservation_ok)
        .count();
    if bad > 0 {
        eprintln!("{bad} trial(s) recorded invariant violations");
        return Err(Failure::Violations);
    }
    Ok(())
}

fn cmd_compare(c: &Common) -> Result<(), Failure> {
    let s = scenario(c)?;
    let bonded = run(&Scenario {
        mode: Mode::Bonded,
        ..s.clone()
    })
    .context("bonded run")?;
    let single = run(&Scenario {
        mode: Mode::SingleLink,
        ..s
    })
    .context("single-link run")?;
    let cmp = compare(&bonded, &single).map_err(anyhow::Error::from)?;
    let mut paths = emit_reports(&bonded, &c.out).context("writing reports")?;
    paths.extend(emit_reports(&single, &c.out).context("writing reports")?);
    paths.push(emit_comparison(&cmp, &c.out).context("writing comparison")?);
    print_paths(&paths);
    print!("{}", render_comparison_csv(&cmp));
    if bonded.violations.total() + single.violations.total() > 0
        || !bonded.conservation_ok()
        || !single.conservation_ok()
    {
        return Err(Failure::Violations);
    }
    Ok(())
}

fn cmd_validate(path: &Path) -> Result<(), Failure> {
    let s = load_scenario(path).with_context(|| format!("loading {}", path.display()))?;
    println!(
        "{}: ok ({}, {} routers, {} services, {} failures, seed {})",
        path.display(),
        s.mode.as_str(),
        s.topology.routers,
        s.services.len(),
        s.failures.len(),
        s.seed
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let res = match &cli.cmd {
        Cmd::Run(c) => cmd_run(c),
        Cmd::Batch { common, trials } => cmd_batch(common, *trials),
        Cmd::Compare(c) => cmd_compare(c),
        Cmd::Validate { scenario } => cmd_validate(scenario),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Violations) => ExitCode::from(2),
    }
}
