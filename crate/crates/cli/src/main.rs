use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use quadpool::run::{explore, replay, run_random, RunOptions, RunReport};
use quadpool::trace::parse_bugs;
use quadpool::{BugConfig, Checks, Mode, Scenario, Trace};

/// Simulate and check a quad-buddy memory pool under concurrent threads.
#[derive(Parser)]
#[command(name = "quadpool", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario and report violations.
    Run(RunArgs),
    /// Parse and validate a scenario file, then print it with defaults filled in.
    Check {
        #[arg(long)]
        scenario: PathBuf,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Overrides the scenario's mode.
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_steps: Option<u64>,
    #[arg(long)]
    depth: Option<u32>,
    /// `none`, `all` or a comma list such as `bug1,bug3`. Defaults to the scenario's setting.
    #[arg(long, value_parser = parse_bugs)]
    bugs: Option<BugConfig>,
    /// `all`, `none` or a comma list of check families.
    #[arg(long = "check")]
    checks: Option<Checks>,
    /// Where a random run writes its trace.
    #[arg(long)]
    trace_out: Option<PathBuf>,
    /// Write the report as JSON.
    #[arg(long)]
    report_out: Option<PathBuf>,
    #[arg(long)]
    fail_fast: bool,
    /// Trace to replay.
    #[arg(long)]
    trace: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Run(args) => run(args),
        Cmd::Check { scenario } => Scenario::load(&scenario).map_err(Into::into).map(|sc| {
            println!("{}", sc.to_json());
            0
        }),
    };
    match res {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}

fn run(args: RunArgs) -> Result<i32> {
    let sc = Scenario::load(&args.scenario)?;
    let mode = args.mode.unwrap_or(sc.mode);
    let mut opts = RunOptions {
        seed: args.seed.unwrap_or(sc.seed),
        max_steps: args.max_steps.unwrap_or(sc.max_steps),
        depth_bound: args.depth.unwrap_or(sc.depth_bound),
        checks: args.checks.unwrap_or(sc.checks),
        fail_fast: args.fail_fast,
        ..RunOptions::default()
    };
    let bugs = args.bugs.unwrap_or(sc.bugs);

    let report: RunReport = match mode {
        Mode::Random => {
            let sys = sc.system(mode, bugs);
            let (trace, report) = run_random(&sys, &opts)?;
            if let Some(p) = &args.trace_out {
                std::fs::write(p, trace.to_text()).with_context(|| format!("writing {}", p.display()))?;
            }
            report
        }
        Mode::Exhaustive => {
            if args.trace_out.is_some() {
                bail!("--trace-out is only produced by random runs; exhaustive runs report schedules");
            }
            explore(&sc.system(mode, bugs), &opts)?
        }
        Mode::Replay => {
            let Some(path) = &args.trace else { bail!("--mode replay needs --trace PATH") };
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let trace = Trace::parse(&text).with_context(|| format!("parsing {}", path.display()))?;
            if args.bugs.is_some_and(|b| b != trace.header.bugs) {
                bail!("--bugs differs from the bugs recorded in the trace");
            }
            let mut sys = sc.system(mode, trace.header.bugs);
            sys.timer = trace.header.timer;
            if args.checks.is_none() {
                opts.checks = trace.header.checks;
            }
            replay(&sys, &trace, &opts)?
        }
    };

    print!("{}", report.to_text());
    if let Some(p) = &args.report_out {
        let json = serde_json::to_string_pretty(&report)?;
        std::fs::write(p, json).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(report.exit_code)
}
