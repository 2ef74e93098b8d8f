//! Command-line front end: run a scenario under a dispatching strategy,
//! validate a scenario file, or compare the built-in strategies.
//!
//! Exit codes: 0 success, 1 validation or run failure, 2 usage error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use shopfloor_core::{
    run_simulation_with, validate_scenario, Outcome, RunOptions, RunReport, Scenario,
    StrategyRegistry, Trace, DEFAULT_TICK_LIMIT,
};

#[derive(Parser)]
#[command(name = "shopfloor", version, about = "Deterministic factory-floor fleet dispatch simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario under one dispatching strategy
    Run {
        /// Scenario JSON file
        #[arg(long)]
        scenario: PathBuf,
        /// Dispatching strategy designation
        #[arg(long)]
        strategy: String,
        /// Where to write the JSONL run trace
        #[arg(long, default_value = "trace.jsonl")]
        trace: PathBuf,
        /// Where to write the JSON run report
        #[arg(long, default_value = "report.json")]
        report: PathBuf,
        /// Record a world snapshot every tick
        #[arg(long)]
        snapshots: bool,
        /// Abort the run after this many ticks
        #[arg(long, default_value_t = DEFAULT_TICK_LIMIT)]
        tick_limit: u64,
    },
    /// Check a scenario file against every invariant
    Validate {
        /// Scenario JSON file
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Run both built-in strategies and print a makespan comparison
    Compare {
        /// Scenario JSON file
        #[arg(long)]
        scenario: PathBuf,
        /// Record world snapshots in both runs
        #[arg(long)]
        snapshots: bool,
        /// Abort each run after this many ticks
        #[arg(long, default_value_t = DEFAULT_TICK_LIMIT)]
        tick_limit: u64,
    },
}

const EXIT_OK: u8 = 0;
const EXIT_FAILURE: u8 = 1;
const EXIT_USAGE: u8 = 2;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run { scenario, strategy, trace, report, snapshots, tick_limit } => {
            cmd_run(&scenario, &strategy, &trace, &report, RunOptions { snapshots, tick_limit })
        }
        Command::Validate { scenario } => cmd_validate(&scenario),
        Command::Compare { scenario, snapshots, tick_limit } => {
            cmd_compare(&scenario, RunOptions { snapshots, tick_limit })
        }
    };
    ExitCode::from(code)
}

fn load(path: &Path) -> Result<Scenario, u8> {
    shopfloor_core::load_scenario(path).map_err(|err| {
        eprintln!("{err}");
        EXIT_FAILURE
    })
}

fn cmd_run(
    scenario_path: &Path,
    strategy: &str,
    trace_path: &Path,
    report_path: &Path,
    options: RunOptions,
) -> u8 {
    // resolve the designation first so typos are a usage error
    if let Err(err) = StrategyRegistry::with_builtins().create(strategy) {
        eprintln!("{err}");
        return EXIT_USAGE;
    }
    let scenario = match load(scenario_path) {
        Ok(s) => s,
        Err(code) => return code,
    };
    let (trace, report) = match run_simulation_with(&scenario, strategy, options) {
        Ok(outcome) => outcome,
        Err(err) => {
            eprintln!("run failed: {err}");
            return EXIT_FAILURE;
        }
    };
    if let Err(code) = write_outputs(&trace, &report, trace_path, report_path) {
        return code;
    }
    print_summary(&report);
    println!("trace: {}", trace_path.display());
    println!("report: {}", report_path.display());
    EXIT_OK
}

fn write_outputs(
    trace: &Trace,
    report: &RunReport,
    trace_path: &Path,
    report_path: &Path,
) -> Result<(), u8> {
    let write = || -> std::io::Result<()> {
        trace.write_jsonl(std::fs::File::create(trace_path)?)?;
        let mut report_json = serde_json::to_string_pretty(report).expect("report serializes");
        report_json.push('\n');
        std::fs::write(report_path, report_json)?;
        Ok(())
    };
    write().map_err(|err| {
        eprintln!("cannot write outputs: {err}");
        EXIT_FAILURE
    })
}

fn print_summary(report: &RunReport) {
    let completed = report.per_task.values().filter(|t| t.outcome == Outcome::Completed).count();
    let failed = report.per_task.len() - completed;
    println!(
        "{}: makespan {} ticks, {} task(s) completed, {} failed",
        report.strategy, report.makespan_ticks, completed, failed
    );
    for (robot, stats) in &report.per_robot {
        println!(
            "  {robot}: busy {} wait {} idle {} ({} completed, {} failed)",
            stats.busy_ticks,
            stats.wait_ticks,
            stats.idle_ticks,
            stats.tasks_completed,
            stats.tasks_failed
        );
    }
}

fn cmd_validate(scenario_path: &Path) -> u8 {
    let text = match std::fs::read_to_string(scenario_path) {
        Ok(text) => text,
        Err(err) => {
            eprintln!("cannot read {}: {err}", scenario_path.display());
            return EXIT_FAILURE;
        }
    };
    let scenario: Scenario = match serde_json::from_str(&text) {
        Ok(scenario) => scenario,
        Err(err) => {
            eprintln!("cannot parse {}: {err}", scenario_path.display());
            return EXIT_FAILURE;
        }
    };
    let violations = validate_scenario(&scenario);
    if violations.is_empty() {
        println!(
            "scenario valid: {} robot(s), {} task(s)",
            scenario.robots.len(),
            scenario.tasks.len()
        );
        EXIT_OK
    } else {
        for violation in &violations {
            println!("{violation}");
        }
        EXIT_FAILURE
    }
}

fn cmd_compare(scenario_path: &Path, options: RunOptions) -> u8 {
    let scenario = match load(scenario_path) {
        Ok(s) => s,
        Err(code) => return code,
    };
    let mut rows = Vec::new();
    for designation in StrategyRegistry::with_builtins().designations() {
        match run_simulation_with(&scenario, &designation, options) {
            Ok((_, report)) => rows.push(report),
            Err(err) => {
                eprintln!("{designation} run failed: {err}");
                return EXIT_FAILURE;
            }
        }
    }
    println!(
        "{:<12} {:>9} {:>10} {:>7} {:>9}",
        "strategy", "makespan", "completed", "failed", "messages"
    );
    for report in &rows {
        let completed = report.per_task.values().filter(|t| t.outcome == Outcome::Completed).count();
        let failed = report.per_task.len() - completed;
        let messages: u64 = report.message_counts.values().sum();
        println!(
            "{:<12} {:>9} {:>10} {:>7} {:>9}",
            report.strategy, report.makespan_ticks, completed, failed, messages
        );
    }
    if let Some(best) = rows.iter().min_by_key(|r| r.makespan_ticks) {
        println!("fastest: {} ({} ticks)", best.strategy, best.makespan_ticks);
    }
    EXIT_OK
}
