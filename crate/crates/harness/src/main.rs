use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dynattack_harness::selftest::run_selftest;
use dynattack_harness::{emit_report, load_scenario, merge_csv, run_scenario, HarnessError, ReportFormat};

#[derive(Parser)]
#[command(name = "dynattack", version, about = "Efficiency attacks against dynamic-inference models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file and write its report.
    Run {
        scenario: PathBuf,
        /// Output directory.
        #[arg(long, env = "DYNATTACK_OUT_DIR", default_value = "out")]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = ReportFormat::Csv)]
        format: ReportFormat,
        /// Overrides the scenario's master seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check a scenario file without running it.
    Validate { scenario: PathBuf },
    Report {
        #[command(subcommand)]
        action: ReportAction,
    },
    /// Randomized invariant checks on small models.
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 25)]
        cases: usize,
    },
}

#[derive(Subcommand)]
enum ReportAction {
    /// Concatenate CSV reports to stdout.
    Merge {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Run {
            scenario,
            out,
            format,
            seed,
        } => {
            let mut sc = load_scenario(&scenario)?;
            if let Some(s) = seed {
                sc.seed = s;
            }
            let report = run_scenario(&sc)?;
            let path = emit_report(&report, format, &out)?;
            for r in &report.rows {
                eprintln!(
                    "{} eps={} flops {:+.1}% latency {:+.1}% energy {:+.1}%",
                    r.scenario_id, r.epsilon, r.flops_pct, r.latency_pct, r.energy_pct
                );
            }
            println!("{}", path.display());
        }
        Command::Validate { scenario } => {
            let sc = load_scenario(&scenario)?;
            println!("{}: ok ({}, {} budget(s))", sc.id, sc.behavior(), sc.epsilons().len());
        }
        Command::Report {
            action: ReportAction::Merge { files },
        } => {
            let bytes = merge_csv(&files)?;
            std::io::stdout().write_all(&bytes).map_err(|e| HarnessError::Io(e.to_string()))?;
        }
        Command::Selftest { seed, cases } => {
            let checks = run_selftest(seed, cases).map_err(|e| HarnessError::Runtime(e.to_string()))?;
            let mut ok = true;
            for c in &checks {
                println!(
                    "{} {} ({} cases){}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.cases,
                    if c.detail.is_empty() { String::new() } else { format!(": {}", c.detail) }
                );
                ok &= c.passed;
            }
            if !ok {
                return Err(HarnessError::Runtime("selftest failed".into()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
