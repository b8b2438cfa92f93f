use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use detime::config::{load_config, CheckKind};
use detime::error::Error;
use detime::run::{simulate, sweep_dt, write_outputs};

/// Detection-time distributions for repeatedly measured quantum systems.
#[derive(Parser)]
#[command(name = "detime", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write the configured outputs
    Simulate {
        /// JSON run configuration
        config: PathBuf,
    },
    /// Re-run a scenario over a list of step sizes and report convergence
    SweepDt {
        config: PathBuf,
        /// comma-separated step sizes, e.g. --dt 0.1,0.05,0.025
        #[arg(long, value_delimiter = ',', required = true)]
        dt: Vec<f64>,
    },
    /// Run consistency checks without writing distribution outputs
    Check {
        config: PathBuf,
        /// comma-separated subset of: zeno, povm, residual, cross_engine
        #[arg(long, value_delimiter = ',')]
        checks: Option<Vec<String>>,
    },
}

const EXIT_CONFIG: u8 = 2;
const EXIT_CHECK: u8 = 3;
const EXIT_IO: u8 = 4;

fn exit_for(err: &Error) -> u8 {
    match err {
        Error::Io(_) => EXIT_IO,
        Error::CheckFailed { .. } => EXIT_CHECK,
        _ => EXIT_CONFIG,
    }
}

fn fail(err: Error) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(exit_for(&err))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate { config } => {
            let cfg = match load_config(&config) {
                Ok(c) => c,
                Err(e) => return fail(e),
            };
            let run = match simulate(&cfg) {
                Ok(r) => r,
                Err(e) => return fail(e),
            };
            for w in &run.report.warnings {
                eprintln!("warning: {w}");
            }
            if let Err(e) = write_outputs(&cfg, &run) {
                return fail(e);
            }
            match serde_json::to_string_pretty(&run.report) {
                Ok(text) => println!("{text}"),
                Err(e) => return fail(Error::validation(e.to_string())),
            }
            if run.report.all_checks_passed() {
                ExitCode::SUCCESS
            } else {
                let failed: Vec<_> = run
                    .report
                    .checks
                    .iter()
                    .filter(|c| !c.passed)
                    .map(|c| c.name)
                    .collect();
                fail(Error::CheckFailed {
                    name: failed.join(","),
                    detail: "see report for details".into(),
                })
            }
        }
        Command::SweepDt { config, dt } => {
            let cfg = match load_config(&config) {
                Ok(c) => c,
                Err(e) => return fail(e),
            };
            match sweep_dt(&cfg, &dt) {
                Ok(report) => match serde_json::to_string_pretty(&report) {
                    Ok(text) => {
                        println!("{text}");
                        ExitCode::SUCCESS
                    }
                    Err(e) => fail(Error::validation(e.to_string())),
                },
                Err(e) => fail(e),
            }
        }
        Command::Check { config, checks } => {
            let mut cfg = match load_config(&config) {
                Ok(c) => c,
                Err(e) => return fail(e),
            };
            if let Some(names) = checks {
                let mut parsed = Vec::new();
                for name in &names {
                    match CheckKind::parse(name) {
                        Ok(k) => parsed.push(k),
                        Err(e) => return fail(e),
                    }
                }
                cfg.checks = parsed;
            }
            if cfg.checks.is_empty() {
                cfg.checks = vec![
                    CheckKind::Zeno,
                    CheckKind::Povm,
                    CheckKind::Residual,
                    CheckKind::CrossEngine,
                ];
            }
            // checks need both engines regardless of the config's choice
            cfg.engine = detime::config::Engine::Both;
            cfg.outputs = Default::default();
            let run = match simulate(&cfg) {
                Ok(r) => r,
                Err(e) => return fail(e),
            };
            let mut all_ok = true;
            for c in &run.report.checks {
                println!(
                    "{} {}: {}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.detail
                );
                all_ok &= c.passed;
            }
            if all_ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_CHECK)
            }
        }
    }
}
