use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use coap_icn::harness::{self, Mode, Scenario};

#[derive(Parser)]
#[command(name = "coap-icn", version, about = "Run CoAP-over-ICN gateway scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file and print its metrics.
    Run {
        scenario: PathBuf,
        /// Run the direct IP unicast deployment instead of the gateway.
        #[arg(long)]
        baseline: bool,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Write the event trace here.
        #[arg(long, value_name = "FILE")]
        trace: Option<PathBuf>,
        /// Also run the other deployment and write the comparison here.
        #[arg(long, value_name = "FILE")]
        report: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if is_broken_pipe(e.as_ref()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn execute(command: Command) -> Result<(), Box<dyn std::error::Error>> {
    let Command::Run {
        scenario,
        baseline,
        seed,
        trace,
        report,
    } = command;
    let mut s = Scenario::load(&scenario)?;
    if let Some(seed) = seed {
        s.seed = seed;
    }
    let mode = if baseline { Mode::Baseline } else { Mode::Gateway };
    let run = harness::run(&s, mode)?;
    let mut out = io::stdout().lock();
    write!(out, "{}", run.metrics)?;
    if let Some(path) = trace {
        run.trace.write_to(&path)?;
    }
    if let Some(path) = report {
        let other = harness::run(&s, if baseline { Mode::Gateway } else { Mode::Baseline })?;
        let (g, b) = if baseline {
            (&other.metrics, &run.metrics)
        } else {
            (&run.metrics, &other.metrics)
        };
        let r = harness::report(g, b)?;
        std::fs::write(&path, r.to_string())?;
        write!(out, "{r}")?;
    }
    Ok(())
}

fn is_broken_pipe(e: &(dyn std::error::Error + 'static)) -> bool {
    e.downcast_ref::<io::Error>()
        .is_some_and(|e| e.kind() == io::ErrorKind::BrokenPipe)
}
