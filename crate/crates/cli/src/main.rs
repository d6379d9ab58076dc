use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use nlstab::{exit, run, CliError, RunConfig, RunOutput};

#[derive(Debug, Parser)]
#[command(
    name = "nlstab",
    version,
    about = "Local stabilizability analysis and feedback synthesis for nonlinear control systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Linearization, Hautus and rank tests, openness probe.
    Analyze {
        config: PathBuf,
        /// Report path; printed to stdout when omitted.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Tabulate a local section of the vector field.
    Section {
        config: PathBuf,
        /// Section CSV path; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Synthesize a feedback for the target closed loop and verify it.
    Synthesize {
        config: PathBuf,
        /// Feedback CSV path; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
        /// Composition-symbol CSV, written when no feedback exists.
        #[arg(long)]
        symbol_out: Option<PathBuf>,
    },
    /// Integrate the closed loop from one initial state.
    Simulate {
        config: PathBuf,
        /// Initial state, comma separated.
        #[arg(long, required = true, value_delimiter = ',', allow_negative_numbers = true)]
        x0: Vec<f64>,
        #[arg(long)]
        t_final: Option<f64>,
        /// Trajectory CSV path; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn timestamp() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn write_or_print(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn finish(
    out: &RunOutput,
    table: Option<&Path>,
    report: Option<&Path>,
    report_to_stdout: bool,
) -> Result<i32, CliError> {
    if let Some(csv) = &out.table {
        write_or_print(table, csv)?;
    }
    let json = out.report_json(timestamp());
    match report {
        Some(p) => std::fs::write(p, json)?,
        None if report_to_stdout => print!("{json}"),
        None => {}
    }
    for line in &out.summary {
        eprintln!("{line}");
    }
    Ok(out.status.exit_code())
}

fn execute(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Analyze { config, report } => {
            let cfg = RunConfig::load(&config)?;
            let out = run::run_analyze(&cfg)?;
            finish(&out, None, report.as_deref(), true)
        }
        Command::Section { config, out, report } => {
            let cfg = RunConfig::load(&config)?;
            let result = run::run_section(&cfg)?;
            finish(&result, out.as_deref(), report.as_deref(), false)
        }
        Command::Synthesize {
            config,
            out,
            report,
            symbol_out,
        } => {
            let cfg = RunConfig::load(&config)?;
            let result = run::run_synthesize(&cfg)?;
            if let (Some(path), Some(csv)) = (symbol_out.as_deref(), &result.symbol_table) {
                std::fs::write(path, csv)?;
            }
            finish(&result.output, out.as_deref(), report.as_deref(), false)
        }
        Command::Simulate {
            config,
            x0,
            t_final,
            out,
        } => {
            let cfg = RunConfig::load(&config)?;
            let result = run::run_simulate(&cfg, &x0, t_final)?;
            finish(&result, out.as_deref(), None, false)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("nlstab: {e}");
            e.exit_code()
        }
    };
    debug_assert!((exit::OK..=exit::NUMERIC).contains(&code));
    ExitCode::from(code as u8)
}
