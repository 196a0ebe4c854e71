use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use poel_cli::{cmd_report, cmd_run, cmd_validate, Format, RunConfig};

#[derive(Parser)]
#[command(
    name = "poel",
    version,
    about = "Run and inspect incentive-protocol scenarios"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a scenario file against every parameter invariant.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Simulate a scenario and write the trace and summary.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<u64>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Summarise a trace directory written by `run`.
    Report {
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate { config } => cmd_validate(&config).map(|s| {
            println!(
                "{}: ok ({} assets, {} epochs)",
                config.display(),
                s.assets.len(),
                s.epochs
            );
        }),
        Command::Run {
            config,
            out,
            seed,
            epochs,
            format,
        } => cmd_run(&RunConfig {
            config,
            out,
            seed,
            epochs,
            format,
        })
        .map(|o| {
            println!(
                "wrote {} ({} rows) and {}",
                o.trace.display(),
                o.rows,
                o.summary.display()
            );
        }),
        Command::Report { out } => cmd_report(&out).map(|r| print!("{r}")),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
