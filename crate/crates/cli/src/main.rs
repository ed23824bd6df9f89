use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use klap_cli::verify::Scale;
use klap_cli::{commands, EXIT_ERROR, EXIT_OK};

/// KL ambient projection solver on finite state spaces.
#[derive(Debug, Parser)]
#[command(name = "klap", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve one scenario; writes the trajectory CSV and a JSON summary.
    Solve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Print the identifiability report of a kernel.
    Identify {
        #[arg(long, conflicts_with = "kernel", required_unless_present = "kernel")]
        config: Option<PathBuf>,
        /// A `klap-kernel v1` matrix file.
        #[arg(long)]
        kernel: Option<PathBuf>,
    },
    /// Run the property suite.
    Verify {
        #[arg(long, value_enum, default_value = "quick")]
        scale: Scale,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Draw the scenario's sample batches.
    Sample {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Run every configuration of the scenario's sweep axes.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_ERROR } else { EXIT_OK });
        }
    };
    let result = match &cli.command {
        Command::Solve { config, out } => commands::solve(config, out),
        Command::Identify { config, kernel } => commands::identify(config.as_deref(), kernel.as_deref()),
        Command::Verify { scale, out } => commands::verify(*scale, out),
        Command::Sample { config, out } => commands::sample(config, out),
        Command::Sweep { config, out, jobs } => commands::sweep(config, out, *jobs),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
