use std::path::PathBuf;
use std::process;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "plasso",
    about = "Partially penalized lasso: fitting, exact grouped inference, \
             de-biasing, and Monte Carlo experiments",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a config file
    Run {
        /// Path to a `key = value` config file
        #[arg(long)]
        config: PathBuf,
        /// Override a config key, e.g. --set sim.replicates=500 (repeatable)
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, overrides } => plasso::cli::run(&config, &overrides),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        process::exit(e.exit_code());
    }
}
