use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use extended_electron::cli::{execute, RunArgs};

#[derive(Parser)]
#[command(version, about = "Extended-electron wave packet scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scenario described by a config file.
    Run {
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Task to run (repeatable); replaces the config's task list.
        #[arg(long = "task", value_name = "NAME")]
        tasks: Vec<String>,
        /// Reserved; the runner is deterministic.
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let Command::Run {
        config,
        output_dir,
        tasks,
        seed,
    } = Cli::parse().command;
    let code = execute(&RunArgs {
        config,
        output_dir,
        tasks,
        seed,
    });
    ExitCode::from(code as u8)
}
