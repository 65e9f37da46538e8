use std::process::ExitCode;

use biharmonic_cli::config::{load_config, Flags, KEYS};
use biharmonic_cli::{execute, Command};
use clap::Parser;

#[derive(Parser)]
#[command(
    name = "biharmonic",
    version,
    about = "Biharmonic eigenvalues with Navier boundary conditions via Poisson solves",
    after_help = after_help()
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

fn after_help() -> String {
    format!(
        "Configuration file keys (`key = value`, `#` starts a comment):\n  {}\n\
         Each key has a matching --flag (underscores become dashes); flags override the file.",
        KEYS.join(", ")
    )
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match load_config(&cli.flags) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match execute(cli.command, &cfg, &mut std::io::stdout().lock()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
