use std::process::ExitCode;

use clap::Parser;
use overloadnet::cli::{execute, Cli, CliError, Context};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli, &Context::from_env()) {
        Ok(out) => {
            print!("{}", out.stdout);
            ExitCode::SUCCESS
        }
        Err(e) => {
            let code = e.exit_code();
            let err = match &e {
                CliError::Config(_) => anyhow::Error::new(e).context("invalid configuration"),
                _ => anyhow::Error::new(e),
            };
            eprintln!("error: {err:#}");
            ExitCode::from(code as u8)
        }
    }
}
