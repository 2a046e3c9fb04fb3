use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use rpdi_cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let env = |k: &str| std::env::var(k).ok();
    let result = run(cli, &env, &mut std::io::stdout(), &mut std::io::stderr());
    let _ = std::io::stdout().flush();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
