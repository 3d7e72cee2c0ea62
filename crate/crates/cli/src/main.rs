use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use regionmask_cli::{run, Cli};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => match e.kind() {
            ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                eprint!("{e}");
                return ExitCode::from(2);
            }
            _ => {
                // one line; the full usage is behind --help
                let msg = e.to_string();
                eprintln!("{}", msg.lines().next().unwrap_or("usage error"));
                return ExitCode::from(2);
            }
        },
    };
    let stdout = std::io::stdout();
    match run(&cli, &mut stdout.lock()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
