use clap::error::ErrorKind;
use clap::Parser;

use clqg::cli::{self, Cli, RunConfig};

fn main() {
    let parsed = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            std::process::exit(cli::EXIT_OK);
        }
        Err(e) => {
            eprint!("{e}");
            std::process::exit(cli::EXIT_INVALID);
        }
    };
    let code = match RunConfig::from_cli(parsed) {
        Ok(cfg) => cli::run(&cfg),
        Err(e) => {
            eprintln!("error: {e}");
            cli::exit_code(&e)
        }
    };
    std::process::exit(code);
}
