mod cli;
mod commands;
mod error;
mod pgm;

use clap::Parser;

use cli::{Cli, Command, PhantomCommand, TrainCommand};
use error::CliError;

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Phantom {
            command: PhantomCommand::Gen(args),
        } => commands::phantom_gen(&args),
        Command::Train { command } => match command {
            TrainCommand::Phase1(args) => commands::train(1, &args),
            TrainCommand::Phase2(args) => commands::train(2, &args),
        },
        Command::Standardize(args) => commands::run_standardize(&args),
        Command::Features(args) => commands::features(&args),
        Command::Evaluate(args) => commands::run_evaluate(&args),
        Command::Report(args) => commands::report(&args),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version requests are not usage errors.
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                std::process::exit(0);
            }
            eprint!("{e}");
            std::process::exit(1);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {}", e.message());
        std::process::exit(e.exit_code());
    }
}
