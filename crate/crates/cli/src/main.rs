use clap::Parser;
use sitegnn_cli::Cli;

fn main() -> std::process::ExitCode {
    let cli = Cli::parse();
    match sitegnn_cli::run(&cli) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            std::process::ExitCode::FAILURE
        }
    }
}
