use clap::Parser;

fn main() -> std::process::ExitCode {
    pixint_cli::run(pixint_cli::Cli::parse())
}
