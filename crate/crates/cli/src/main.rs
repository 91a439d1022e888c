use std::process::ExitCode;

fn main() -> ExitCode {
    minsup_cli::run(std::env::args_os())
}
