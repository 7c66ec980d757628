use std::process::ExitCode;

fn main() -> ExitCode {
    let code = ffreg_cli::run_args(std::env::args());
    ExitCode::from(code as u8)
}
