use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(cpseg_cli::run(std::env::args_os()))
}
