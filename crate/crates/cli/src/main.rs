use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(linmm_cli::run(std::env::args_os()))
}
