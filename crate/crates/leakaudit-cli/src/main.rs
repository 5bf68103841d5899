use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(leakaudit_cli::cli_run(std::env::args_os()))
}
