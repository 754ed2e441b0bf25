use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(divnet_cli::run(std::env::args_os()))
}
