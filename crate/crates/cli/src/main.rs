use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(haad_cli::run(std::env::args_os().collect()))
}
