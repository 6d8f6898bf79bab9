use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(voxcorr_cli::run(std::env::args_os()))
}
