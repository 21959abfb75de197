use std::process::ExitCode;

fn main() -> ExitCode {
    cmkt_cli::exit::exit_code(cmkt_cli::run(std::env::args_os()))
}
