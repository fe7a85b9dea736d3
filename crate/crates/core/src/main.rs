use std::process::ExitCode;

fn main() -> ExitCode {
    attrscout::cli::main_with_args(std::env::args_os())
}
