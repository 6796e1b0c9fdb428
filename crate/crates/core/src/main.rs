use std::process::ExitCode;

fn main() -> ExitCode {
    seqcombine::cli::run(std::env::args_os())
}
