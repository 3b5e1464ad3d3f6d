use std::process::ExitCode;

fn main() -> ExitCode {
    xshift::cli::main()
}
