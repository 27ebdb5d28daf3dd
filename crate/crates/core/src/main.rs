use std::process::ExitCode;

fn main() -> ExitCode {
    ibrisk::cli::main()
}
