use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(optospring::cli::main_entry() as u8)
}
