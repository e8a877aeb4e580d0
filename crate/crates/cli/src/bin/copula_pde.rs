use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(copula_pde_cli::cli::run(std::env::args()) as u8)
}
