use std::process::ExitCode;

use sgada_cli::{execute, parse_args, OUT_DIR_ENV};

fn main() -> ExitCode {
    let cmd = match parse_args(std::env::args_os(), std::env::var_os(OUT_DIR_ENV)) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match execute(&cmd) {
        Ok(text) => {
            println!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
