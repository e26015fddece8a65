use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    match oodscore_cli::Cli::try_parse() {
        Ok(cli) => oodscore_cli::run(cli),
        // usage errors are configuration errors; --help and --version are not
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
    }
}
