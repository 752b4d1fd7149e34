use std::process::ExitCode;

use shrinkhs_cli::args::parse_args;
use shrinkhs_cli::run::run;
use shrinkhs_cli::{thread_count, CliError, EXIT_NOT_CONVERGED};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match try_main() {
        Ok(code) => ExitCode::from(code as u8),
        Err(CliError::Clap(e)) => {
            let code = e.exit_code();
            let _ = e.print();
            ExitCode::from(code as u8)
        }
        Err(e) => {
            eprintln!("shrinkhs: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn try_main() -> Result<i32, CliError> {
    let cli = parse_args(std::env::args_os())?;
    let threads = thread_count(cli.command.common().threads)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot start {threads} worker threads: {e}")))?;
    let outcome = run(&cli, threads)?;
    if outcome.converged {
        Ok(0)
    } else {
        eprintln!("shrinkhs: the fit stopped at --max-iter without converging; results were written");
        Ok(EXIT_NOT_CONVERGED)
    }
}
