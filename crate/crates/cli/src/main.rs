mod commands;

use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches};

use commands::Cli;

fn version() -> String {
    format!(
        "{} (feature format v{})",
        env!("CARGO_PKG_VERSION"),
        plr_core::FORMAT_VERSION
    )
}

fn main() -> ExitCode {
    let matches = Cli::command().version(&*Box::leak(version().into_boxed_str())).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.get()).build_global() {
            eprintln!("error: cannot configure {n} worker threads: {e}");
            return ExitCode::from(2);
        }
    }
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", commands::describe(&e));
            ExitCode::from(1)
        }
    }
}
