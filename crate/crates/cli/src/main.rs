#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod args;
mod commands;
mod manifest;

use std::fmt;
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches};

use args::{Cli, Command};
use commands::{Settings, Step};

/// Bad arguments or inputs detected by the CLI itself.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<periodmc::Error>() {
            return if e.is_validation() { 1 } else { 2 };
        }
        if cause.is::<UsageError>() {
            return 1;
        }
    }
    2
}

fn preprocess_steps(matches: &clap::ArgMatches, filter: Option<f64>) -> Vec<Step> {
    let Some(("preprocess", sub)) = matches.subcommand() else {
        return Vec::new();
    };
    let mut steps: Vec<(usize, Step)> = Vec::new();
    let flag = |id: &str| sub.value_source(id) == Some(clap::parser::ValueSource::CommandLine);
    if flag("median_center") {
        steps.push((sub.index_of("median_center").unwrap_or(0), Step::MedianCenter));
    }
    if flag("average_replicates") {
        steps.push((sub.index_of("average_replicates").unwrap_or(0), Step::AverageReplicates));
    }
    if let Some(frac) = filter {
        steps.push((sub.index_of("filter_missing").unwrap_or(0), Step::FilterMissing(frac)));
    }
    steps.sort_by_key(|s| s.0);
    steps.into_iter().map(|s| s.1).collect()
}

fn run(matches: &clap::ArgMatches, cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(UsageError("--threads must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let settings = Settings::load(cli.config.as_deref(), cli.threads)?;
    match &cli.command {
        Command::Preprocess(a) => commands::preprocess(a, &preprocess_steps(matches, a.filter_missing)),
        Command::Fit(a) => commands::fit(a, settings),
        Command::Control(a) => commands::control(a, settings),
        Command::Report(a) => commands::report(a, settings),
        Command::Subsets(a) => commands::subsets(a, settings),
        Command::Simulate(a) => commands::simulate(a, settings),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let matches = match Cli::command().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match run(&matches, cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
