//! `smt`: batch front end for the sparse Möbius transform.
//!
//! Every flag has a snake_case twin in the `--config` JSON file; flags win.
//! Each run writes its outputs and a `manifest.json` into `--out-dir`, and
//! the manifest can be passed back through `--config` to replay the run.
//!
//! Exit codes: 0 success, 1 other error, 2 configuration error, 3 oracle
//! failure, 4 run did not converge (outputs still written).

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{
    BruteArgs, MetricsArgs, OracleArgs, RuntimeArgs, SnrArgs, SweepArgs, SynthArgs, TransformArgs,
};

#[derive(Parser, Debug)]
#[command(name = "smt", version, about = "Sparse Möbius transform of black-box set functions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON object of settings (or a manifest from an earlier run).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for all outputs.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Plant a sparse coefficient map.
    Synth(SynthArgs),
    /// Recover the Möbius coefficients of an oracle from few queries.
    Transform(TransformArgs),
    /// Query all 2^n masks and transform densely.
    Brute(BruteArgs),
    /// Attribution scores, degree profile and fit of a coefficient file.
    Metrics(MetricsArgs),
    /// Perfect-reconstruction rate over a grid of n and b.
    SweepReconstruction(SweepArgs),
    /// Noisy recovery against SNR.
    SweepSnr(SnrArgs),
    /// Wall-clock scaling in n.
    SweepRuntime(RuntimeArgs),
    /// Serve a coefficient file over the stdin/stdout oracle protocol.
    Oracle(OracleArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Some(threads) = cli.threads {
        if threads == 0 {
            eprintln!("smt: configuration error: --threads must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            log::warn!("thread pool already initialised: {e}");
        }
    }
    let config = cli.config.as_deref();
    let out = cli.out_dir.as_path();
    let result = match &cli.command {
        Command::Synth(a) => commands::synth(a, config, out),
        Command::Transform(a) => commands::transform(a, config, out),
        Command::Brute(a) => commands::brute(a, config, out),
        Command::Metrics(a) => commands::metrics(a, config, out),
        Command::SweepReconstruction(a) => commands::sweep_reconstruction(a, config, out),
        Command::SweepSnr(a) => commands::sweep_snr(a, config, out),
        Command::SweepRuntime(a) => commands::sweep_runtime(a, config, out),
        Command::Oracle(a) => commands::oracle(a, config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("smt: {failure}");
            failure.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;
    use settings::Failure;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn failure_codes() {
        assert_eq!(Failure::Config(String::new()).exit_code(), ExitCode::from(2));
        assert_eq!(Failure::Oracle(String::new()).exit_code(), ExitCode::from(3));
        assert_eq!(Failure::Incomplete(String::new()).exit_code(), ExitCode::from(4));
    }
}
