use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use haloscan::artifacts::{run, Artifacts, Command, Failure, Stage};
use haloscan::config::Config;
use haloscan::Error;

/// Squeezed-receiver haloscope campaigns: simulate, calibrate, process,
/// exclude. Set HALOSCAN_LOG (error, warn, info, debug) for progress output.
#[derive(Parser)]
#[command(name = "haloscan", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// Campaign configuration (TOML). Built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Replaces the master seed of the configuration.
    #[arg(long, global = true)]
    seed_override: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate data and calibration spectra.
    Simulate,
    /// Infer receiver noise from persisted calibration spectra.
    Calibrate,
    /// Cut, filter, combine and coadd persisted spectra; take rescans.
    Process,
    /// Exclusion from a persisted grand spectrum.
    Exclude,
    /// Noise-budget tables for the reference and operating receivers.
    Budget,
    /// Scan-rate enhancement report.
    Enhancement,
    /// The whole data chain.
    All {
        /// Last stage to run.
        #[arg(long, value_enum, default_value = "exclude")]
        stage: StageArg,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    Simulate,
    Calibrate,
    Process,
    Exclude,
}

impl From<StageArg> for Stage {
    fn from(s: StageArg) -> Self {
        match s {
            StageArg::Simulate => Stage::Simulate,
            StageArg::Calibrate => Stage::Calibrate,
            StageArg::Process => Stage::Process,
            StageArg::Exclude => Stage::Exclude,
        }
    }
}

fn fail(f: Failure) -> ExitCode {
    eprintln!("{}", f.to_json());
    ExitCode::from(f.error.exit_code() as u8)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HALOSCAN_LOG", "warn")).init();
    let cli = Cli::parse();
    let config_failure = |error| Failure { stage: "config", error };

    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            return fail(config_failure(Error::Config(format!("--threads: {e}"))));
        }
    }
    let mut config = match &cli.config {
        Some(p) => match Config::load(p) {
            Ok(c) => c,
            Err(e) => return fail(config_failure(e)),
        },
        None => Config::default(),
    };
    if let Some(seed) = cli.seed_override {
        config.campaign.seed = seed;
    }
    let out = cli.out.clone().unwrap_or_else(|| config.output.dir.clone());
    let command = match cli.command {
        Cmd::Simulate => Command::Chain(Stage::Simulate),
        Cmd::Calibrate => Command::Chain(Stage::Calibrate),
        Cmd::Process => Command::Chain(Stage::Process),
        Cmd::Exclude => Command::Chain(Stage::Exclude),
        Cmd::Budget => Command::Budget,
        Cmd::Enhancement => Command::Enhancement,
        Cmd::All { stage } => Command::All(stage.into()),
    };
    let artifacts = Artifacts::new(out, &config);
    match run(config, command, &artifacts) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => fail(f),
    }
}
