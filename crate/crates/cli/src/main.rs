use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ispec_cli::presets::{preset, PRESETS};
use ispec_cli::{init_threads, run_stage, CliError, Command};

#[derive(Parser)]
#[command(
    name = "ispec",
    version,
    about = "Transfer-operator experiments for intermittent circle maps"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args)]
struct StageArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Run directory.
    #[arg(long)]
    out: PathBuf,
    /// Ignore failed prerequisites and replace runs of other configs.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Condition scan, orderly vanishing and compatibility certificate.
    Check(StageArgs),
    /// Leading eigendata and normalization.
    Rpf(StageArgs),
    /// θ(n), τ(n) and the sampled DFLY inequality.
    Dfly(StageArgs),
    /// Spectral gap estimate on centered observables.
    Gap(StageArgs),
    /// Correlation decay fits and the mixing check.
    Decay(StageArgs),
    /// Empirical central limit theorem.
    Clt(StageArgs),
    /// All stages in order, then the report.
    Pipeline(StageArgs),
    /// Consolidated markdown summary of a run directory.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a built-in config.
    Preset {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(PRESETS))]
        name: String,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    let (cmd, args) = match cli.cmd {
        Cmd::Check(a) => (Command::Check, a),
        Cmd::Rpf(a) => (Command::Rpf, a),
        Cmd::Dfly(a) => (Command::Dfly, a),
        Cmd::Gap(a) => (Command::Gap, a),
        Cmd::Decay(a) => (Command::Decay, a),
        Cmd::Clt(a) => (Command::Clt, a),
        Cmd::Pipeline(a) => (Command::Pipeline, a),
        Cmd::Report { out } => {
            let text = ispec_cli::commands::report(&out)?;
            print!("{text}");
            return Ok(());
        }
        Cmd::Preset { name } => {
            print!("{}", preset(&name).expect("known preset").canonical_json());
            return Ok(());
        }
    };
    run_stage(cmd, Some(&args.config), &args.out, args.force)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ispec: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
