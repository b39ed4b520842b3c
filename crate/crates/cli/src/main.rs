use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use crfwi_cli::{run, Command, Outcome, RunArgs};

#[derive(Parser)]
#[command(name = "crfwi", version, about = "Continuous-representation FWI experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate observed gathers and write the true and initial models.
    Synth(Common),
    /// Run an inversion and write curves, snapshots and the final model.
    Invert(Common),
    /// Wave-based NTK spectra and the stationarity experiment.
    Ntk(Common),
    /// Compare a predicted grid against a reference grid.
    Metrics(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Overrides the config's `seed`.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Validate and print the plan without writing anything.
    #[arg(long)]
    dry_run: bool,
    /// Also write PNG figures.
    #[arg(long)]
    plots: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let (command, c) = match Cli::parse().command {
        Cmd::Synth(c) => (Command::Synth, c),
        Cmd::Invert(c) => (Command::Invert, c),
        Cmd::Ntk(c) => (Command::Ntk, c),
        Cmd::Metrics(c) => (Command::Metrics, c),
    };
    let args = RunArgs { command, config: c.config, seed: c.seed, out: c.out, dry_run: c.dry_run, plots: c.plots };
    match run(&args) {
        Ok(Outcome::Planned(plan)) => {
            println!("{}", serde_json::to_string_pretty(&plan).expect("plan serialises"));
            ExitCode::SUCCESS
        }
        Ok(Outcome::Done(m)) => {
            log::info!("wrote {} files to {} in {:.1} s", m.artifacts.len(), args.out.display(), m.wall_time_s.unwrap_or(0.0));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
