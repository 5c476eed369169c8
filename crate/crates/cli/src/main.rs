use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qpt_cli::{cmd_analyze, cmd_fit, cmd_region, cmd_sample, cmd_simulate, Result, Run};

#[derive(Parser)]
#[command(name = "qpt", version, about = "Reliable error bars for quantum process tomography")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset from the configured true channel.
    Simulate(Common),
    /// Run the Metropolis-Hastings chains and write the histogram.
    Sample(Common),
    /// Fit the histogram and derive quantum error bars.
    Fit(Common),
    /// Turn the fit into a confidence interval.
    Region(Common),
    /// Run every stage and write a summary.
    Analyze(Common),
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Use the (n+1)^(d-1) bound on the symmetric-subspace dimension.
    #[arg(long)]
    paper_compat: bool,
    /// Output directory (created if missing).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the simulation and walker seeds.
    #[arg(long)]
    seed: Option<u64>,
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).unwrap_or_default());
}

fn execute(command: Command) -> Result<()> {
    let (common, stage): (Common, fn(&Run) -> Result<()>) = match command {
        Command::Simulate(c) => (c, |r| {
            let ds = cmd_simulate(r)?;
            println!("total_n {}", ds.total_n());
            Ok(())
        }),
        Command::Sample(c) => (c, |r| {
            let out = cmd_sample(r)?;
            print_json(&out.stats);
            Ok(())
        }),
        Command::Fit(c) => (c, |r| cmd_fit(r).map(|f| print_json(&f))),
        Command::Region(c) => (c, |r| cmd_region(r).map(|rep| print_json(&rep))),
        Command::Analyze(c) => (c, |r| cmd_analyze(r).map(|s| print_json(&s))),
    };
    let run = Run::from_file(&common.config, common.out, common.paper_compat, common.seed)?;
    stage(&run)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("qpt: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
