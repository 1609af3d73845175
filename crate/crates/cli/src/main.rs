use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use levy_hjm::runner::{exit_code, run_file, Command, RunOptions};
use levy_hjm::Error;

#[derive(Parser)]
#[command(name = "levy-hjm", version, about = "Simulate and check Levy-driven HJM bond markets")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Sample paths of the driving process (CSV) and jump statistics.
    Simulate(Common),
    /// Isometry battery for compensated jump integrals.
    Isometry(Common),
    /// Density process diagnostics.
    Girsanov(Common),
    /// Drift condition and discounted-bond martingale test.
    Drift(Common),
    /// Least-squares hedge of the configured claim.
    Hedge(Common),
    /// Counterexample claim, refinement study and moment certificate.
    Incompleteness(Common),
    /// Every experiment the scenario configures.
    All(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Sub {
    fn split(self) -> (Command, Common) {
        match self {
            Sub::Simulate(c) => (Command::Simulate, c),
            Sub::Isometry(c) => (Command::Isometry, c),
            Sub::Girsanov(c) => (Command::Girsanov, c),
            Sub::Drift(c) => (Command::Drift, c),
            Sub::Hedge(c) => (Command::Hedge, c),
            Sub::Incompleteness(c) => (Command::Incompleteness, c),
            Sub::All(c) => (Command::All, c),
        }
    }
}

fn init_threads() -> Result<(), Error> {
    let Ok(raw) = std::env::var("LEVY_HJM_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::validation("LEVY_HJM_THREADS", format!("expected a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Io(e.to_string()))
}

fn main() -> ExitCode {
    let (command, common) = Cli::parse().command.split();
    let opts = RunOptions { seed: common.seed, paths: common.paths, out: common.out };
    let result = init_threads().and_then(|()| run_file(command, &common.scenario, &opts));
    match result {
        Ok(manifest) => {
            for f in &manifest.outputs {
                println!("{}  {}", f.sha256, f.file);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("levy-hjm {}: {e}", command.name());
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
