use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use mlafem::cli::commands::{cmd_convstudy, cmd_gen_dataset, cmd_run, cmd_verify, verify_table, RUN_CSV, STUDY_CSV};
use mlafem::cli::RunConfig;

#[derive(Parser)]
#[command(name = "afem", version, about = "Multilevel adaptive finite elements and their convolutional realization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Adaptive solve of one sample: iteration CSV plus per-iteration snapshots.
    Run(Common),
    /// Adaptive against uniform refinement over the sample set.
    Convstudy(Common),
    /// Convolutional constructions against their direct implementations.
    Verify(Common),
    /// Dataset of adaptive solutions with the kernel bank.
    GenDataset(Common),
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Worker threads for sample-parallel commands.
    #[arg(long, env = "AFEM_WORKERS")]
    workers: Option<usize>,
    /// Overrides the sampling (and verification) seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

struct Resolved {
    config: RunConfig,
    workers: usize,
    out: PathBuf,
}

fn resolve(args: &Common) -> anyhow::Result<Resolved> {
    let mut config = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.sampling.seed = seed;
        config.verify.seed = seed;
    }
    let out = args.out.clone().or_else(|| config.output.dir.clone()).unwrap_or_else(|| PathBuf::from("afem-out"));
    let workers = args.workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    Ok(Resolved { config, workers, out })
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Run(args) => {
            let r = resolve(&args)?;
            let hist = cmd_run(&r.config, &r.out).context("adaptive run failed")?;
            println!("{} iterations written to {}", hist.len(), r.out.join(RUN_CSV).display());
        }
        Command::Convstudy(args) => {
            let r = resolve(&args)?;
            let studies = cmd_convstudy(&r.config, &r.out, r.workers).context("convergence study failed")?;
            println!("{} samples written to {}", studies.len(), r.out.join(STUDY_CSV).display());
        }
        Command::Verify(args) => {
            let r = resolve(&args)?;
            let (rows, ok) = cmd_verify(&r.config).context("verification failed to run")?;
            print!("{}", verify_table(&rows));
            return Ok(ok);
        }
        Command::GenDataset(args) => {
            let r = resolve(&args)?;
            let dir = cmd_gen_dataset(&r.config, &r.out, r.workers).context("dataset generation failed")?;
            println!("dataset written to {}", dir.display());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
