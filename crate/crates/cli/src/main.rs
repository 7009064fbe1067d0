use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use parkas::bench::Algorithm;
use parkas_cli::commands;

#[derive(Parser)]
#[command(
    name = "parkas",
    about = "Parallel-in-time Kalman filtering and smoothing: simulation, runs, flop benchmarks, reports"
)]
struct Cli {
    /// Worker threads for the parallel scans (default: all cores). Results
    /// are identical for any thread count, including 1.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate trajectories and write data files.
    Simulate {
        /// Built-in `tracking` or a path to a model JSON file.
        #[arg(long, default_value = "tracking")]
        model: String,
        /// Step counts, comma separated; one data file per value.
        #[arg(long, value_delimiter = ',', required = true)]
        n: Vec<usize>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one algorithm on a data file and write per-step results as CSV.
    Run {
        /// kf | pkf | rts | prts
        #[arg(long)]
        algorithm: String,
        /// Data file written by `simulate`.
        #[arg(long)]
        data: PathBuf,
        /// Block length for the parallel scans.
        #[arg(long, default_value_t = 1)]
        block: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep step counts and record span/work flops for all algorithms.
    Bench {
        #[arg(long, default_value = "tracking")]
        model: String,
        /// Step counts; defaults to powers of two from 16 to 16384.
        #[arg(long, value_delimiter = ',')]
        n: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "1")]
        seed: Vec<u64>,
        #[arg(long, value_delimiter = ',', default_value = "1")]
        block: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render SVG plots and a summary JSON from a bench CSV.
    Report {
        /// CSV written by `bench`.
        #[arg(long)]
        bench: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full verification suite and print one line per criterion.
    Verify,
}

fn run(cli: Cli) -> Result<bool> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .ok();
    }
    match cli.command {
        Command::Simulate { model, n, seed, out } => {
            for path in commands::cmd_simulate(&model, &n, seed, &out)? {
                println!("wrote {}", path.display());
            }
            Ok(true)
        }
        Command::Run { algorithm, data, block, out } => {
            let algorithm = Algorithm::parse(&algorithm)
                .ok_or_else(|| anyhow::anyhow!("unknown algorithm '{algorithm}' (use kf, pkf, rts or prts)"))?;
            let path = commands::cmd_run(algorithm, &data, block, &out)?;
            println!("wrote {}", path.display());
            Ok(true)
        }
        Command::Bench { model, n, seed, block, out } => {
            let ns = if n.is_empty() {
                (4..=14u32).map(|p| 1usize << p).collect()
            } else {
                n
            };
            let path = commands::cmd_bench(&model, &ns, &seed, &block, &out)?;
            println!("wrote {}", path.display());
            Ok(true)
        }
        Command::Report { bench, out } => {
            let (summary, written) = commands::cmd_report(&bench, &out)?;
            for path in &written {
                println!("wrote {}", path.display());
            }
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(true)
        }
        Command::Verify => Ok(commands::cmd_verify()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
