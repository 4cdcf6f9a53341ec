//! Command-line driver: load a JSON config, run a scenario or the tableau
//! benchmark, print a summary, exit with a scriptable status code.
//!
//! Exit codes: 0 success, 2 config error, 3 certification failure, 4 oracle
//! mismatch.  Failed trials print their replay recipe (seed, stream, axes)
//! on stderr.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use akltsim::runner::{self, RunConfig, RunnerError};

#[derive(Parser)]
#[command(name = "akltsim", version, about = "Quasichain-to-cluster simulator driver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute the scenario named in the config and write its reports.
    Run(RunArgs),
    /// Time the per-chain tableau pipeline at the config's lattice size.
    Bench(BenchArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's trial count.
    #[arg(long)]
    trials: Option<usize>,
    /// Enable the dense-statevector cross-check.
    #[arg(long)]
    oracle: bool,
    /// Write report.json, outcomes.json, and graph_<trial>.dot here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// JSON run configuration (only the lattice and seed are used).
    #[arg(long)]
    config: PathBuf,
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(path: &PathBuf) -> Result<RunConfig, RunnerError> {
    let text = fs::read_to_string(path)
        .map_err(|e| RunnerError::Config(format!("cannot read {}: {e}", path.display())))?;
    RunConfig::from_json(&text)
}

fn dispatch(cli: Cli) -> Result<ExitCode, RunnerError> {
    match cli.command {
        Command::Run(args) => {
            let mut config = load_config(&args.config)?;
            if let Some(seed) = args.seed {
                config.seed = seed;
            }
            if let Some(trials) = args.trials {
                config.trials = trials;
            }
            if args.oracle {
                config.oracle = true;
            }
            if let Some(out) = args.out {
                config.out_dir = Some(out);
            }
            let report = runner::run(&config)?;
            println!("{}", report.summary());
            if let Some(dir) = &config.out_dir {
                println!("report: {}", dir.join("report.json").display());
            }
            for t in &report.trials {
                if let Some(f) = &t.failure {
                    eprintln!(
                        "trial {} failed: {} (replay: seed {}, stream {}, axes {:?})",
                        t.trial, f.message, f.seed, f.stream, f.axes
                    );
                }
            }
            Ok(ExitCode::from(report.exit_code() as u8))
        }
        Command::Bench(args) => {
            let config = load_config(&args.config)?;
            let b = runner::bench(&config)?;
            println!(
                "lattice: {} chains x {} sites ({} qubits per chain, {} total)",
                b.chains, b.sites_per_chain, b.qubits_per_chain, b.total_qubits
            );
            for (phase, ms) in &b.phases_ms {
                println!("{phase:>10}: {ms:10.2} ms");
            }
            println!("{:>10}: {:10.2} ms", "total", b.total_ms);
            println!("sampling throughput: {:.0} sites/s", b.povm_sites_per_sec);
            println!(
                "tableau memory: {} bytes per chain, quadratic model {} bytes: {}",
                b.tableau_bytes_per_chain,
                b.tableau_bytes_bound,
                if b.within_quadratic_bound { "within bound" } else { "OVER BOUND" }
            );
            if let Some(dir) = &config.out_dir {
                fs::create_dir_all(dir)?;
                let tmp = dir.join("bench.tmp");
                fs::write(&tmp, serde_json::to_vec_pretty(&b)?)?;
                fs::rename(&tmp, dir.join("bench.json"))?;
                println!("bench report: {}", dir.join("bench.json").display());
            }
            Ok(if b.within_quadratic_bound {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(3)
            })
        }
    }
}
