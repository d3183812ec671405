use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use skillgraph::cli::{self, GraphFormat, RunFlags};
use skillgraph::Error;

#[derive(Parser)]
#[command(name = "skillgraph", version, about = "Train and inspect a state-action skill graph agent")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run training rounds and write traces, snapshots and stats.
    Run {
        /// JSON config file; flags override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        rounds: Option<u64>,
        /// Steps per round.
        #[arg(long)]
        steps: Option<u64>,
        /// Comma-separated switches to turn off: similarity_edges, reward_state, reward_novel.
        #[arg(long)]
        ablate: Option<String>,
        /// Persona (perfect, noisy, adversarial) or an http(s) endpoint.
        #[arg(long)]
        oracle: Option<String>,
        /// Profile (linear, branching, combo-heavy) or a world JSON file.
        #[arg(long)]
        world: Option<String>,
        /// World generator seed; defaults to --seed.
        #[arg(long)]
        world_seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from this snapshot.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Print a snapshot's graph as JSON or DOT.
    ExportGraph {
        snapshot: PathBuf,
        #[arg(long, default_value = "json")]
        format: String,
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List skills by their heaviest edge.
    TopSkills {
        snapshot: PathBuf,
        #[arg(short, long, default_value_t = 10)]
        k: usize,
    },
    /// Narrate a trace file step by step.
    Replay { trace: PathBuf },
    /// Stats table for a run directory, or totals for one snapshot.
    Stats {
        path: PathBuf,
        #[arg(long)]
        csv: bool,
    },
}

fn run(args: Args) -> Result<(), Error> {
    match args.command {
        Command::Run {
            config,
            seed,
            rounds,
            steps,
            ablate,
            oracle,
            world,
            world_seed,
            out,
            resume,
        } => {
            let manifest = RunFlags {
                config,
                world,
                world_seed,
                seed,
                oracle,
                rounds,
                steps,
                ablate,
                out,
                resume,
            }
            .resolve()?;
            let report = cli::cmd_run(&manifest)?;
            print!("{}", cli::stats_text(&report.rows));
        }
        Command::ExportGraph { snapshot, format, out } => {
            let text = cli::cmd_export_graph(&snapshot, format.parse::<GraphFormat>()?)?;
            match out {
                Some(p) => std::fs::write(&p, text).map_err(|e| Error::Io { path: p, source: e })?,
                None => print!("{text}"),
            }
        }
        Command::TopSkills { snapshot, k } => print!("{}", cli::cmd_top_skills(&snapshot, k)?),
        Command::Replay { trace } => print!("{}", cli::cmd_replay(&trace)?),
        Command::Stats { path, csv } => print!("{}", cli::cmd_stats(&path, csv)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("skillgraph: {e}");
            match e {
                Error::Config(_) | Error::UnknownProfile(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
