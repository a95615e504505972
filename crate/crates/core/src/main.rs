use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use shared_space::cli::{cmd_bench, cmd_crossing, cmd_run, output_paths, CliError, DEFAULT_FRAME_BUDGET};
use shared_space::crossing::CrossingKind;
use shared_space::engine::RunSummary;
use shared_space::scenario::Overrides;

#[derive(Parser)]
#[command(name = "shared-space", version, about = "Pedestrian and vehicle crowd simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Output directory for trajectories.csv and summary.csv
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Time step in seconds
    #[arg(long)]
    dt: Option<f64>,
    /// Avoidance lookahead in seconds
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long, default_value_t = default_workers())]
    workers: usize,
    /// Frame limit; the run fails if agents remain afterwards
    #[arg(long)]
    frames: Option<u64>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides { seed: self.seed, dt: self.dt, tau: self.tau, max_frames: self.frames }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Generate and run a two-way or four-way crossing
    Crossing {
        #[arg(long, default_value = "two_way")]
        kind: CrossingKind,
        /// Agents per arm
        #[arg(long, default_value_t = 50)]
        agents: usize,
        #[arg(long, default_value_t = 0.0)]
        vehicle_fraction: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Time the standard four-way crossing across agent and worker counts
    Bench {
        /// Total agent counts, comma separated
        #[arg(long, value_delimiter = ',', default_value = "1000,2000,4000")]
        agents: Vec<usize>,
        /// Worker counts, comma separated
        #[arg(long, value_delimiter = ',', default_values_t = vec![default_workers()])]
        workers: Vec<usize>,
        #[arg(long, default_value_t = 1)]
        reps: usize,
        /// Frames per run
        #[arg(long, default_value_t = DEFAULT_FRAME_BUDGET)]
        frames: u64,
        /// Report file; printed to stdout when omitted
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn print_summary(summary: &RunSummary) {
    println!(
        "agents {} | frames {} | collisions {} | min separation {:.4} m | mean frame {:.3} ms | p95 {:.3} ms",
        summary.agents,
        summary.frames,
        summary.total_collisions,
        summary.min_separation,
        summary.mean_frame_ms,
        summary.p95_frame_ms
    );
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { scenario, common } => {
            cmd_run(&scenario, &common.out, &common.overrides(), common.workers).map(|s| (s, common.out))
        }
        Command::Crossing { kind, agents, vehicle_fraction, common } => {
            cmd_crossing(kind, agents, vehicle_fraction, &common.out, &common.overrides(), common.workers)
                .map(|s| (s, common.out))
        }
        Command::Bench { agents, workers, reps, frames, out } => {
            match cmd_bench(&agents, &workers, reps, frames, out.as_deref()) {
                Ok(report) => {
                    if out.is_none() {
                        match report.to_text() {
                            Ok(text) => print!("{text}"),
                            Err(e) => return fail(&CliError::from(e)),
                        }
                    }
                    return ExitCode::SUCCESS;
                }
                Err(e) => return fail(&e),
            }
        }
    };
    match result {
        Ok((summary, out)) => {
            print_summary(&summary);
            let (traj, summary_path) = output_paths(&out);
            println!("wrote {} and {}", traj.display(), summary_path.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            if let CliError::NonTermination { summary, .. } = &e {
                print_summary(summary);
            }
            fail(&e)
        }
    }
}

fn fail(e: &CliError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}
