//! Command implementations behind the `shared-space` binary.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::crossing::{crossing_scenario, CrossingKind};
use crate::engine::{mean, percentile, run_from, RunOptions, RunOutput, RunSummary, SimError, SimState};
use crate::report::{machine_descriptor, write_summary, BenchReport, BenchRow};
use crate::scenario::{load_scenario_with, parse_scenario, Overrides, ScenarioConfig};
use crate::trajectory::{TrajectoryError, TrajectoryWriter};

pub const TRAJECTORY_FILE: &str = "trajectories.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const DEFAULT_FRAME_BUDGET: u64 = 500;
/// Seed of the standard benchmark crossing.
pub const BENCH_SEED: u64 = 1;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{message}")]
    NonTermination { message: String, summary: Box<RunSummary> },
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Simulation(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::NonTermination { .. } => 3,
            CliError::Io(_) => 4,
            CliError::Simulation(_) => 1,
        }
    }
}

impl From<TrajectoryError> for CliError {
    fn from(e: TrajectoryError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

fn from_sim(e: SimError) -> CliError {
    match e {
        SimError::Scenario(e) => CliError::Validation(e.to_string()),
        SimError::NoWorkers => CliError::Validation(e.to_string()),
        SimError::Sink(e) => CliError::Io(e.to_string()),
        SimError::NonTermination { max_frames, remaining, output } => CliError::NonTermination {
            message: format!("{remaining} agents still active after max_frames = {max_frames}"),
            summary: Box::new(output.summary),
        },
        other => CliError::Simulation(other.to_string()),
    }
}

/// Loads a scenario file, runs it, and writes the trajectory and summary
/// files into `out_dir`.
pub fn cmd_run(scenario: &Path, out_dir: &Path, overrides: &Overrides, workers: usize) -> Result<RunSummary, CliError> {
    let config = load_scenario_with(scenario, overrides).map_err(|e| CliError::Validation(e.to_string()))?;
    execute(&config, out_dir, workers)
}

/// Generates a crossing scenario, runs it, and writes outputs to `out_dir`.
pub fn cmd_crossing(
    kind: CrossingKind,
    agents_per_arm: usize,
    vehicle_fraction: f64,
    out_dir: &Path,
    overrides: &Overrides,
    workers: usize,
) -> Result<RunSummary, CliError> {
    let config = crossing_config(kind, agents_per_arm, vehicle_fraction, overrides)?;
    execute(&config, out_dir, workers)
}

/// The crossing scenario with default parameters and `overrides` applied.
pub fn crossing_config(
    kind: CrossingKind,
    agents_per_arm: usize,
    vehicle_fraction: f64,
    overrides: &Overrides,
) -> Result<ScenarioConfig, CliError> {
    let base = parse_scenario("format_version = 1\n", overrides).map_err(|e| CliError::Validation(e.to_string()))?;
    let mut config = crossing_scenario(kind, agents_per_arm, vehicle_fraction, &base)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    if let Some(frames) = overrides.max_frames {
        config.max_frames = frames;
    }
    Ok(config)
}

/// Runs `config`, streaming frames to the trajectory file, and writes the
/// summary. On non-termination both files are still written.
pub fn execute(config: &ScenarioConfig, out_dir: &Path, workers: usize) -> Result<RunSummary, CliError> {
    for warning in &config.warnings {
        eprintln!("warning: {warning}");
    }
    if workers == 0 {
        return Err(CliError::Validation("--workers must be at least 1".into()));
    }
    let state = SimState::initialize(config).map_err(|e| CliError::Validation(e.to_string()))?;
    fs::create_dir_all(out_dir)?;

    let tmp = tempfile::NamedTempFile::new_in(out_dir)?;
    let mut writer = TrajectoryWriter::new(BufWriter::new(tmp.as_file()), &state.goals())?;
    let options = RunOptions { workers, frame_budget: None, record: true };
    let result = run_from(state, config, &options, |log| writer.write_frame(log));
    let summary = match &result {
        Ok(RunOutput { summary, .. }) => summary.clone(),
        Err(SimError::NonTermination { output, .. }) => output.summary.clone(),
        Err(_) => return result.map(|o| o.summary).map_err(from_sim),
    };
    writer.finish()?.flush()?;
    tmp.as_file().sync_all()?;
    tmp.persist(out_dir.join(TRAJECTORY_FILE)).map_err(|e| CliError::Io(e.error.to_string()))?;
    write_summary(&summary, &out_dir.join(SUMMARY_FILE))?;
    result.map(|o| o.summary).map_err(from_sim)
}

/// Frame-time statistics of one benchmark configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchSample {
    pub frame_ms: Vec<f64>,
    pub frames: u64,
    pub collisions: u64,
}

/// Runs the standard four-way crossing with `agents` total agents for
/// `frame_budget` frames without recording anything.
pub fn bench_crossing(
    agents: usize,
    workers: usize,
    frame_budget: u64,
    vehicle_fraction: f64,
    seed: u64,
) -> Result<BenchSample, CliError> {
    let overrides = Overrides { seed: Some(seed), ..Overrides::default() };
    let config = crossing_config(CrossingKind::FourWay, agents.div_ceil(4), vehicle_fraction, &overrides)?;
    let state = SimState::initialize(&config).map_err(|e| CliError::Validation(e.to_string()))?;
    let options = RunOptions { workers, frame_budget: Some(frame_budget), record: false };
    let out = run_from(state, &config, &options, |_| Ok::<(), std::convert::Infallible>(())).map_err(from_sim)?;
    Ok(BenchSample {
        frame_ms: out.metrics.iter().map(|m| m.wall_time_ms).collect(),
        frames: out.summary.frames,
        collisions: out.summary.total_collisions,
    })
}

/// Benchmarks every `(agent count, worker count)` pair `repetitions` times
/// and writes the report to `out_path` if given.
pub fn cmd_bench(
    agent_counts: &[usize],
    worker_counts: &[usize],
    repetitions: usize,
    frame_budget: u64,
    out_path: Option<&Path>,
) -> Result<BenchReport, CliError> {
    if agent_counts.is_empty() || worker_counts.is_empty() {
        return Err(CliError::Validation("agent and worker count lists must be non-empty".into()));
    }
    if repetitions == 0 || frame_budget == 0 {
        return Err(CliError::Validation("repetitions and frame budget must be at least 1".into()));
    }
    if worker_counts.contains(&0) {
        return Err(CliError::Validation("worker counts must be at least 1".into()));
    }
    let mut pairs: Vec<(usize, usize)> =
        agent_counts.iter().flat_map(|&a| worker_counts.iter().map(move |&w| (a, w))).collect();
    pairs.sort_unstable();
    pairs.dedup();

    let mut rows = Vec::with_capacity(pairs.len());
    for (agents, workers) in pairs {
        let mut times = Vec::new();
        let mut reference: Option<(u64, u64)> = None;
        for _ in 0..repetitions {
            let sample = bench_crossing(agents, workers, frame_budget, 0.0, BENCH_SEED)?;
            let counts = (sample.frames, sample.collisions);
            if reference.is_some_and(|r| r != counts) {
                return Err(CliError::Simulation(format!(
                    "repetitions of {agents} agents / {workers} workers disagree on frames or collisions"
                )));
            }
            reference = Some(counts);
            times.extend(sample.frame_ms);
        }
        let (frames, collisions) = reference.expect("at least one repetition");
        rows.push(BenchRow {
            agent_count: agents,
            worker_count: workers,
            mean_ms: mean(&times),
            p95_ms: percentile(&times, 0.95),
            frames,
            collisions,
        });
    }
    let report = BenchReport { rows, machine: machine_descriptor() };
    if let Some(path) = out_path {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        report.write(path)?;
    }
    Ok(report)
}

/// Output paths written by [`cmd_run`] and [`cmd_crossing`].
pub fn output_paths(out_dir: &Path) -> (PathBuf, PathBuf) {
    (out_dir.join(TRAJECTORY_FILE), out_dir.join(SUMMARY_FILE))
}
