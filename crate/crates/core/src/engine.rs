//! The synchronous frame loop.
//!
//! Each frame reads one immutable snapshot: the grid is rebuilt from it,
//! every agent gathers its constraints against it, and the batch solver picks
//! all new velocities before any position moves.

use std::error::Error as StdError;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geometry::Vec2;
use crate::grid::{GridError, UniformGrid};
use crate::lp::{solve_batch, LpError, LpProblem, LpStatus};
use crate::orca::{gather_constraints, AgentClass, AgentId, AgentState, OrcaError};
use crate::scenario::{uniform_point, ScenarioConfig, ScenarioError, SpawnSampler};
use crate::trajectory::{AgentSample, FrameLog, GoalRecord};
use crate::work;

/// Pairs closer than summed radii by more than this count as collisions.
pub const COLLISION_TOLERANCE: f64 = 1e-6;

// Agents per work unit when gathering constraints.
const GATHER_UNIT: usize = 16;

#[derive(Debug, Clone)]
pub struct SimState {
    pub frame: u64,
    pub time: f64,
    pub agents: Vec<AgentState>,
    pub rng: ChaCha8Rng,
}

impl SimState {
    /// Spawns the population described by `config`. Regions are processed in
    /// order; each draws its spawn points and then its goals from one seeded
    /// stream. Ids are assigned sequentially from 0. Agents start moving at
    /// their desired velocity.
    pub fn initialize(config: &ScenarioConfig) -> Result<Self, ScenarioError> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let separation = AgentClass::ALL
            .iter()
            .map(|&a| AgentClass::ALL.iter().map(|&b| config.spawn_separation(a, b)).collect())
            .collect();
        let mut sampler = SpawnSampler::new(separation);
        let mut agents = Vec::with_capacity(config.total_agents());
        for (r, region) in config.regions.iter().enumerate() {
            let params = config.class_params(region.class);
            let spawns = sampler
                .place(&region.spawn, region.count, region.class.index(), &mut rng)
                .map_err(|placed| ScenarioError::SpawnFailed { region: Some(r), placed, requested: region.count })?;
            for position in spawns {
                let goal = uniform_point(&region.goal, &mut rng);
                let mut agent = AgentState {
                    id: AgentId(agents.len() as u32),
                    position,
                    velocity: Vec2::ZERO,
                    radius: params.radius,
                    pref_speed: params.pref_speed,
                    max_speed: params.max_speed,
                    goal,
                    class: region.class,
                };
                agent.velocity = desired_velocity(&agent, config.dt);
                agents.push(agent);
            }
        }
        Ok(SimState { frame: 0, time: 0.0, agents, rng })
    }

    /// A state holding exactly `agents` at frame 0.
    pub fn from_agents(agents: Vec<AgentState>, seed: u64) -> Self {
        SimState { frame: 0, time: 0.0, agents, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn goals(&self) -> Vec<GoalRecord> {
        let mut goals: Vec<GoalRecord> = self.agents.iter().map(|a| GoalRecord { id: a.id, goal: a.goal }).collect();
        goals.sort_by_key(|g| g.id);
        goals
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameMetrics {
    pub frame: u64,
    /// Time spent indexing, gathering, solving and integrating.
    pub wall_time_ms: f64,
    /// Minimum over pairs of centre distance minus summed radii.
    pub min_separation: f64,
    pub collision_count: u64,
    pub active_agents: usize,
    /// Agents whose LP was infeasible this frame.
    pub fallback_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arrival {
    pub id: AgentId,
    pub class: AgentClass,
    pub time: f64,
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub state: SimState,
    pub metrics: FrameMetrics,
    /// Post-integration samples of every agent active this frame (including
    /// those that just arrived), sorted by id. Present when recording.
    pub log: Option<FrameLog>,
    pub arrivals: Vec<Arrival>,
    /// Per-agent LP status, aligned with the pre-step agent order.
    pub statuses: Vec<(AgentId, LpStatus)>,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("frame {frame}: {source}")]
    Grid { frame: u64, source: GridError },
    #[error("frame {frame}, agent {agent}: {source}")]
    Constraint { frame: u64, agent: AgentId, source: OrcaError },
    #[error("frame {frame}, agent {agent}: {source}")]
    Solver { frame: u64, agent: AgentId, source: LpError },
    #[error("worker count must be at least 1")]
    NoWorkers,
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("{remaining} agents still active after max_frames = {max_frames}")]
    NonTermination { max_frames: u64, remaining: usize, output: Box<RunOutput> },
    #[error("frame sink failed: {0}")]
    Sink(#[source] Box<dyn StdError + Send + Sync>),
}

/// Velocity toward the goal at preferred speed, slowed to land exactly on
/// the goal when one full step would overshoot it.
pub fn desired_velocity(agent: &AgentState, dt: f64) -> Vec2 {
    let to_goal = agent.goal - agent.position;
    let dist = to_goal.length();
    if dist == 0.0 {
        Vec2::ZERO
    } else if dist <= agent.pref_speed * dt {
        to_goal / dt
    } else {
        to_goal / dist * agent.pref_speed
    }
}

fn shuffle_seed(id: AgentId, frame: u64) -> u64 {
    // splitmix64 finalizer over the packed (id, frame) pair
    let mut z = (u64::from(id.0) << 40 ^ frame).wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn goal_reached(agent: &AgentState, tolerance: Option<f64>) -> bool {
    (agent.goal - agent.position).length() <= tolerance.unwrap_or(agent.radius)
}

/// Advances one frame. `workers` threads share constraint gathering and the
/// LP batch; the result does not depend on their number.
pub fn step(state: &SimState, config: &ScenarioConfig, workers: usize, record: bool) -> Result<StepOutput, SimError> {
    if workers == 0 {
        return Err(SimError::NoWorkers);
    }
    let frame = state.frame;
    let started = Instant::now();
    let agents = &state.agents;

    let grid = UniformGrid::rebuild(agents, config.neighbor_radius).map_err(|source| SimError::Grid { frame, source })?;

    // Constraints are built from radii grown by half the avoidance margin.
    let inflated: Vec<AgentState>;
    let planning: &[AgentState] = if config.avoidance_margin > 0.0 {
        let grow = config.avoidance_margin / 2.0;
        inflated = agents.iter().map(|a| AgentState { radius: a.radius + grow, ..*a }).collect();
        &inflated
    } else {
        agents
    };

    let gathered: Vec<Option<Result<LpProblem, SimError>>> = work::map_indexed(agents.len(), GATHER_UNIT, workers, |i| {
        let me = &planning[i];
        let mut found = Vec::with_capacity(config.max_neighbors);
        grid.neighbor_indices(agents, i, config.neighbor_radius, config.max_neighbors, &mut found);
        let neighbors: Vec<&AgentState> = found.iter().map(|&(_, _, j)| &planning[j]).collect();
        Some(
            gather_constraints(me, &neighbors, &config.responsibility, config.tau, config.dt)
                .map(|constraints| LpProblem {
                    constraints,
                    target: desired_velocity(me, config.dt),
                    speed_cap: me.max_speed,
                    shuffle_seed: shuffle_seed(me.id, frame),
                })
                .map_err(|source| SimError::Constraint { frame, agent: me.id, source }),
        )
    });
    let problems = gathered
        .into_iter()
        .map(|p| p.expect("every slot is filled"))
        .collect::<Result<Vec<_>, _>>()?;

    let results = solve_batch(&problems, workers).map_err(|e| match e {
        LpError::InProblem { index, source } => SimError::Solver { frame, agent: agents[index].id, source: *source },
        other => SimError::Solver { frame, agent: AgentId(u32::MAX), source: other },
    })?;

    let next_frame = frame + 1;
    let time = next_frame as f64 * config.dt;
    let mut moved: Vec<AgentState> = agents
        .iter()
        .zip(&results)
        .map(|(a, r)| AgentState { velocity: r.velocity, position: a.position + r.velocity * config.dt, ..*a })
        .collect();
    let statuses: Vec<(AgentId, LpStatus)> = agents.iter().zip(&results).map(|(a, r)| (a.id, r.status)).collect();
    let fallback_count = results.iter().filter(|r| r.status == LpStatus::FallbackUsed).count();
    let wall_time_ms = started.elapsed().as_secs_f64() * 1e3;

    let (min_separation, collision_count) = separation_stats(&moved);
    let log = record.then(|| {
        let mut samples: Vec<AgentSample> = moved.iter().map(AgentSample::from).collect();
        samples.sort_by_key(|s| s.id);
        FrameLog { frame: next_frame, time, agents: samples }
    });
    let metrics = FrameMetrics {
        frame: next_frame,
        wall_time_ms,
        min_separation,
        collision_count,
        active_agents: moved.len(),
        fallback_count,
    };

    let mut arrivals = Vec::new();
    moved.retain(|a| {
        let done = goal_reached(a, config.goal_tolerance);
        if done {
            arrivals.push(Arrival { id: a.id, class: a.class, time });
        }
        !done
    });
    arrivals.sort_by_key(|a| a.id);

    Ok(StepOutput {
        state: SimState { frame: next_frame, time, agents: moved, rng: state.rng.clone() },
        metrics,
        log,
        arrivals,
        statuses,
    })
}

/// Exact minimum pairwise separation and the number of pairs overlapping by
/// more than [`COLLISION_TOLERANCE`]. Returns `(inf, 0)` for fewer than two
/// agents.
pub fn separation_stats(agents: &[AgentState]) -> (f64, u64) {
    if agents.len() < 2 {
        return (f64::INFINITY, 0);
    }
    let r_max = agents.iter().map(|a| a.radius).fold(0.0, f64::max);
    let mut search = 2.0 * r_max + 1.0;
    loop {
        let grid = UniformGrid::rebuild(agents, search).expect("positions checked finite by the caller");
        let mut min_sep = f64::INFINITY;
        let mut collisions = 0;
        for i in 0..agents.len() {
            grid.for_each_within(agents, i, search, |j, d_sq| {
                if j > i {
                    let sep = d_sq.sqrt() - agents[i].radius - agents[j].radius;
                    min_sep = min_sep.min(sep);
                    if sep < -COLLISION_TOLERANCE {
                        collisions += 1;
                    }
                }
            });
        }
        // Any pair with separation <= search - 2 r_max was visited, so a
        // minimum at or below that bound is the true minimum.
        if min_sep <= search - 2.0 * r_max {
            return (min_sep, collisions);
        }
        search *= 4.0;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub workers: usize,
    /// Stop cleanly after this many frames (benchmarks); `None` runs until
    /// every agent has arrived.
    pub frame_budget: Option<u64>,
    /// Produce a [`FrameLog`] for every frame.
    pub record: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { workers: 1, frame_budget: None, record: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub agents: usize,
    pub seed: u64,
    pub frames: u64,
    pub total_collisions: u64,
    pub min_separation: f64,
    pub mean_frame_ms: f64,
    pub p95_frame_ms: f64,
    pub fallback_count: u64,
    /// Mean time from start to arrival, indexed by [`AgentClass::index`].
    pub mean_travel_time: [Option<f64>; 2],
    pub arrived: usize,
    pub remaining: usize,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics: Vec<FrameMetrics>,
    pub summary: RunSummary,
}

/// Runs `config` to completion and returns every frame log.
pub fn run(config: &ScenarioConfig, workers: usize) -> Result<(Vec<FrameLog>, RunSummary), SimError> {
    let mut logs = Vec::new();
    let options = RunOptions { workers, frame_budget: None, record: true };
    let out = run_with_sink(config, &options, |log: &FrameLog| {
        logs.push(log.clone());
        Ok::<(), std::convert::Infallible>(())
    })?;
    Ok((logs, out.summary))
}

pub fn run_with_sink<E>(
    config: &ScenarioConfig,
    options: &RunOptions,
    sink: impl FnMut(&FrameLog) -> Result<(), E>,
) -> Result<RunOutput, SimError>
where
    E: Into<Box<dyn StdError + Send + Sync>>,
{
    let state = SimState::initialize(config)?;
    run_from(state, config, options, sink)
}

/// Steps `state` until no agent is active, the frame budget is spent, or
/// `config.max_frames` is reached (an error carrying the partial output).
pub fn run_from<E>(
    mut state: SimState,
    config: &ScenarioConfig,
    options: &RunOptions,
    mut sink: impl FnMut(&FrameLog) -> Result<(), E>,
) -> Result<RunOutput, SimError>
where
    E: Into<Box<dyn StdError + Send + Sync>>,
{
    let agents = state.agents.len();
    let start_time = state.time;
    let mut metrics = Vec::new();
    let mut travel = [(0.0, 0usize); 2];
    let mut arrived = 0;
    let start_frame = state.frame;

    while !state.agents.is_empty() {
        if options.frame_budget.is_some_and(|b| state.frame - start_frame >= b) {
            break;
        }
        if state.frame >= config.max_frames {
            let remaining = state.agents.len();
            let summary = summarize(config, agents, &metrics, &travel, arrived, remaining);
            return Err(SimError::NonTermination {
                max_frames: config.max_frames,
                remaining,
                output: Box::new(RunOutput { metrics, summary }),
            });
        }
        let out = step(&state, config, options.workers, options.record)?;
        if let Some(log) = &out.log {
            sink(log).map_err(|e| SimError::Sink(e.into()))?;
        }
        for a in &out.arrivals {
            let slot = &mut travel[a.class.index()];
            slot.0 += a.time - start_time;
            slot.1 += 1;
        }
        arrived += out.arrivals.len();
        metrics.push(out.metrics);
        state = out.state;
    }

    let summary = summarize(config, agents, &metrics, &travel, arrived, state.agents.len());
    Ok(RunOutput { metrics, summary })
}

fn summarize(
    config: &ScenarioConfig,
    agents: usize,
    metrics: &[FrameMetrics],
    travel: &[(f64, usize); 2],
    arrived: usize,
    remaining: usize,
) -> RunSummary {
    let times: Vec<f64> = metrics.iter().map(|m| m.wall_time_ms).collect();
    RunSummary {
        agents,
        seed: config.seed,
        frames: metrics.len() as u64,
        total_collisions: metrics.iter().map(|m| m.collision_count).sum(),
        min_separation: metrics.iter().map(|m| m.min_separation).fold(f64::INFINITY, f64::min),
        mean_frame_ms: mean(&times),
        p95_frame_ms: percentile(&times, 0.95),
        fallback_count: metrics.iter().map(|m| m.fallback_count as u64).sum(),
        mean_travel_time: travel.map(|(sum, n)| (n > 0).then(|| sum / n as f64)),
        arrived,
        remaining,
    }
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Nearest-rank percentile, `q` in (0, 1]. Zero for an empty slice.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}
