//! Independent reference implementations shared by the integration tests.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use shared_space::engine::COLLISION_TOLERANCE;
use shared_space::scenario::ScenarioConfig;
use shared_space::trajectory::{AgentSample, FrameLog};
use shared_space::{AgentClass, AgentId, AgentState, HalfPlaneConstraint, LpProblem, Vec2};

/// Distance from the solver's answer to the oracle's allowed for feasible LPs.
pub const LP_ORACLE_TOLERANCE: f64 = 1e-4;
/// Every generated feasible region contains a disc of this radius.
pub const MIN_INRADIUS: f64 = 1e-3;
/// Most constraints in a generated LP.
pub const MAX_CONSTRAINTS: usize = 16;

const ORACLE_ROWS: usize = 2000;
const REFINE_ITERATIONS: usize = 200;
// Penalty offset that ranks every infeasible row above every feasible one.
const INFEASIBLE_PENALTY: f64 = 1e12;

/// Feasible x-range of the row at height `y`, or the amount by which the
/// row misses being feasible.
fn row_interval(problem: &LpProblem, y: f64) -> Result<(f64, f64), f64> {
    let r = problem.speed_cap;
    if y.abs() > r {
        return Err(y.abs() - r);
    }
    let half = (r * r - y * y).sqrt();
    let (mut lo, mut hi) = (-half, half);
    for c in &problem.constraints {
        // n.x * x + n.y * y >= n . p
        let n = c.outward_normal;
        let rhs = n.dot(c.boundary_point) - n.y * y;
        if n.x.abs() < 1e-300 {
            if rhs > 0.0 {
                return Err(rhs);
            }
        } else if n.x > 0.0 {
            lo = lo.max(rhs / n.x);
        } else {
            hi = hi.min(rhs / n.x);
        }
    }
    if lo <= hi {
        Ok((lo, hi))
    } else {
        Err(lo - hi)
    }
}

/// Row score: squared distance from the target to the row's best point,
/// or a penalty growing with the row's infeasibility. Unimodal in `y`.
fn row_score(problem: &LpProblem, y: f64) -> (f64, Vec2) {
    match row_interval(problem, y) {
        Ok((lo, hi)) => {
            let x = problem.target.x.clamp(lo, hi);
            let v = Vec2::new(x, y);
            ((v - problem.target).length_squared(), v)
        }
        Err(gap) => (INFEASIBLE_PENALTY + gap, Vec2::new(f64::NAN, y)),
    }
}

/// Closest feasible point to the target, found by scanning a dense set of
/// rows with the exact feasible x-interval on each, then refining the best
/// row by ternary search. `None` if the region is empty.
pub fn closest_point_oracle(problem: &LpProblem) -> Option<Vec2> {
    let r = problem.speed_cap;
    let step = 2.0 * r / ORACLE_ROWS as f64;
    let mut best = (f64::INFINITY, 0usize);
    for i in 0..=ORACLE_ROWS {
        let (s, _) = row_score(problem, -r + i as f64 * step);
        if s < best.0 {
            best = (s, i);
        }
    }
    // The score is unimodal, so the minimum lies within a step of the best
    // sampled row even when the feasible band is thinner than a step.
    let centre = -r + best.1 as f64 * step;
    let (mut a, mut b) = ((centre - step).max(-r), (centre + step).min(r));
    for _ in 0..REFINE_ITERATIONS {
        let m1 = a + (b - a) / 3.0;
        let m2 = b - (b - a) / 3.0;
        if row_score(problem, m1).0 <= row_score(problem, m2).0 {
            b = m2;
        } else {
            a = m1;
        }
    }
    let candidates = [a, b, (a + b) / 2.0, centre];
    candidates
        .iter()
        .map(|&y| row_score(problem, y))
        .filter(|(s, _)| *s < INFEASIBLE_PENALTY)
        .min_by(|x, y| x.0.total_cmp(&y.0))
        .map(|(_, v)| v)
}

/// Worst violation of `v` over all constraints, clamped at zero.
pub fn worst_violation(constraints: &[HalfPlaneConstraint], v: Vec2) -> f64 {
    constraints.iter().map(|c| c.violation(v)).fold(0.0, f64::max)
}

/// A random LP whose feasible region contains a disc of radius
/// [`MIN_INRADIUS`] around a hidden interior point.
pub fn random_feasible_problem(rng: &mut impl Rng) -> LpProblem {
    let speed_cap = rng.random_range(0.5..5.0);
    let interior = random_in_disc(rng, speed_cap - MIN_INRADIUS);
    let count = rng.random_range(0..=MAX_CONSTRAINTS);
    let constraints = (0..count)
        .map(|_| {
            let normal = random_unit(rng);
            let depth = MIN_INRADIUS + rng.random::<f64>() * speed_cap;
            HalfPlaneConstraint::new(interior - normal * depth, normal)
        })
        .collect();
    let target = random_in_disc(rng, 2.0 * speed_cap);
    LpProblem { constraints, target, speed_cap, shuffle_seed: rng.random() }
}

/// A random LP with no guarantee of feasibility.
pub fn random_problem(rng: &mut impl Rng) -> LpProblem {
    let speed_cap = rng.random_range(0.5..5.0);
    let count = rng.random_range(1..=MAX_CONSTRAINTS);
    let constraints = (0..count)
        .map(|_| {
            let normal = random_unit(rng);
            HalfPlaneConstraint::new(random_in_disc(rng, 1.5 * speed_cap), normal)
        })
        .collect();
    let target = random_in_disc(rng, 2.0 * speed_cap);
    LpProblem { constraints, target, speed_cap, shuffle_seed: rng.random() }
}

pub fn random_unit(rng: &mut impl Rng) -> Vec2 {
    let a = rng.random_range(0.0..std::f64::consts::TAU);
    Vec2::new(a.cos(), a.sin())
}

pub fn random_in_disc(rng: &mut impl Rng, radius: f64) -> Vec2 {
    random_unit(rng) * (radius.max(0.0) * rng.random::<f64>().sqrt())
}

/// Brute-force neighbor list: every other agent within `radius`,
/// nearest first with ties broken by id, truncated to `max_count`.
pub fn brute_force_neighbors(agents: &[AgentState], index: usize, radius: f64, max_count: usize) -> Vec<AgentId> {
    let me = agents[index];
    let mut found: Vec<(f64, AgentId)> = agents
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != index)
        .map(|(_, a)| ((a.position - me.position).length_squared(), a.id))
        .filter(|&(d_sq, _)| d_sq <= radius * radius)
        .collect();
    found.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    found.truncate(max_count);
    found.into_iter().map(|(_, id)| id).collect()
}

/// Random agents in a square of side `extent` centred on the origin.
pub fn random_agents(rng: &mut impl Rng, count: usize, extent: f64) -> Vec<AgentState> {
    (0..count)
        .map(|i| {
            let class = if rng.random_bool(0.3) { AgentClass::Vehicle } else { AgentClass::Pedestrian };
            AgentState {
                id: AgentId(i as u32),
                position: Vec2::new(rng.random_range(-0.5..0.5) * extent, rng.random_range(-0.5..0.5) * extent),
                velocity: random_in_disc(rng, 2.0),
                radius: rng.random_range(0.2..1.0),
                pref_speed: 1.4,
                max_speed: 2.0,
                goal: Vec2::ZERO,
                class,
            }
        })
        .collect()
}

/// Every spawned pair is at least the configured spawn separation apart.
/// Returns the first offending pair.
pub fn spawn_audit(config: &ScenarioConfig, agents: &[AgentState]) -> Result<(), (AgentId, AgentId, f64)> {
    for (i, a) in agents.iter().enumerate() {
        for b in &agents[i + 1..] {
            let d_sq = (a.position - b.position).length_squared();
            let sep = config.spawn_separation(a.class, b.class);
            if d_sq < sep * sep {
                return Err((a.id, b.id, d_sq.sqrt()));
            }
        }
    }
    Ok(())
}

/// Pairs whose centre distance falls short of their summed radii by more
/// than the collision tolerance, by exhaustive scan.
pub fn brute_force_collisions(agents: &[AgentState]) -> u64 {
    let mut count = 0;
    for (i, a) in agents.iter().enumerate() {
        for b in &agents[i + 1..] {
            if (a.position - b.position).length() - (a.radius + b.radius) < -COLLISION_TOLERANCE {
                count += 1;
            }
        }
    }
    count
}

/// Random frame logs with awkward floats (subnormals, huge and tiny
/// magnitudes, negative zero) to stress the text round trip. Every frame
/// holds at least one agent since frames are stored as agent rows.
pub fn random_frame_logs(seed: u64, frames: usize) -> Vec<FrameLog> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let value = |rng: &mut ChaCha8Rng| -> f64 {
        match rng.random_range(0..8) {
            0 => -0.0,
            1 => f64::MIN_POSITIVE / 3.0,
            2 => rng.random::<f64>() * 1e300,
            3 => -rng.random::<f64>() * 1e-300,
            4 => (rng.random::<f64>() * 10.0).round(),
            _ => rng.random_range(-1e4..1e4),
        }
    };
    (0..frames)
        .map(|f| {
            let n = rng.random_range(1..20);
            let agents = (0..n)
                .map(|i| AgentSample {
                    id: AgentId(i * 3 + rng.random_range(0..3)),
                    class: if rng.random_bool(0.5) { AgentClass::Vehicle } else { AgentClass::Pedestrian },
                    position: Vec2::new(value(&mut rng), value(&mut rng)),
                    velocity: Vec2::new(value(&mut rng), value(&mut rng)),
                    radius: rng.random_range(0.01..3.0),
                })
                .collect();
            FrameLog { frame: f as u64, time: f as f64 * 0.1, agents }
        })
        .collect()
}
