//! Headless crowd simulation in which pedestrians and autonomous vehicles
//! share one open space.
//!
//! Every agent avoids its neighbours with optimal reciprocal collision
//! avoidance (ORCA): each neighbour contributes a velocity half-plane, and a
//! small linear program picks the permitted velocity closest to the one the
//! agent wants. A responsibility matrix decides how much of each avoidance a
//! class takes on, so pedestrians can be made to yield fully to vehicles.
//!
//! The per-frame LP batch runs on any number of worker threads and produces
//! bit-identical results regardless of that number.

pub mod cli;
pub mod crossing;
pub mod engine;
pub mod geometry;
pub mod grid;
pub mod lp;
pub mod orca;
pub mod report;
pub mod scenario;
pub mod trajectory;
pub mod work;

pub use engine::{run, step, FrameMetrics, RunOptions, RunSummary, SimError, SimState};
pub use geometry::{Rect, Vec2};
pub use lp::{solve_batch, solve_closest_point, solve_least_penetration, HalfPlaneConstraint, LpProblem, LpResult, LpStatus};
pub use orca::{AgentClass, AgentId, AgentState, ResponsibilityMatrix};
pub use scenario::{load_scenario, ScenarioConfig};
