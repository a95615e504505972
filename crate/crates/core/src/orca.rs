//! ORCA half-planes with per-class responsibility fractions.
//!
//! For a pair of agents the velocity obstacle is the set of relative
//! velocities that bring the two discs into contact within the lookahead
//! `tau`: a cone from the origin tangent to the cutoff disc centred at
//! `rel_position / tau` with radius `combined_radius / tau`, truncated by
//! that disc. The constraint an agent receives is the half-plane through
//! `v_opt + f * u` with the exit normal, where `u` is the shortest move from
//! the current relative velocity to the obstacle boundary and `f` is the
//! share of the avoidance the agent takes on.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec2;
use crate::lp::HalfPlaneConstraint;

/// Opaque agent identifier, unique among active agents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AgentId(pub u32);

impl std::fmt::Display for AgentId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentClass {
    Pedestrian = 0,
    Vehicle = 1,
}

impl AgentClass {
    pub const ALL: [AgentClass; 2] = [AgentClass::Pedestrian, AgentClass::Vehicle];

    pub fn as_str(self) -> &'static str {
        match self {
            AgentClass::Pedestrian => "pedestrian",
            AgentClass::Vehicle => "vehicle",
        }
    }

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }
}

impl std::str::FromStr for AgentClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pedestrian" => Ok(AgentClass::Pedestrian),
            "vehicle" => Ok(AgentClass::Vehicle),
            other => Err(format!("unknown agent class `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentState {
    pub id: AgentId,
    pub position: Vec2,
    pub velocity: Vec2,
    pub radius: f64,
    pub pref_speed: f64,
    pub max_speed: f64,
    pub goal: Vec2,
    pub class: AgentClass,
}

/// Avoidance fractions `f(A, B)`: the share of the exit vector an agent of
/// class A applies when avoiding an agent of class B.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResponsibilityMatrix {
    f: [[f64; 2]; 2],
}

impl ResponsibilityMatrix {
    /// Every pair shares avoidance equally.
    pub fn reciprocal() -> Self {
        ResponsibilityMatrix { f: [[0.5; 2]; 2] }
    }

    /// Pedestrians take full responsibility for avoiding vehicles, vehicles
    /// take none; same-class pairs split it equally.
    pub fn pedestrians_yield() -> Self {
        let mut m = Self::reciprocal();
        m.f[AgentClass::Pedestrian.index()][AgentClass::Vehicle.index()] = 1.0;
        m.f[AgentClass::Vehicle.index()][AgentClass::Pedestrian.index()] = 0.0;
        m
    }

    /// Builds a matrix from `f[a][b]`, indexed by [`AgentClass::index`].
    pub fn from_entries(f: [[f64; 2]; 2]) -> Result<Self, OrcaError> {
        for a in AgentClass::ALL {
            for b in AgentClass::ALL {
                let value = f[a.index()][b.index()];
                if !(0.0..=1.0).contains(&value) {
                    return Err(OrcaError::FractionOutOfRange { value });
                }
            }
        }
        Ok(ResponsibilityMatrix { f })
    }

    #[inline]
    pub fn get(&self, avoider: AgentClass, avoided: AgentClass) -> f64 {
        self.f[avoider.index()][avoided.index()]
    }

    /// Unordered class pairs whose fractions sum to less than one, i.e. pairs
    /// outside the collision-free guarantee.
    pub fn guarantee_violations(&self) -> Vec<(AgentClass, AgentClass)> {
        let mut out = Vec::new();
        for (i, &a) in AgentClass::ALL.iter().enumerate() {
            for &b in &AgentClass::ALL[i..] {
                if self.get(a, b) + self.get(b, a) < 1.0 {
                    out.push((a, b));
                }
            }
        }
        out
    }

    /// Whether `f(A,B) + f(B,A) >= 1` holds for every pair.
    pub fn guarantees_collision_free(&self) -> bool {
        self.guarantee_violations().is_empty()
    }

    pub fn pair_guaranteed(&self, a: AgentClass, b: AgentClass) -> bool {
        self.get(a, b) + self.get(b, a) >= 1.0
    }
}

impl Default for ResponsibilityMatrix {
    fn default() -> Self {
        Self::pedestrians_yield()
    }
}

/// Which part of the obstacle boundary the exit lands on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VoRegion {
    /// The front arc of the cutoff disc.
    CutoffArc,
    LeftLeg,
    RightLeg,
    /// Agents already overlap; the exit is from the one-step disc.
    Overlap,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoExit {
    /// Shortest displacement from the relative velocity to the boundary.
    pub u: Vec2,
    /// Outward unit normal of the boundary at `rel_velocity + u`.
    pub normal: Vec2,
    pub region: VoRegion,
}

impl VoExit {
    /// Whether the relative velocity was strictly inside the obstacle.
    pub fn was_inside(&self) -> bool {
        self.u.dot(self.normal) > 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OrcaError {
    #[error("{what} is not finite")]
    NonFinite { what: &'static str },
    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("agents have coincident centres; the avoidance direction is undefined")]
    CoincidentCenters,
    #[error("responsibility fraction {value} is outside [0, 1]")]
    FractionOutOfRange { value: f64 },
    #[error("agent {0} cannot avoid itself")]
    SelfPair(AgentId),
    #[error("neighbor {neighbor}: {source}")]
    Neighbor {
        neighbor: AgentId,
        #[source]
        source: Box<OrcaError>,
    },
}

fn check_finite(v: Vec2, what: &'static str) -> Result<(), OrcaError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(OrcaError::NonFinite { what })
    }
}

fn check_positive(value: f64, name: &'static str) -> Result<(), OrcaError> {
    if !value.is_finite() {
        Err(OrcaError::NonFinite { what: name })
    } else if value <= 0.0 {
        Err(OrcaError::NonPositive { name, value })
    } else {
        Ok(())
    }
}

// Relative tolerance by which a leg must beat the arc to be chosen; exact
// ties resolve to the arc.
const LEG_TIE_TOLERANCE: f64 = 1e-12;

/// Finds the shortest exit from the velocity obstacle induced by a neighbor
/// at `rel_position` (neighbor minus self), for relative velocity
/// `rel_velocity` (self minus neighbor).
pub fn compute_vo_exit(
    rel_position: Vec2,
    rel_velocity: Vec2,
    combined_radius: f64,
    tau: f64,
    dt: f64,
) -> Result<VoExit, OrcaError> {
    check_finite(rel_position, "relative position")?;
    check_finite(rel_velocity, "relative velocity")?;
    check_positive(combined_radius, "combined radius")?;
    check_positive(tau, "tau")?;
    check_positive(dt, "dt")?;

    let dist_sq = rel_position.length_squared();
    if dist_sq == 0.0 {
        return Err(OrcaError::CoincidentCenters);
    }
    let radius_sq = combined_radius * combined_radius;
    let dist = dist_sq.sqrt();
    let axis = rel_position / dist;

    if dist_sq <= radius_sq {
        // Already overlapping: leave the disc of relative velocities that
        // keep the agents overlapping after one step.
        let centre = rel_position / dt;
        let radius = combined_radius / dt;
        let w = rel_velocity - centre;
        let w_len = w.length();
        let normal = if w_len > 0.0 { w / w_len } else { -axis };
        return Ok(VoExit { u: normal * (radius - w_len), normal, region: VoRegion::Overlap });
    }

    let centre = rel_position / tau;
    let radius = combined_radius / tau;

    // Front arc: radial projection onto the cutoff circle, kept only if it
    // lies between the tangent points on the side facing the origin.
    let w = rel_velocity - centre;
    let w_len = w.length();
    let arc_normal = if w_len > 0.0 { w / w_len } else { -axis };
    let sin_half_angle = combined_radius / dist;
    let arc = (arc_normal.dot(axis) <= -sin_half_angle).then(|| {
        let u = arc_normal * (radius - w_len);
        (u.length(), VoExit { u, normal: arc_normal, region: VoRegion::CutoffArc })
    });

    // Legs: rays from the tangent points away from the origin.
    let leg_len = (dist_sq - radius_sq).sqrt();
    let p = rel_position;
    let left_dir = Vec2::new(p.x * leg_len - p.y * combined_radius, p.x * combined_radius + p.y * leg_len) / dist_sq;
    let right_dir = Vec2::new(p.x * leg_len + p.y * combined_radius, -p.x * combined_radius + p.y * leg_len) / dist_sq;
    let leg_exit = |dir: Vec2, region: VoRegion| {
        let tangent = dir * (leg_len / tau);
        let s = (rel_velocity - tangent).dot(dir).max(0.0);
        let u = tangent + dir * s - rel_velocity;
        let normal = ((dir * leg_len - p) / combined_radius).normalized().unwrap_or(-axis);
        (u.length(), VoExit { u, normal, region })
    };
    let left = leg_exit(left_dir, VoRegion::LeftLeg);
    let right = leg_exit(right_dir, VoRegion::RightLeg);
    let leg = if right.0 < left.0 { right } else { left };

    Ok(match arc {
        Some(arc) if leg.0 + LEG_TIE_TOLERANCE * (1.0 + arc.0) >= arc.0 => arc.1,
        _ => leg.1,
    })
}

/// The ORCA half-plane `self` must respect to avoid `other`, taking fraction
/// `f` of the avoidance. The optimization velocity is the current velocity.
pub fn build_orca_halfplane(
    agent: &AgentState,
    other: &AgentState,
    f: f64,
    tau: f64,
    dt: f64,
) -> Result<HalfPlaneConstraint, OrcaError> {
    if !(0.0..=1.0).contains(&f) {
        return Err(OrcaError::FractionOutOfRange { value: f });
    }
    if agent.id == other.id {
        return Err(OrcaError::SelfPair(agent.id));
    }
    check_finite(agent.velocity, "velocity")?;
    let exit = compute_vo_exit(
        other.position - agent.position,
        agent.velocity - other.velocity,
        agent.radius + other.radius,
        tau,
        dt,
    )?;
    Ok(HalfPlaneConstraint { boundary_point: agent.velocity + exit.u * f, outward_normal: exit.normal })
}

/// One constraint per neighbor, in neighbor order, with each fraction looked
/// up from `matrix` by class pair.
pub fn gather_constraints(
    agent: &AgentState,
    neighbors: &[&AgentState],
    matrix: &ResponsibilityMatrix,
    tau: f64,
    dt: f64,
) -> Result<Vec<HalfPlaneConstraint>, OrcaError> {
    neighbors
        .iter()
        .map(|other| {
            build_orca_halfplane(agent, other, matrix.get(agent.class, other.class), tau, dt)
                .map_err(|source| OrcaError::Neighbor { neighbor: other.id, source: Box::new(source) })
        })
        .collect()
}
