//! Built-in crossing scenarios.
//!
//! Each arm is a square spawn block facing an identical goal block on the
//! opposite side of an open central area. A two-way crossing has east and
//! west arms; a four-way crossing adds north and south. The block area grows
//! with the arm population so the spawn density stays constant.

use std::fmt;
use std::str::FromStr;

use crate::geometry::{Rect, Vec2};
use crate::orca::AgentClass;
use crate::scenario::{ScenarioConfig, ScenarioError, SpawnRegion};

/// Spawn-block area per agent, in square metres.
pub const AREA_PER_AGENT: f64 = 30.0;
/// Smallest spawn-block side.
pub const MIN_ARM_SIDE: f64 = 10.0;
/// Extra gap between the central area and each block.
pub const ARM_GAP: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrossingKind {
    TwoWay,
    FourWay,
}

impl CrossingKind {
    pub fn arms(self) -> usize {
        match self {
            CrossingKind::TwoWay => 2,
            CrossingKind::FourWay => 4,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CrossingKind::TwoWay => "two_way",
            CrossingKind::FourWay => "four_way",
        }
    }
}

impl fmt::Display for CrossingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CrossingKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "two_way" | "two-way" | "2" => Ok(CrossingKind::TwoWay),
            "four_way" | "four-way" | "4" => Ok(CrossingKind::FourWay),
            _ => Err(format!("unknown crossing kind `{s}` (expected two_way or four_way)")),
        }
    }
}

/// Side length of the square spawn block for `agents_per_arm` agents.
pub fn arm_side(agents_per_arm: usize) -> f64 {
    (agents_per_arm as f64 * AREA_PER_AGENT).sqrt().max(MIN_ARM_SIDE)
}

/// Spawn and goal blocks of every arm, west first, then east, south, north.
pub fn arm_blocks(kind: CrossingKind, agents_per_arm: usize) -> Vec<(Rect, Rect)> {
    let s = arm_side(agents_per_arm);
    let near = s / 2.0 + ARM_GAP;
    let far = near + s;
    let half = s / 2.0;
    let west = Rect::new(Vec2::new(-far, -half), Vec2::new(-near, half));
    let east = Rect::new(Vec2::new(near, -half), Vec2::new(far, half));
    let south = Rect::new(Vec2::new(-half, -far), Vec2::new(half, -near));
    let north = Rect::new(Vec2::new(-half, near), Vec2::new(half, far));
    let mut blocks = vec![(west, east), (east, west)];
    if kind == CrossingKind::FourWay {
        blocks.push((south, north));
        blocks.push((north, south));
    }
    blocks
}

/// Builds a crossing scenario on top of `base` (which supplies class
/// parameters, responsibility, timing, and the seed). `max_frames` is reset
/// to its default for the generated extent.
pub fn crossing_scenario(
    kind: CrossingKind,
    agents_per_arm: usize,
    vehicle_fraction: f64,
    base: &ScenarioConfig,
) -> Result<ScenarioConfig, ScenarioError> {
    if !(0.0..=1.0).contains(&vehicle_fraction) {
        return Err(ScenarioError::Invalid {
            field: "vehicle_fraction".into(),
            message: format!("must lie in [0, 1], got {vehicle_fraction}"),
        });
    }
    let vehicles = (agents_per_arm as f64 * vehicle_fraction).round() as usize;
    let pedestrians = agents_per_arm - vehicles;

    let mut config = base.clone();
    config.regions.clear();
    for (spawn, goal) in arm_blocks(kind, agents_per_arm) {
        for (class, count) in [(AgentClass::Pedestrian, pedestrians), (AgentClass::Vehicle, vehicles)] {
            if count > 0 {
                config.regions.push(SpawnRegion { spawn, goal, class, count });
            }
        }
    }
    config.max_frames = config.default_max_frames();
    config.validate()?;
    Ok(config)
}
