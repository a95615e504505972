//! Scenario definitions: the TOML scenario file, validation with defaults,
//! and seeded spawn sampling.
//!
//! Scenario file layout (format version 1; every key except
//! `format_version` and `regions` is optional):
//!
//! ```toml
//! format_version = 1
//! seed = 42
//! dt = 0.1               # s
//! tau = 2.0              # s, lookahead
//! neighbor_radius = 15.0 # m
//! max_neighbors = 16
//! goal_tolerance = 0.25  # m; defaults to each agent's radius
//! clearance_time = 0.5   # s, spawn spacing allowance
//! avoidance_margin = 0.05 # m, added to summed radii when avoiding
//! max_frames = 20000     # defaults from scenario extent and speeds
//!
//! [classes.pedestrian]
//! radius = 0.25
//! pref_speed = 1.4
//! max_speed = 2.0
//!
//! [classes.vehicle]
//! radius = 1.0
//! pref_speed = 3.0
//! max_speed = 5.0
//!
//! # responsibility.<avoider>.<avoided>; if the table is present it must
//! # cover every pair of classes used by the regions.
//! [responsibility.pedestrian]
//! pedestrian = 0.5
//! vehicle = 1.0
//! [responsibility.vehicle]
//! pedestrian = 0.0
//! vehicle = 0.5
//!
//! [[regions]]
//! class = "pedestrian"
//! count = 10
//! spawn = { min = [-20.0, -5.0], max = [-10.0, 5.0] }
//! goal = { min = [10.0, -5.0], max = [20.0, 5.0] }
//! ```

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;
use serde::Deserialize;
use thiserror::Error;

use crate::geometry::{Rect, Vec2};
use crate::grid::{cell_coord, CellCoord};
use crate::orca::{AgentClass, ResponsibilityMatrix};

pub const FORMAT_VERSION: u32 = 1;

pub const DEFAULT_DT: f64 = 0.1;
pub const DEFAULT_TAU: f64 = 2.0;
pub const DEFAULT_NEIGHBOR_RADIUS: f64 = 15.0;
pub const DEFAULT_MAX_NEIGHBORS: usize = 16;
pub const DEFAULT_CLEARANCE_TIME: f64 = 0.5;
pub const DEFAULT_AVOIDANCE_MARGIN: f64 = 0.05;
pub const DEFAULT_SEED: u64 = 0;

// Consecutive rejected draws before spawn placement gives up.
const MAX_SPAWN_ATTEMPTS: usize = 5_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassParams {
    pub radius: f64,
    pub pref_speed: f64,
    pub max_speed: f64,
}

impl ClassParams {
    pub fn default_for(class: AgentClass) -> Self {
        match class {
            AgentClass::Pedestrian => ClassParams { radius: 0.25, pref_speed: 1.4, max_speed: 2.0 },
            AgentClass::Vehicle => ClassParams { radius: 1.0, pref_speed: 3.0, max_speed: 5.0 },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpawnRegion {
    pub spawn: Rect,
    pub goal: Rect,
    pub class: AgentClass,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub regions: Vec<SpawnRegion>,
    /// Indexed by [`AgentClass::index`].
    pub classes: [ClassParams; 2],
    pub responsibility: ResponsibilityMatrix,
    pub dt: f64,
    pub tau: f64,
    pub neighbor_radius: f64,
    pub max_neighbors: usize,
    /// `None` means each agent's own radius.
    pub goal_tolerance: Option<f64>,
    pub clearance_time: f64,
    /// Extra distance added to every pair's summed radii when building
    /// avoidance constraints. Collisions are still judged on true radii.
    pub avoidance_margin: f64,
    pub seed: u64,
    pub max_frames: u64,
    /// Non-fatal findings, e.g. responsibility pairs outside the
    /// collision-free guarantee.
    pub warnings: Vec<String>,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("unsupported format_version {0} (expected {FORMAT_VERSION})")]
    UnsupportedVersion(u32),
    #[error("invalid `{field}`: {message}")]
    Invalid { field: String, message: String },
    #[error("responsibility matrix has no entry `responsibility.{avoider}.{avoided}`")]
    IncompleteResponsibility { avoider: &'static str, avoided: &'static str },
    #[error("region too dense: {requested} agents requested, at most {capacity} fit")]
    RegionTooDense { requested: usize, capacity: usize },
    #[error("spawn placement gave up after placing {placed} of {requested} agents{}", region.map(|r| format!(" in regions[{r}]")).unwrap_or_default())]
    SpawnFailed { region: Option<usize>, placed: usize, requested: usize },
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid { field: field.into(), message: message.into() }
}

/// Command-line overrides applied on top of a scenario file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub dt: Option<f64>,
    pub tau: Option<f64>,
    pub max_frames: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    format_version: u32,
    seed: Option<u64>,
    dt: Option<f64>,
    tau: Option<f64>,
    neighbor_radius: Option<f64>,
    max_neighbors: Option<usize>,
    goal_tolerance: Option<f64>,
    clearance_time: Option<f64>,
    avoidance_margin: Option<f64>,
    max_frames: Option<u64>,
    #[serde(default)]
    classes: ClassesFile,
    responsibility: Option<ResponsibilityFile>,
    #[serde(default)]
    regions: Vec<RegionFile>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClassesFile {
    pedestrian: Option<ClassFile>,
    vehicle: Option<ClassFile>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClassFile {
    radius: Option<f64>,
    pref_speed: Option<f64>,
    max_speed: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ResponsibilityFile {
    pedestrian: Option<ResponsibilityRow>,
    vehicle: Option<ResponsibilityRow>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ResponsibilityRow {
    pedestrian: Option<f64>,
    vehicle: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegionFile {
    class: AgentClass,
    count: usize,
    spawn: RectFile,
    goal: RectFile,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RectFile {
    min: [f64; 2],
    max: [f64; 2],
}

impl From<&RectFile> for Rect {
    fn from(r: &RectFile) -> Self {
        Rect::new(Vec2::new(r.min[0], r.min[1]), Vec2::new(r.max[0], r.max[1]))
    }
}

/// Reads and validates a scenario file, filling defaults.
pub fn load_scenario(path: &Path) -> Result<ScenarioConfig, ScenarioError> {
    load_scenario_with(path, &Overrides::default())
}

pub fn load_scenario_with(path: &Path, overrides: &Overrides) -> Result<ScenarioConfig, ScenarioError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
    parse_scenario(&text, overrides).map_err(|e| match e {
        ScenarioError::Parse { message, .. } => ScenarioError::Parse { path: path.display().to_string(), message },
        other => other,
    })
}

/// Parses scenario text; see the module docs for the schema.
pub fn parse_scenario(text: &str, overrides: &Overrides) -> Result<ScenarioConfig, ScenarioError> {
    let file: ScenarioFile =
        toml::from_str(text).map_err(|e| ScenarioError::Parse { path: "<scenario>".into(), message: e.to_string() })?;
    if file.format_version != FORMAT_VERSION {
        return Err(ScenarioError::UnsupportedVersion(file.format_version));
    }

    let mut classes = [ClassParams::default_for(AgentClass::Pedestrian), ClassParams::default_for(AgentClass::Vehicle)];
    for (class, given) in [(AgentClass::Pedestrian, &file.classes.pedestrian), (AgentClass::Vehicle, &file.classes.vehicle)] {
        if let Some(given) = given {
            let params = &mut classes[class.index()];
            params.radius = given.radius.unwrap_or(params.radius);
            params.pref_speed = given.pref_speed.unwrap_or(params.pref_speed);
            params.max_speed = given.max_speed.unwrap_or(params.max_speed);
        }
    }

    let regions: Vec<SpawnRegion> = file
        .regions
        .iter()
        .map(|r| SpawnRegion { spawn: (&r.spawn).into(), goal: (&r.goal).into(), class: r.class, count: r.count })
        .collect();

    let responsibility = match &file.responsibility {
        None => ResponsibilityMatrix::default(),
        Some(table) => responsibility_from_file(table, &regions)?,
    };

    let mut config = ScenarioConfig {
        regions,
        classes,
        responsibility,
        dt: overrides.dt.or(file.dt).unwrap_or(DEFAULT_DT),
        tau: overrides.tau.or(file.tau).unwrap_or(DEFAULT_TAU),
        neighbor_radius: file.neighbor_radius.unwrap_or(DEFAULT_NEIGHBOR_RADIUS),
        max_neighbors: file.max_neighbors.unwrap_or(DEFAULT_MAX_NEIGHBORS),
        goal_tolerance: file.goal_tolerance,
        clearance_time: file.clearance_time.unwrap_or(DEFAULT_CLEARANCE_TIME),
        avoidance_margin: file.avoidance_margin.unwrap_or(DEFAULT_AVOIDANCE_MARGIN),
        seed: overrides.seed.or(file.seed).unwrap_or(DEFAULT_SEED),
        max_frames: 0,
        warnings: Vec::new(),
    };
    config.max_frames = match overrides.max_frames.or(file.max_frames) {
        Some(frames) => frames,
        None => config.default_max_frames(),
    };
    config.validate()?;
    Ok(config)
}

fn responsibility_from_file(
    table: &ResponsibilityFile,
    regions: &[SpawnRegion],
) -> Result<ResponsibilityMatrix, ScenarioError> {
    let used: Vec<AgentClass> = AgentClass::ALL.into_iter().filter(|c| regions.iter().any(|r| r.class == *c)).collect();
    let row = |class: AgentClass| match class {
        AgentClass::Pedestrian => table.pedestrian.as_ref(),
        AgentClass::Vehicle => table.vehicle.as_ref(),
    };
    let mut f = [[0.5; 2]; 2];
    for avoider in AgentClass::ALL {
        for avoided in AgentClass::ALL {
            let given = row(avoider).and_then(|r| match avoided {
                AgentClass::Pedestrian => r.pedestrian,
                AgentClass::Vehicle => r.vehicle,
            });
            match given {
                Some(value) => {
                    if !(0.0..=1.0).contains(&value) {
                        return Err(invalid(
                            format!("responsibility.{}.{}", avoider.as_str(), avoided.as_str()),
                            format!("fraction {value} is outside [0, 1]"),
                        ));
                    }
                    f[avoider.index()][avoided.index()] = value;
                }
                None if used.contains(&avoider) && used.contains(&avoided) => {
                    return Err(ScenarioError::IncompleteResponsibility {
                        avoider: avoider.as_str(),
                        avoided: avoided.as_str(),
                    });
                }
                None => {}
            }
        }
    }
    Ok(ResponsibilityMatrix::from_entries(f).expect("fractions checked above"))
}

fn require_positive(field: &str, value: f64) -> Result<(), ScenarioError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(invalid(field, format!("must be positive and finite, got {value}")))
    }
}

impl ScenarioConfig {
    pub fn class_params(&self, class: AgentClass) -> &ClassParams {
        &self.classes[class.index()]
    }

    pub fn total_agents(&self) -> usize {
        self.regions.iter().map(|r| r.count).sum()
    }

    /// Bounding box of every spawn and goal rectangle.
    pub fn extent(&self) -> Option<Rect> {
        self.regions.iter().flat_map(|r| [r.spawn, r.goal]).reduce(|a, b| a.union(&b))
    }

    /// Non-termination guard: a hundred times the time the slowest class
    /// needs to cross the scenario diagonal, in frames.
    pub fn default_max_frames(&self) -> u64 {
        let Some(extent) = self.extent() else { return 1 };
        let slowest = self
            .regions
            .iter()
            .map(|r| self.class_params(r.class).pref_speed)
            .fold(f64::INFINITY, f64::min);
        let frames = 100.0 * (extent.diagonal() / slowest) / self.dt;
        if frames.is_finite() && frames >= 1.0 {
            frames.ceil() as u64
        } else {
            1
        }
    }

    /// Checks every invariant and refreshes `warnings`.
    pub fn validate(&mut self) -> Result<(), ScenarioError> {
        require_positive("dt", self.dt)?;
        require_positive("tau", self.tau)?;
        require_positive("neighbor_radius", self.neighbor_radius)?;
        if let Some(tol) = self.goal_tolerance {
            require_positive("goal_tolerance", tol)?;
        }
        if !(self.clearance_time.is_finite() && self.clearance_time >= 0.0) {
            return Err(invalid("clearance_time", format!("must be non-negative, got {}", self.clearance_time)));
        }
        if !(self.avoidance_margin.is_finite() && self.avoidance_margin >= 0.0) {
            return Err(invalid("avoidance_margin", format!("must be non-negative, got {}", self.avoidance_margin)));
        }
        if self.max_frames == 0 {
            return Err(invalid("max_frames", "must be at least 1"));
        }
        for class in AgentClass::ALL {
            let p = self.class_params(class);
            let name = class.as_str();
            require_positive(&format!("classes.{name}.radius"), p.radius)?;
            require_positive(&format!("classes.{name}.pref_speed"), p.pref_speed)?;
            require_positive(&format!("classes.{name}.max_speed"), p.max_speed)?;
            if p.pref_speed > p.max_speed {
                return Err(invalid(
                    format!("classes.{name}.pref_speed"),
                    format!("{} exceeds max_speed {}", p.pref_speed, p.max_speed),
                ));
            }
        }
        for (i, r) in self.regions.iter().enumerate() {
            if !r.spawn.is_non_degenerate() {
                return Err(invalid(format!("regions[{i}].spawn"), "rectangle must have positive width and height"));
            }
            if !r.goal.is_non_degenerate() {
                return Err(invalid(format!("regions[{i}].goal"), "rectangle must have positive width and height"));
            }
        }

        self.warnings.clear();
        for (a, b) in self.responsibility.guarantee_violations() {
            let sum = self.responsibility.get(a, b) + self.responsibility.get(b, a);
            self.warnings.push(format!(
                "responsibility {}/{} sums to {sum} < 1; collision-free motion is not guaranteed for this pair",
                a.as_str(),
                b.as_str()
            ));
        }
        Ok(())
    }

    /// Minimum centre distance required between two spawned agents.
    pub fn spawn_separation(&self, a: AgentClass, b: AgentClass) -> f64 {
        let (pa, pb) = (self.class_params(a), self.class_params(b));
        pa.radius + pb.radius + self.clearance_time * pa.pref_speed.max(pb.pref_speed)
    }
}

/// Upper bound on how many points with pairwise distance `sep` fit in a
/// `width` x `height` rectangle (Oler's packing inequality).
pub fn packing_capacity(width: f64, height: f64, sep: f64) -> usize {
    let bound = 2.0 / 3f64.sqrt() * width * height / (sep * sep) + (width + height) / sep + 1.0;
    bound.floor() as usize
}

/// Rejection sampler that keeps a spatial hash of already placed discs so
/// that new points respect a pairwise minimum distance.
pub(crate) struct SpawnSampler {
    cell_size: f64,
    cells: HashMap<CellCoord, Vec<(Vec2, usize)>>,
    // separation[a][b] between group keys a and b
    separation: Vec<Vec<f64>>,
}

impl SpawnSampler {
    /// `separation[a][b]` is the minimum distance between a point of group
    /// `a` and a point of group `b`.
    pub(crate) fn new(separation: Vec<Vec<f64>>) -> Self {
        let cell_size = separation.iter().flatten().copied().fold(0.0, f64::max).max(1e-6);
        SpawnSampler { cell_size, cells: HashMap::new(), separation }
    }

    fn fits(&self, p: Vec2, group: usize) -> bool {
        let (cx, cy) = cell_coord(p, Vec2::ZERO, self.cell_size);
        for x in cx - 1..=cx + 1 {
            for y in cy - 1..=cy + 1 {
                if let Some(points) = self.cells.get(&(x, y)) {
                    for &(q, other) in points {
                        let sep = self.separation[group][other];
                        if (p - q).length_squared() < sep * sep {
                            return false;
                        }
                    }
                }
            }
        }
        true
    }

    /// Places `count` points of `group` uniformly inside `region`. On failure
    /// returns how many were placed.
    pub(crate) fn place(
        &mut self,
        region: &Rect,
        count: usize,
        group: usize,
        rng: &mut impl Rng,
    ) -> Result<Vec<Vec2>, usize> {
        let mut placed = Vec::with_capacity(count);
        while placed.len() < count {
            let mut accepted = None;
            for _ in 0..MAX_SPAWN_ATTEMPTS {
                let p = uniform_point(region, rng);
                if self.fits(p, group) {
                    accepted = Some(p);
                    break;
                }
            }
            let Some(p) = accepted else { return Err(placed.len()) };
            self.cells.entry(cell_coord(p, Vec2::ZERO, self.cell_size)).or_default().push((p, group));
            placed.push(p);
        }
        Ok(placed)
    }
}

pub fn uniform_point(region: &Rect, rng: &mut impl Rng) -> Vec2 {
    Vec2::new(
        region.min.x + rng.random::<f64>() * region.width(),
        region.min.y + rng.random::<f64>() * region.height(),
    )
}

/// Samples `count` points in `region` whose pairwise distances are at least
/// `2 * radius + pref_speed * clearance_time`.
pub fn sample_spawns(
    region: &Rect,
    count: usize,
    radius: f64,
    pref_speed: f64,
    clearance_time: f64,
    rng: &mut impl Rng,
) -> Result<Vec<Vec2>, ScenarioError> {
    if !region.is_non_degenerate() {
        return Err(invalid("region", "rectangle must have positive width and height"));
    }
    require_positive("radius", radius)?;
    require_positive("pref_speed", pref_speed)?;
    if !(clearance_time.is_finite() && clearance_time >= 0.0) {
        return Err(invalid("clearance_time", format!("must be non-negative, got {clearance_time}")));
    }
    let sep = 2.0 * radius + pref_speed * clearance_time;
    let capacity = packing_capacity(region.width(), region.height(), sep);
    if count > capacity {
        return Err(ScenarioError::RegionTooDense { requested: count, capacity });
    }
    let mut sampler = SpawnSampler::new(vec![vec![sep]]);
    sampler
        .place(region, count, 0, rng)
        .map_err(|placed| ScenarioError::SpawnFailed { region: None, placed, requested: count })
}
