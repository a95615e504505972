//! Run-summary and benchmark tables.
//!
//! Both are comma-separated with a header row. The bench table starts with a
//! `# machine: ...` comment line describing the host.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::RunSummary;
use crate::trajectory::{write_atomically, TrajectoryError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SummaryRow {
    agents: usize,
    seed: u64,
    frames: u64,
    total_collisions: u64,
    min_separation: f64,
    mean_frame_ms: f64,
    p95_frame_ms: f64,
    fallbacks: u64,
    arrived: usize,
    remaining: usize,
    mean_travel_pedestrian_s: Option<f64>,
    mean_travel_vehicle_s: Option<f64>,
}

pub fn write_summary(summary: &RunSummary, path: &Path) -> Result<(), TrajectoryError> {
    let row = SummaryRow {
        agents: summary.agents,
        seed: summary.seed,
        frames: summary.frames,
        total_collisions: summary.total_collisions,
        min_separation: summary.min_separation,
        mean_frame_ms: summary.mean_frame_ms,
        p95_frame_ms: summary.p95_frame_ms,
        fallbacks: summary.fallback_count,
        arrived: summary.arrived,
        remaining: summary.remaining,
        mean_travel_pedestrian_s: summary.mean_travel_time[0],
        mean_travel_vehicle_s: summary.mean_travel_time[1],
    };
    write_atomically(path, |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.serialize(&row)?;
        csv.flush()?;
        Ok(())
    })
}

pub fn read_summary(path: &Path) -> Result<RunSummary, TrajectoryError> {
    let mut reader = csv::Reader::from_path(path)?;
    let row: SummaryRow = reader
        .deserialize()
        .next()
        .ok_or_else(|| TrajectoryError::Format("summary file has no record".into()))??;
    Ok(RunSummary {
        agents: row.agents,
        seed: row.seed,
        frames: row.frames,
        total_collisions: row.total_collisions,
        min_separation: row.min_separation,
        mean_frame_ms: row.mean_frame_ms,
        p95_frame_ms: row.p95_frame_ms,
        fallback_count: row.fallbacks,
        mean_travel_time: [row.mean_travel_pedestrian_s, row.mean_travel_vehicle_s],
        arrived: row.arrived,
        remaining: row.remaining,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub agent_count: usize,
    pub worker_count: usize,
    pub mean_ms: f64,
    pub p95_ms: f64,
    pub frames: u64,
    pub collisions: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    /// Sorted by `(agent_count, worker_count)`.
    pub rows: Vec<BenchRow>,
    pub machine: String,
}

pub const MACHINE_PREFIX: &str = "# machine: ";

impl BenchReport {
    pub fn to_text(&self) -> Result<String, TrajectoryError> {
        let mut out = format!("{MACHINE_PREFIX}{}\n", self.machine.replace('\n', " "));
        let mut csv = csv::Writer::from_writer(Vec::new());
        if self.rows.is_empty() {
            csv.write_record(["agent_count", "worker_count", "mean_ms", "p95_ms", "frames", "collisions"])?;
        }
        for row in &self.rows {
            csv.serialize(row)?;
        }
        let bytes = csv.into_inner().map_err(|e| TrajectoryError::Io(e.into_error()))?;
        out.push_str(&String::from_utf8(bytes).expect("csv output is utf-8"));
        Ok(out)
    }

    pub fn parse(text: &str) -> Result<Self, TrajectoryError> {
        let machine = text
            .lines()
            .next()
            .and_then(|l| l.strip_prefix(MACHINE_PREFIX))
            .ok_or_else(|| TrajectoryError::Format("missing machine descriptor".into()))?
            .to_owned();
        let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
        let rows = reader.deserialize().collect::<Result<Vec<BenchRow>, _>>()?;
        Ok(BenchReport { rows, machine })
    }

    pub fn write(&self, path: &Path) -> Result<(), TrajectoryError> {
        let text = self.to_text()?;
        write_atomically(path, |w| {
            use std::io::Write;
            w.write_all(text.as_bytes())?;
            Ok(())
        })
    }

    pub fn read(path: &Path) -> Result<Self, TrajectoryError> {
        Self::parse(&fs::read_to_string(path)?)
    }
}

/// OS, architecture and logical CPU count of this host.
pub fn machine_descriptor() -> String {
    let cpus = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    format!("{} {} with {cpus} logical cpus", std::env::consts::OS, std::env::consts::ARCH)
}
