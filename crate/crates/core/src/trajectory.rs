//! Trajectory and run-summary files.
//!
//! Trajectories are comma-separated text with one row per (frame, agent):
//!
//! ```text
//! # goal,<agent_id>,<x>,<y>        (optional preamble, one line per agent)
//! frame,time,agent_id,class,x,y,vx,vy,radius
//! 1,0.1,0,pedestrian,-23.86,1.5,1.4,0,0.25
//! ```
//!
//! Floats are written in shortest round-trip form, so reading a file back
//! reproduces every value bit for bit. All files are written to a temporary
//! file in the destination directory and renamed into place.

use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec2;
use crate::orca::{AgentClass, AgentId, AgentState};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentSample {
    pub id: AgentId,
    pub class: AgentClass,
    pub position: Vec2,
    pub velocity: Vec2,
    pub radius: f64,
}

impl From<&AgentState> for AgentSample {
    fn from(a: &AgentState) -> Self {
        AgentSample { id: a.id, class: a.class, position: a.position, velocity: a.velocity, radius: a.radius }
    }
}

/// Agent states at the end of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameLog {
    pub frame: u64,
    pub time: f64,
    pub agents: Vec<AgentSample>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GoalRecord {
    pub id: AgentId,
    pub goal: Vec2,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrajectoryFile {
    pub goals: Vec<GoalRecord>,
    pub frames: Vec<FrameLog>,
}

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed file: {0}")]
    Format(String),
}

pub const TRAJECTORY_HEADER: &str = "frame,time,agent_id,class,x,y,vx,vy,radius";

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    frame: u64,
    time: f64,
    agent_id: u32,
    class: AgentClass,
    x: f64,
    y: f64,
    vx: f64,
    vy: f64,
    radius: f64,
}

/// Streams frames to a writer in the trajectory format.
pub struct TrajectoryWriter<W: Write> {
    csv: csv::Writer<W>,
}

impl<W: Write> TrajectoryWriter<W> {
    pub fn new(mut inner: W, goals: &[GoalRecord]) -> io::Result<Self> {
        for g in goals {
            writeln!(inner, "# goal,{},{},{}", g.id.0, g.goal.x, g.goal.y)?;
        }
        writeln!(inner, "{TRAJECTORY_HEADER}")?;
        Ok(TrajectoryWriter { csv: csv::WriterBuilder::new().has_headers(false).from_writer(inner) })
    }

    pub fn write_frame(&mut self, log: &FrameLog) -> Result<(), TrajectoryError> {
        for a in &log.agents {
            self.csv.serialize(Row {
                frame: log.frame,
                time: log.time,
                agent_id: a.id.0,
                class: a.class,
                x: a.position.x,
                y: a.position.y,
                vx: a.velocity.x,
                vy: a.velocity.y,
                radius: a.radius,
            })?;
        }
        Ok(())
    }

    pub fn finish(self) -> Result<W, TrajectoryError> {
        self.csv.into_inner().map_err(|e| TrajectoryError::Io(e.into_error()))
    }
}

/// Writes `contents` to `path` through a temporary sibling file.
pub fn write_atomically<F, E>(path: &Path, contents: F) -> Result<(), E>
where
    F: FnOnce(&mut BufWriter<&File>) -> Result<(), E>,
    E: From<io::Error>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        contents(&mut w)?;
        w.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

pub fn write_trajectories(logs: &[FrameLog], path: &Path) -> Result<(), TrajectoryError> {
    write_trajectory_file(&[], logs, path)
}

pub fn write_trajectory_file(goals: &[GoalRecord], logs: &[FrameLog], path: &Path) -> Result<(), TrajectoryError> {
    write_atomically(path, |w| {
        let mut writer = TrajectoryWriter::new(w, goals)?;
        for log in logs {
            writer.write_frame(log)?;
        }
        writer.finish()?;
        Ok(())
    })
}

pub fn read_trajectories(path: &Path) -> Result<Vec<FrameLog>, TrajectoryError> {
    Ok(read_trajectory_file(path)?.frames)
}

pub fn read_trajectory_file(path: &Path) -> Result<TrajectoryFile, TrajectoryError> {
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    parse_trajectories(&text)
}

pub fn parse_trajectories(text: &str) -> Result<TrajectoryFile, TrajectoryError> {
    let mut goals = Vec::new();
    for line in text.lines().take_while(|l| l.starts_with('#')) {
        let Some(rest) = line.strip_prefix("# goal,") else { continue };
        let fields: Vec<&str> = rest.split(',').collect();
        let bad = || TrajectoryError::Format(format!("bad goal line `{line}`"));
        if fields.len() != 3 {
            return Err(bad());
        }
        goals.push(GoalRecord {
            id: AgentId(fields[0].parse().map_err(|_| bad())?),
            goal: Vec2::new(fields[1].parse().map_err(|_| bad())?, fields[2].parse().map_err(|_| bad())?),
        });
    }

    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    if header.join(",") != TRAJECTORY_HEADER {
        return Err(TrajectoryError::Format(format!("unexpected header `{}`", header.join(","))));
    }

    let mut frames: Vec<FrameLog> = Vec::new();
    for row in reader.deserialize() {
        let row: Row = row?;
        let sample = AgentSample {
            id: AgentId(row.agent_id),
            class: row.class,
            position: Vec2::new(row.x, row.y),
            velocity: Vec2::new(row.vx, row.vy),
            radius: row.radius,
        };
        match frames.last_mut() {
            Some(last) if last.frame == row.frame => {
                if last.time.to_bits() != row.time.to_bits() {
                    return Err(TrajectoryError::Format(format!("frame {} has inconsistent times", row.frame)));
                }
                last.agents.push(sample);
            }
            Some(last) if last.frame > row.frame => {
                return Err(TrajectoryError::Format(format!("frame {} appears after frame {}", row.frame, last.frame)));
            }
            _ => frames.push(FrameLog { frame: row.frame, time: row.time, agents: vec![sample] }),
        }
    }
    Ok(TrajectoryFile { goals, frames })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(id: u32, x: f64) -> AgentSample {
        AgentSample {
            id: AgentId(id),
            class: AgentClass::Vehicle,
            position: Vec2::new(x, -x / 3.0),
            velocity: Vec2::new(0.1, 1e-300),
            radius: 1.0,
        }
    }

    fn to_text(goals: &[GoalRecord], logs: &[FrameLog]) -> String {
        let mut w = TrajectoryWriter::new(Vec::new(), goals).unwrap();
        for l in logs {
            w.write_frame(l).unwrap();
        }
        String::from_utf8(w.finish().unwrap()).unwrap()
    }

    #[test]
    fn empty_log_is_header_only() {
        assert_eq!(to_text(&[], &[]), format!("{TRAJECTORY_HEADER}\n"));
        assert_eq!(parse_trajectories(&to_text(&[], &[])).unwrap(), TrajectoryFile::default());
    }

    #[test]
    fn one_row_matches_grammar() {
        let logs = [FrameLog { frame: 1, time: 0.1, agents: vec![sample(3, 2.5)] }];
        let text = to_text(&[], &logs);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        let fields: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(fields.len(), 9);
        assert_eq!(&fields[..4], &["1", "0.1", "3", "vehicle"]);
        assert_eq!(fields[4].parse::<f64>().unwrap(), 2.5);
        assert_eq!(fields[8], "1.0");
    }

    #[test]
    fn goals_round_trip_in_preamble() {
        let goals = [GoalRecord { id: AgentId(0), goal: Vec2::new(1.0 / 3.0, -7.25) }];
        let logs = [FrameLog { frame: 4, time: 0.4, agents: vec![sample(0, 0.1), sample(1, 0.2)] }];
        let parsed = parse_trajectories(&to_text(&goals, &logs)).unwrap();
        assert_eq!(parsed.goals, goals);
        assert_eq!(parsed.frames, logs);
    }

    #[test]
    fn rejects_out_of_order_frames() {
        let text = format!("{TRAJECTORY_HEADER}\n2,0.2,0,pedestrian,0,0,0,0,1\n1,0.1,0,pedestrian,0,0,0,0,1\n");
        assert!(matches!(parse_trajectories(&text), Err(TrajectoryError::Format(_))));
    }
}
