//! Uniform-grid spatial index, rebuilt every frame.
//!
//! Cells are stored sparsely: occupied cells sorted by coordinate, each
//! pointing at a run of agent indices. Lookups binary-search the cell list.

use std::collections::HashMap;
use std::ops::Range;

use thiserror::Error;

use crate::geometry::Vec2;
use crate::orca::{AgentId, AgentState};

pub type CellCoord = (i64, i64);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("cell size must be positive and finite, got {0}")]
    InvalidCellSize(f64),
    #[error("agent {0} has a non-finite position")]
    NonFinitePosition(AgentId),
    #[error("agent {0} appears more than once")]
    DuplicateId(AgentId),
    #[error("agent {0} is not in the grid")]
    UnknownAgent(AgentId),
    #[error("query radius must be positive and finite, got {0}")]
    InvalidRadius(f64),
}

#[derive(Debug, Clone)]
struct Cell {
    coord: CellCoord,
    members: Range<usize>,
}

#[derive(Debug, Clone)]
pub struct UniformGrid {
    cell_size: f64,
    origin: Vec2,
    cells: Vec<Cell>,
    // Agent indices (into the slice the grid was built from), grouped by cell.
    members: Vec<usize>,
    ids: Vec<AgentId>,
    index_of: HashMap<AgentId, usize>,
}

impl UniformGrid {
    /// Builds the grid over `agents` with the origin at (0, 0).
    pub fn rebuild(agents: &[AgentState], cell_size: f64) -> Result<Self, GridError> {
        Self::rebuild_with_origin(agents, cell_size, Vec2::ZERO)
    }

    pub fn rebuild_with_origin(agents: &[AgentState], cell_size: f64, origin: Vec2) -> Result<Self, GridError> {
        if !(cell_size.is_finite() && cell_size > 0.0) {
            return Err(GridError::InvalidCellSize(cell_size));
        }
        let mut keyed = Vec::with_capacity(agents.len());
        let mut index_of = HashMap::with_capacity(agents.len());
        for (i, a) in agents.iter().enumerate() {
            if !a.position.is_finite() {
                return Err(GridError::NonFinitePosition(a.id));
            }
            if index_of.insert(a.id, i).is_some() {
                return Err(GridError::DuplicateId(a.id));
            }
            keyed.push((cell_coord(a.position, origin, cell_size), i));
        }
        keyed.sort_unstable();

        let mut cells: Vec<Cell> = Vec::new();
        let mut members = Vec::with_capacity(keyed.len());
        for (k, &(coord, idx)) in keyed.iter().enumerate() {
            match cells.last_mut() {
                Some(cell) if cell.coord == coord => cell.members.end = k + 1,
                _ => cells.push(Cell { coord, members: k..k + 1 }),
            }
            members.push(idx);
        }

        Ok(UniformGrid {
            cell_size,
            origin,
            cells,
            members,
            ids: agents.iter().map(|a| a.id).collect(),
            index_of,
        })
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn origin(&self) -> Vec2 {
        self.origin
    }

    pub fn population(&self) -> usize {
        self.members.len()
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    /// Occupied cells with the ids they hold, in coordinate order.
    pub fn cells(&self) -> impl Iterator<Item = (CellCoord, Vec<AgentId>)> + '_ {
        self.cells
            .iter()
            .map(|c| (c.coord, self.members[c.members.clone()].iter().map(|&i| self.ids[i]).collect()))
    }

    pub fn cell_of_point(&self, p: Vec2) -> CellCoord {
        cell_coord(p, self.origin, self.cell_size)
    }

    pub fn index_of(&self, id: AgentId) -> Option<usize> {
        self.index_of.get(&id).copied()
    }

    fn cell_members(&self, coord: CellCoord) -> &[usize] {
        match self.cells.binary_search_by(|c| c.coord.cmp(&coord)) {
            Ok(k) => &self.members[self.cells[k].members.clone()],
            Err(_) => &[],
        }
    }

    /// Up to `max_count` agents within `radius` of `self_id` (centre
    /// distance, inclusive), nearest first, ties broken by id.
    pub fn query_neighbors<'a>(
        &self,
        agents: &'a [AgentState],
        self_id: AgentId,
        radius: f64,
        max_count: usize,
    ) -> Result<Vec<&'a AgentState>, GridError> {
        let index = self.index_of(self_id).ok_or(GridError::UnknownAgent(self_id))?;
        if !(radius.is_finite() && radius > 0.0) {
            return Err(GridError::InvalidRadius(radius));
        }
        let mut scratch = Vec::new();
        self.neighbor_indices(agents, index, radius, max_count, &mut scratch);
        Ok(scratch.into_iter().map(|(_, _, i)| &agents[i]).collect())
    }

    /// Index-based form of [`Self::query_neighbors`]. `agents` must be the
    /// slice the grid was built from. Results land in `out` as
    /// `(distance_sq, id, index)`.
    pub fn neighbor_indices(
        &self,
        agents: &[AgentState],
        index: usize,
        radius: f64,
        max_count: usize,
        out: &mut Vec<(f64, AgentId, usize)>,
    ) {
        out.clear();
        if max_count == 0 {
            return;
        }
        self.for_each_within(agents, index, radius, |j, d_sq| out.push((d_sq, agents[j].id, j)));
        let by_distance = |a: &(f64, AgentId, usize), b: &(f64, AgentId, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if out.len() > max_count {
            out.select_nth_unstable_by(max_count - 1, by_distance);
            out.truncate(max_count);
        }
        out.sort_unstable_by(by_distance);
    }
}

impl UniformGrid {
    /// Calls `visit(j, distance_sq)` for every other agent within `radius`
    /// of `agents[index]`, in cell order.
    pub fn for_each_within(
        &self,
        agents: &[AgentState],
        index: usize,
        radius: f64,
        mut visit: impl FnMut(usize, f64),
    ) {
        let centre = agents[index].position;
        let radius_sq = radius * radius;
        let (x0, y0) = self.cell_of_point(centre - Vec2::new(radius, radius));
        let (x1, y1) = self.cell_of_point(centre + Vec2::new(radius, radius));
        for cx in x0..=x1 {
            for cy in y0..=y1 {
                for &j in self.cell_members((cx, cy)) {
                    if j == index {
                        continue;
                    }
                    let d_sq = (agents[j].position - centre).length_squared();
                    if d_sq <= radius_sq {
                        visit(j, d_sq);
                    }
                }
            }
        }
    }
}

pub fn cell_coord(p: Vec2, origin: Vec2, cell_size: f64) -> CellCoord {
    (((p.x - origin.x) / cell_size).floor() as i64, ((p.y - origin.y) / cell_size).floor() as i64)
}
