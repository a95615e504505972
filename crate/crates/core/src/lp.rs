//! Batch solver for the per-agent velocity programs.
//!
//! Each program asks for the velocity closest to a target that lies inside a
//! speed disc and a set of half-planes. It is solved with a randomized
//! incremental algorithm: constraints are inserted one at a time in a seeded
//! shuffled order, and whenever the current optimum violates the inserted
//! constraint the new optimum is found on that constraint's boundary line by
//! a one-dimensional solve against the constraints seen so far.
//!
//! When the half-planes have an empty intersection inside the disc, the
//! solver falls back to the velocity that minimizes the largest constraint
//! violation. That problem is lifted to three variables (velocity plus
//! violation depth) and solved incrementally in the same fashion, projecting
//! the previous constraints onto the plane where the newly violated
//! constraint is the deepest one.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geometry::Vec2;
use crate::work;

/// Slack within which a `Feasible` result satisfies every constraint.
pub const FEASIBILITY_SLACK: f64 = 1e-7;
/// Slack for unit-normal checks and the speed disc.
pub const NORMALIZATION_SLACK: f64 = 1e-9;
/// Default number of constraint insertions per batch work unit.
pub const DEFAULT_WORK_UNIT: usize = 64;

// Boundary lines whose directions differ by less than this sine are parallel.
const PARALLEL_EPS: f64 = 1e-12;
// Extra relaxation when searching the optimal-depth set for the point
// nearest the warm start; absorbs rounding in the computed depth.
const TIE_BREAK_SLACK: f64 = 1e-12;
// Allowed overlap mismatch when intersecting parameter intervals on a line.
const INTERVAL_EPS: f64 = 1e-12;

/// A half-plane of permitted velocities: `v` is permitted iff
/// `dot(v - boundary_point, outward_normal) >= 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfPlaneConstraint {
    pub boundary_point: Vec2,
    pub outward_normal: Vec2,
}

impl HalfPlaneConstraint {
    /// Builds a constraint, normalizing `normal`. Panics on a zero normal.
    pub fn new(boundary_point: Vec2, normal: Vec2) -> Self {
        let outward_normal = normal.normalized().expect("constraint normal must be non-zero");
        HalfPlaneConstraint { boundary_point, outward_normal }
    }

    /// Positive inside the permitted half-plane.
    #[inline]
    pub fn signed_distance(&self, v: Vec2) -> f64 {
        (v - self.boundary_point).dot(self.outward_normal)
    }

    /// How far `v` penetrates the forbidden side (negative when permitted).
    #[inline]
    pub fn violation(&self, v: Vec2) -> f64 {
        (self.boundary_point - v).dot(self.outward_normal)
    }

    #[inline]
    pub fn contains(&self, v: Vec2, slack: f64) -> bool {
        self.signed_distance(v) >= -slack
    }

    /// The same constraint with its boundary pushed `depth` against the
    /// normal.
    fn relaxed(&self, depth: f64) -> Self {
        HalfPlaneConstraint {
            boundary_point: self.boundary_point - self.outward_normal * depth,
            outward_normal: self.outward_normal,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpProblem {
    pub constraints: Vec<HalfPlaneConstraint>,
    /// Desired velocity.
    pub target: Vec2,
    /// Radius of the speed disc `|v| <= speed_cap`.
    pub speed_cap: f64,
    /// Seeds the constraint insertion order.
    pub shuffle_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Feasible,
    FallbackUsed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LpResult {
    pub velocity: Vec2,
    pub status: LpStatus,
    /// Original index of the constraint whose insertion emptied the
    /// feasible region.
    pub failed_at: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LpError {
    #[error("speed cap must be positive and finite, got {0}")]
    InvalidSpeedCap(f64),
    #[error("target velocity is not finite")]
    NonFiniteTarget,
    #[error("warm start velocity is not finite")]
    NonFiniteWarmStart,
    #[error("constraint {index} has a non-finite coordinate")]
    NonFiniteConstraint { index: usize },
    #[error("constraint {index} normal has length {length}, expected 1")]
    NonUnitNormal { index: usize, length: f64 },
    #[error("start index {start} is out of range for {len} constraints")]
    StartOutOfRange { start: usize, len: usize },
    #[error("worker count must be at least 1")]
    NoWorkers,
    #[error("problem {index}: {source}")]
    InProblem {
        index: usize,
        #[source]
        source: Box<LpError>,
    },
}

fn validate_constraints(constraints: &[HalfPlaneConstraint]) -> Result<(), LpError> {
    for (index, c) in constraints.iter().enumerate() {
        if !c.boundary_point.is_finite() || !c.outward_normal.is_finite() {
            return Err(LpError::NonFiniteConstraint { index });
        }
        let length = c.outward_normal.length();
        if (length - 1.0).abs() > NORMALIZATION_SLACK {
            return Err(LpError::NonUnitNormal { index, length });
        }
    }
    Ok(())
}

fn validate_cap(speed_cap: f64) -> Result<(), LpError> {
    if speed_cap.is_finite() && speed_cap > 0.0 {
        Ok(())
    } else {
        Err(LpError::InvalidSpeedCap(speed_cap))
    }
}

impl LpProblem {
    pub fn validate(&self) -> Result<(), LpError> {
        validate_cap(self.speed_cap)?;
        if !self.target.is_finite() {
            return Err(LpError::NonFiniteTarget);
        }
        validate_constraints(&self.constraints)
    }

    /// The seeded insertion order, as original constraint indices.
    pub fn insertion_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.constraints.len()).collect();
        if order.len() > 1 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.shuffle_seed);
            order.shuffle(&mut rng);
        }
        order
    }
}

/// Returns the point of the feasible region closest to the target, or the
/// least-penetrating velocity when the region is empty.
pub fn solve_closest_point(problem: &LpProblem) -> Result<LpResult, LpError> {
    problem.validate()?;
    let cap = problem.speed_cap;
    if problem.constraints.is_empty() {
        return Ok(LpResult {
            velocity: problem.target.clamp_length(cap),
            status: LpStatus::Feasible,
            failed_at: None,
        });
    }

    let order = problem.insertion_order();
    let lines: Vec<HalfPlaneConstraint> = order.iter().map(|&i| problem.constraints[i]).collect();

    match closest_point_incremental(&lines, problem.target, cap) {
        Incremental::Feasible(velocity) => Ok(LpResult { velocity, status: LpStatus::Feasible, failed_at: None }),
        Incremental::Infeasible { failed, partial } => Ok(LpResult {
            velocity: least_penetration_unchecked(&lines, cap, failed, partial),
            status: LpStatus::FallbackUsed,
            failed_at: Some(order[failed]),
        }),
    }
}

/// Returns the velocity in the speed disc minimizing the worst violation
/// `max(0, max_i dot(boundary_point_i - v, outward_normal_i))`. Among
/// minimizers the one closest to `warm_start` is returned.
///
/// Constraints before `start_index` are assumed satisfied by `warm_start`;
/// if they are not, the solve starts from the first violated one instead.
pub fn solve_least_penetration(
    constraints: &[HalfPlaneConstraint],
    speed_cap: f64,
    start_index: usize,
    warm_start: Vec2,
) -> Result<Vec2, LpError> {
    validate_cap(speed_cap)?;
    validate_constraints(constraints)?;
    if !warm_start.is_finite() {
        return Err(LpError::NonFiniteWarmStart);
    }
    if start_index > constraints.len() {
        return Err(LpError::StartOutOfRange { start: start_index, len: constraints.len() });
    }
    let warm_start = warm_start.clamp_length(speed_cap);
    let start = constraints[..start_index]
        .iter()
        .position(|c| c.signed_distance(warm_start) < 0.0)
        .unwrap_or(start_index);
    Ok(least_penetration_unchecked(constraints, speed_cap, start, warm_start))
}

/// Solves every problem, splitting the work into units of roughly
/// [`DEFAULT_WORK_UNIT`] constraint insertions spread over `worker_count`
/// threads. The output is identical to mapping [`solve_closest_point`] over
/// the problems sequentially.
pub fn solve_batch(problems: &[LpProblem], worker_count: usize) -> Result<Vec<LpResult>, LpError> {
    solve_batch_with_unit(problems, worker_count, DEFAULT_WORK_UNIT)
}

pub fn solve_batch_with_unit(
    problems: &[LpProblem],
    worker_count: usize,
    unit_insertions: usize,
) -> Result<Vec<LpResult>, LpError> {
    if worker_count == 0 {
        return Err(LpError::NoWorkers);
    }
    let units = work::units_by_cost(problems.len(), unit_insertions, |i| problems[i].constraints.len());
    let mut slots: Vec<Option<Result<LpResult, LpError>>> = vec![None; problems.len()];
    work::fill_units(&mut slots, &units, worker_count, |i| Some(solve_closest_point(&problems[i])));

    slots
        .into_iter()
        .enumerate()
        .map(|(index, slot)| {
            slot.expect("every slot is filled")
                .map_err(|source| LpError::InProblem { index, source: Box::new(source) })
        })
        .collect()
}

enum Incremental {
    Feasible(Vec2),
    Infeasible { failed: usize, partial: Vec2 },
}

#[derive(Clone, Copy)]
enum Objective {
    /// Closest point to the given velocity.
    Closest(Vec2),
    /// Furthest point along the given unit direction.
    Direction(Vec2),
}

fn closest_point_incremental(lines: &[HalfPlaneConstraint], target: Vec2, cap: f64) -> Incremental {
    let mut v = target.clamp_length(cap);
    for (i, line) in lines.iter().enumerate() {
        if line.signed_distance(v) < 0.0 {
            match optimum_on_boundary(lines, i, cap, Objective::Closest(target)) {
                Some(w) => v = w,
                None => return Incremental::Infeasible { failed: i, partial: v },
            }
        }
    }
    Incremental::Feasible(v)
}

fn furthest_incremental(lines: &[HalfPlaneConstraint], direction: Vec2, cap: f64) -> Option<Vec2> {
    let mut v = direction * cap;
    for (i, line) in lines.iter().enumerate() {
        if line.signed_distance(v) < 0.0 {
            v = optimum_on_boundary(lines, i, cap, Objective::Direction(direction))?;
        }
    }
    Some(v)
}

/// Optimizes along the boundary line of `lines[index]`, restricted to the
/// speed disc and to the half-planes `lines[..index]`. `None` when that
/// segment is empty.
fn optimum_on_boundary(lines: &[HalfPlaneConstraint], index: usize, cap: f64, objective: Objective) -> Option<Vec2> {
    let line = &lines[index];
    let origin = line.boundary_point;
    let along = line.outward_normal.perp();

    // Chord of the speed disc: |origin + t * along| <= cap.
    let proj = origin.dot(along);
    let discriminant = proj * proj + cap * cap - origin.length_squared();
    if discriminant < 0.0 {
        return None;
    }
    let half_chord = discriminant.sqrt();
    let mut t_lo = -proj - half_chord;
    let mut t_hi = -proj + half_chord;

    for prev in &lines[..index] {
        // Signed distance of origin + t * along from prev is t * denom - numer.
        let denom = along.dot(prev.outward_normal);
        let numer = (prev.boundary_point - origin).dot(prev.outward_normal);
        if denom.abs() <= PARALLEL_EPS {
            if numer > INTERVAL_EPS {
                return None;
            }
            continue;
        }
        let t = numer / denom;
        if denom > 0.0 {
            t_lo = t_lo.max(t);
        } else {
            t_hi = t_hi.min(t);
        }
        if t_lo > t_hi + INTERVAL_EPS {
            return None;
        }
    }
    if t_lo > t_hi {
        let mid = 0.5 * (t_lo + t_hi);
        t_lo = mid;
        t_hi = mid;
    }

    let t = match objective {
        Objective::Closest(target) => (target - origin).dot(along).clamp(t_lo, t_hi),
        Objective::Direction(direction) => {
            let slope = direction.dot(along);
            if slope > 0.0 {
                t_hi
            } else if slope < 0.0 {
                t_lo
            } else {
                // Objective is flat along this line; take the point nearest
                // the disc centre.
                (-proj).clamp(t_lo, t_hi)
            }
        }
    };
    Some(origin + along * t)
}

/// Incremental minimization of the worst violation, followed by a
/// tie-breaking pass toward `warm_start`. `lines[..start]` must be satisfied
/// by `warm_start`, which must lie in the disc.
fn least_penetration_unchecked(lines: &[HalfPlaneConstraint], cap: f64, start: usize, warm_start: Vec2) -> Vec2 {
    let mut v = warm_start;
    let mut depth = 0.0_f64;
    let mut lifted: Vec<HalfPlaneConstraint> = Vec::with_capacity(lines.len());

    for i in start..lines.len() {
        let line = &lines[i];
        if line.violation(v) <= depth {
            continue;
        }
        // Velocities where no earlier constraint is violated more than
        // this one: dot(v, n_j - n_i) >= p_j.n_j - p_i.n_i.
        let offset_i = line.boundary_point.dot(line.outward_normal);
        lifted.clear();
        for prev in &lines[..i] {
            let diff = prev.outward_normal - line.outward_normal;
            let len = diff.length();
            if len <= PARALLEL_EPS {
                // Same orientation: the violation gap is constant, so this
                // pair never restricts where `line` is deepest.
                continue;
            }
            let normal = diff / len;
            let rhs = (prev.boundary_point.dot(prev.outward_normal) - offset_i) / len;
            lifted.push(HalfPlaneConstraint { boundary_point: normal * rhs, outward_normal: normal });
        }
        // Minimizing this line's violation means moving along its normal.
        // Failure here can only come from rounding; the current velocity is
        // then kept, as it is already within the lifted region.
        if let Some(w) = furthest_incremental(&lifted, line.outward_normal, cap) {
            v = w;
        }
        depth = line.violation(v);
    }

    // Among all velocities reaching the optimal depth, prefer the one closest
    // to the warm start.
    let depth = depth.max(0.0);
    let slack = TIE_BREAK_SLACK * (1.0 + depth);
    let relaxed: Vec<HalfPlaneConstraint> = lines.iter().map(|c| c.relaxed(depth + slack)).collect();
    match closest_point_incremental(&relaxed, warm_start, cap) {
        Incremental::Feasible(w) => w,
        Incremental::Infeasible { .. } => v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hp(px: f64, py: f64, nx: f64, ny: f64) -> HalfPlaneConstraint {
        HalfPlaneConstraint::new(Vec2::new(px, py), Vec2::new(nx, ny))
    }

    fn problem(constraints: Vec<HalfPlaneConstraint>, target: Vec2, cap: f64) -> LpProblem {
        LpProblem { constraints, target, speed_cap: cap, shuffle_seed: 7 }
    }

    fn close(a: Vec2, b: Vec2, tol: f64) -> bool {
        (a - b).length() <= tol
    }

    /// Brute-force search over a square grid covering the disc, followed by
    /// repeated local refinement around the incumbent. Returns the minimizer
    /// of `score` among points accepted by `admissible`.
    fn grid_argmin(cap: f64, admissible: impl Fn(Vec2) -> bool, score: impl Fn(Vec2) -> f64) -> Option<Vec2> {
        let mut best: Option<(f64, Vec2)> = None;
        let mut centre = Vec2::ZERO;
        let mut half = cap;
        for _ in 0..8 {
            let n = 400;
            let step = 2.0 * half / n as f64;
            for i in 0..=n {
                for j in 0..=n {
                    let v = Vec2::new(centre.x - half + i as f64 * step, centre.y - half + j as f64 * step);
                    if v.length() > cap || !admissible(v) {
                        continue;
                    }
                    let s = score(v);
                    if best.is_none_or(|(b, _)| s < b) {
                        best = Some((s, v));
                    }
                }
            }
            let (_, v) = best?;
            centre = v;
            half = 4.0 * step;
        }
        best.map(|(_, v)| v)
    }

    #[test]
    fn unconstrained_target_inside_disc() {
        let r = solve_closest_point(&problem(vec![], Vec2::new(1.0, 0.5), 2.0)).unwrap();
        assert_eq!(r.velocity, Vec2::new(1.0, 0.5));
        assert_eq!(r.status, LpStatus::Feasible);
        assert_eq!(r.failed_at, None);
    }

    #[test]
    fn unconstrained_target_projected_onto_disc() {
        let r = solve_closest_point(&problem(vec![], Vec2::new(3.0, 4.0), 2.5)).unwrap();
        assert!(close(r.velocity, Vec2::new(1.5, 2.0), 1e-12));
        assert_eq!(r.status, LpStatus::Feasible);
    }

    #[test]
    fn single_half_plane_projects_onto_line() {
        let c = hp(0.0, 1.0, 0.0, 1.0);
        let target = Vec2::new(0.7, 0.2);
        let oracle = grid_argmin(5.0, |v| c.contains(v, 0.0), |v| (v - target).length()).unwrap();
        assert!(close(oracle, Vec2::new(0.7, 1.0), 1e-5), "oracle {oracle:?}");

        let r = solve_closest_point(&problem(vec![c], target, 5.0)).unwrap();
        assert_eq!(r.status, LpStatus::Feasible);
        assert!(close(r.velocity, Vec2::new(0.7, 1.0), 1e-12));
    }

    #[test]
    fn least_penetration_on_feasible_band_clamps_warm_start() {
        // -1 <= y <= 1
        let band = [hp(0.0, 1.0, 0.0, -1.0), hp(0.0, -1.0, 0.0, 1.0)];
        let v = solve_least_penetration(&band, 5.0, 0, Vec2::new(0.5, 3.0)).unwrap();
        assert!(close(v, Vec2::new(0.5, 1.0), 1e-6), "{v:?}");
        let inside = solve_least_penetration(&band, 5.0, 0, Vec2::new(0.5, 0.25)).unwrap();
        assert!(close(inside, Vec2::new(0.5, 0.25), 1e-12));
    }

    #[test]
    fn least_penetration_splits_empty_band() {
        // y >= 1 and y <= -1
        let cs = [hp(0.0, 1.0, 0.0, 1.0), hp(0.0, -1.0, 0.0, -1.0)];
        let worst = |v: Vec2| cs.iter().map(|c| c.violation(v)).fold(0.0, f64::max);
        let oracle = grid_argmin(5.0, |_| true, |v| worst(v) + 1e-9 * (v - Vec2::new(0.3, 0.0)).length()).unwrap();
        assert!(oracle.y.abs() < 1e-5 && (worst(oracle) - 1.0).abs() < 1e-5);

        let v = solve_least_penetration(&cs, 5.0, 1, Vec2::new(0.3, 1.0)).unwrap();
        assert!(v.y.abs() < 1e-9, "{v:?}");
        assert!((worst(v) - 1.0).abs() < 1e-8);
        // Ties along x are broken toward the warm start.
        assert!((v.x - 0.3).abs() < 1e-6, "{v:?}");
    }

    #[test]
    fn least_penetration_three_fold_symmetry_picks_centre() {
        let cs: Vec<_> = [90.0_f64, 210.0, 330.0]
            .iter()
            .map(|deg| {
                let n = Vec2::new(deg.to_radians().cos(), deg.to_radians().sin());
                HalfPlaneConstraint::new(n, n)
            })
            .collect();
        let worst = |v: Vec2| cs.iter().map(|c| c.violation(v)).fold(0.0, f64::max);
        let oracle = grid_argmin(3.0, |_| true, worst).unwrap();
        assert!(oracle.length() < 1e-5, "oracle {oracle:?}");

        let v = solve_least_penetration(&cs, 3.0, 0, Vec2::new(0.4, -0.2)).unwrap();
        assert!(v.length() < 1e-6, "{v:?}");
        assert!((worst(v) - 1.0).abs() < 1e-8);

        let r = solve_closest_point(&problem(cs.clone(), Vec2::new(1.0, 1.0), 3.0)).unwrap();
        assert_eq!(r.status, LpStatus::FallbackUsed);
        assert!(r.velocity.length() < 1e-6);
        assert!(r.failed_at.is_some_and(|i| i < 3));
    }

    #[test]
    fn failed_at_reports_original_index() {
        // Only constraints 1 and 3 conflict; whatever the insertion order,
        // the constraint that empties the region is one of them.
        let cs = vec![
            hp(0.0, -3.0, 0.0, 1.0),
            hp(0.0, 1.0, 0.0, 1.0),
            hp(-3.0, 0.0, 1.0, 0.0),
            hp(0.0, -1.0, 0.0, -1.0),
        ];
        for seed in 0..32 {
            let p = LpProblem { shuffle_seed: seed, ..problem(cs.clone(), Vec2::ZERO, 4.0) };
            let r = solve_closest_point(&p).unwrap();
            assert_eq!(r.status, LpStatus::FallbackUsed);
            let order = p.insertion_order();
            let pos1 = order.iter().position(|&i| i == 1).unwrap();
            let pos3 = order.iter().position(|&i| i == 3).unwrap();
            assert_eq!(r.failed_at, Some(if pos1 > pos3 { 1 } else { 3 }));
        }
    }

    #[test]
    fn rejects_non_finite_inputs() {
        let mut bad = hp(0.0, 1.0, 0.0, 1.0);
        bad.boundary_point.x = f64::NAN;
        let p = problem(vec![hp(0.0, 0.0, 1.0, 0.0), bad], Vec2::ZERO, 1.0);
        assert_eq!(solve_closest_point(&p), Err(LpError::NonFiniteConstraint { index: 1 }));
        let p = problem(vec![], Vec2::new(f64::INFINITY, 0.0), 1.0);
        assert_eq!(solve_closest_point(&p), Err(LpError::NonFiniteTarget));
        let p = problem(vec![], Vec2::ZERO, 0.0);
        assert_eq!(solve_closest_point(&p), Err(LpError::InvalidSpeedCap(0.0)));
    }

    #[test]
    fn batch_reports_first_error_with_index() {
        let good = problem(vec![hp(0.0, 1.0, 0.0, 1.0)], Vec2::ZERO, 2.0);
        let bad = problem(vec![], Vec2::new(f64::NAN, 0.0), 2.0);
        let batch = vec![good.clone(), good.clone(), bad.clone(), good, bad];
        match solve_batch(&batch, 4) {
            Err(LpError::InProblem { index, source }) => {
                assert_eq!(index, 2);
                assert_eq!(*source, LpError::NonFiniteTarget);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(solve_batch(&[], 0), Err(LpError::NoWorkers));
    }

    #[test]
    fn singleton_and_duplicate_batches() {
        let p = problem(vec![hp(0.5, 0.0, -1.0, 0.2), hp(0.0, 0.3, 0.1, 1.0)], Vec2::new(1.0, -1.0), 1.5);
        let single = solve_batch(std::slice::from_ref(&p), 8).unwrap();
        assert_eq!(single, vec![solve_closest_point(&p).unwrap()]);
        let many = solve_batch(&vec![p.clone(); 300], 3).unwrap();
        assert!(many.iter().all(|r| *r == single[0]));
    }
}
