//! A* path oracle on the inflated grid and one-step-lookahead expert labels.
//!
//! Every search tracks integer (straight, diagonal) move counts and recomputes
//! the f64 cost `s + √2·d` fresh at each comparison. Distinct count pairs at
//! grid scale never produce equal costs (√2 is irrational and the doubles
//! stay well below the rounding threshold), so optimal lengths come out
//! bit-identical across the A*, the goal-anchored flood fill, and any other
//! optimal planner using the same convention.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::f64::consts::SQRT_2;

use serde::{Deserialize, Serialize};

use crate::config::{ExpertConfig, PerceptConfig};
use crate::util::{self, ACTION_DIRS, STOP_ACTION};
use crate::world::{LidarScan, OccGrid, Point, RobotPose, WorldMap};
use crate::{percept, Error, Result};

/// 8-connected moves as (dx, dy, straight increment, diagonal increment).
const MOVES: [(i64, i64, u32, u32); 8] = [
    (1, 0, 1, 0),
    (-1, 0, 1, 0),
    (0, 1, 1, 0),
    (0, -1, 1, 0),
    (1, 1, 0, 1),
    (1, -1, 0, 1),
    (-1, 1, 0, 1),
    (-1, -1, 0, 1),
];

/// Cost of a move-count pair, as orderable bits (positive finite f64 only).
fn cost_bits(straight: u32, diagonal: u32) -> u64 {
    (straight as f64 + SQRT_2 * diagonal as f64).to_bits()
}

/// Path length in meters for a move-count pair.
pub fn steps_to_meters(resolution: f64, (straight, diagonal): (u32, u32)) -> f64 {
    resolution * (straight as f64 + SQRT_2 * diagonal as f64)
}

/// Optimal move counts from `start` to `goal`, octile-guided. None when no
/// path exists or an endpoint cell is occupied.
fn astar_steps(grid: &OccGrid, start: (usize, usize), goal: (usize, usize)) -> Option<(u32, u32)> {
    if grid.occupied(start.0, start.1) || grid.occupied(goal.0, goal.1) {
        return None;
    }
    let (nx, ny) = (grid.nx, grid.ny);
    let octile = |x: usize, y: usize| -> (u32, u32) {
        let ax = (x as i64 - goal.0 as i64).unsigned_abs() as u32;
        let ay = (y as i64 - goal.1 as i64).unsigned_abs() as u32;
        (ax.abs_diff(ay), ax.min(ay))
    };
    let mut best = vec![u64::MAX; nx * ny];
    let mut heap = BinaryHeap::new();
    let (hs, hd) = octile(start.0, start.1);
    best[start.1 * nx + start.0] = cost_bits(0, 0);
    heap.push(Reverse((cost_bits(hs, hd), start.0 as u32, start.1 as u32, 0u32, 0u32)));
    while let Some(Reverse((_, x, y, s, d))) = heap.pop() {
        let (x, y) = (x as usize, y as usize);
        if cost_bits(s, d) > best[y * nx + x] {
            continue;
        }
        if (x, y) == goal {
            return Some((s, d));
        }
        for &(dx, dy, ds, dd) in &MOVES {
            let (cx, cy) = (x as i64 + dx, y as i64 + dy);
            if cx < 0 || cy < 0 || cx >= nx as i64 || cy >= ny as i64 {
                continue;
            }
            let (cx, cy) = (cx as usize, cy as usize);
            if grid.occupied(cx, cy) {
                continue;
            }
            let (ns, nd) = (s + ds, d + dd);
            let g = cost_bits(ns, nd);
            if g < best[cy * nx + cx] {
                best[cy * nx + cx] = g;
                let (hs, hd) = octile(cx, cy);
                heap.push(Reverse((cost_bits(ns + hs, nd + hd), cx as u32, cy as u32, ns, nd)));
            }
        }
    }
    None
}

/// Optimal move counts from `source` to every free cell (uniform flood).
fn flood_steps(grid: &OccGrid, source: (usize, usize)) -> Vec<Option<(u32, u32)>> {
    let (nx, ny) = (grid.nx, grid.ny);
    let mut out: Vec<Option<(u32, u32)>> = vec![None; nx * ny];
    if grid.occupied(source.0, source.1) {
        return out;
    }
    let mut best = vec![u64::MAX; nx * ny];
    let mut heap = BinaryHeap::new();
    best[source.1 * nx + source.0] = cost_bits(0, 0);
    heap.push(Reverse((cost_bits(0, 0), source.0 as u32, source.1 as u32, 0u32, 0u32)));
    while let Some(Reverse((_, x, y, s, d))) = heap.pop() {
        let (x, y) = (x as usize, y as usize);
        if cost_bits(s, d) > best[y * nx + x] {
            continue;
        }
        out[y * nx + x] = Some((s, d));
        for &(dx, dy, ds, dd) in &MOVES {
            let (cx, cy) = (x as i64 + dx, y as i64 + dy);
            if cx < 0 || cy < 0 || cx >= nx as i64 || cy >= ny as i64 {
                continue;
            }
            let (cx, cy) = (cx as usize, cy as usize);
            if grid.occupied(cx, cy) {
                continue;
            }
            let (ns, nd) = (s + ds, d + dd);
            let g = cost_bits(ns, nd);
            if g < best[cy * nx + cx] {
                best[cy * nx + cx] = g;
                heap.push(Reverse((g, cx as u32, cy as u32, ns, nd)));
            }
        }
    }
    out
}

/// Shortest-path planner over an inflated occupancy grid.
#[derive(Debug, Clone)]
pub struct Planner {
    grid: OccGrid,
}

impl Planner {
    /// Plan on `world`'s grid inflated by the robot radius.
    pub fn new(world: &WorldMap, inflation: f64) -> Self {
        Self { grid: world.inflated_grid(inflation) }
    }

    /// Plan directly on a prebuilt grid.
    pub fn from_grid(grid: OccGrid) -> Self {
        Self { grid }
    }

    pub fn grid(&self) -> &OccGrid {
        &self.grid
    }

    /// Optimal (straight, diagonal) move counts between cells.
    pub fn steps_between_cells(
        &self,
        start: (usize, usize),
        goal: (usize, usize),
    ) -> Option<(u32, u32)> {
        astar_steps(&self.grid, start, goal)
    }

    /// Optimal move counts between the cells containing two points. None when
    /// a point is outside the grid, its cell is occupied, or no path exists.
    pub fn steps(&self, start: Point, goal: Point) -> Option<(u32, u32)> {
        let s = self.grid.cell_of(start)?;
        let g = self.grid.cell_of(goal)?;
        astar_steps(&self.grid, s, g)
    }

    /// Shortest path length in meters, straight moves costing one resolution
    /// and diagonal moves √2 of it.
    pub fn path_length(&self, start: Point, goal: Point) -> Option<f64> {
        self.steps(start, goal).map(|sd| steps_to_meters(self.grid.resolution, sd))
    }

    /// Distance field anchored at `goal`; None when the goal cell is blocked.
    pub fn field(&self, goal: Point) -> Option<DistanceField> {
        let g = self.grid.cell_of(goal)?;
        if self.grid.occupied(g.0, g.1) {
            return None;
        }
        Some(DistanceField {
            steps: flood_steps(&self.grid, g),
            nx: self.grid.nx,
            resolution: self.grid.resolution,
        })
    }
}

/// Optimal move counts from every free cell to a fixed goal cell. Grid moves
/// are symmetric, so lengths from the goal equal lengths to it and one flood
/// answers every query against that goal.
#[derive(Debug, Clone)]
pub struct DistanceField {
    steps: Vec<Option<(u32, u32)>>,
    nx: usize,
    resolution: f64,
}

impl DistanceField {
    pub fn steps_from(&self, (ix, iy): (usize, usize)) -> Option<(u32, u32)> {
        self.steps[iy * self.nx + ix]
    }

    pub fn length_from(&self, cell: (usize, usize)) -> Option<f64> {
        self.steps_from(cell).map(|sd| steps_to_meters(self.resolution, sd))
    }
}

/// One-step-lookahead expert: scores each movement direction by the stepped
/// A* path length and labels the argmin.
pub struct Expert<'a> {
    world: &'a WorldMap,
    planner: Planner,
    cfg: ExpertConfig,
}

impl<'a> Expert<'a> {
    pub fn new(world: &'a WorldMap, cfg: &ExpertConfig) -> Self {
        Self { world, planner: Planner::new(world, cfg.inflation), cfg: cfg.clone() }
    }

    pub fn planner(&self) -> &Planner {
        &self.planner
    }

    /// A* path length start → goal in meters; None when unreachable.
    pub fn path_length(&self, start: Point, goal: Point) -> Option<f64> {
        self.planner.path_length(start, goal)
    }

    fn action_lengths_via<F>(&self, pose: Point, remaining: F) -> [f64; 8]
    where
        F: Fn(Point) -> Option<f64>,
    {
        let mut out = [f64::INFINITY; 8];
        for (i, &(ux, uy)) in ACTION_DIRS.iter().enumerate() {
            let target =
                Point::new(pose.x + self.cfg.l_step * ux, pose.y + self.cfg.l_step * uy);
            if self.world.segment_collides(pose, target, self.cfg.inflation) {
                continue;
            }
            if let Some(rest) = remaining(target) {
                out[i] = self.cfg.l_step + rest;
            }
        }
        out
    }

    /// Estimated total path length through each one-step move; +∞ marks a
    /// colliding step or an unreachable post-step position.
    pub fn action_lengths(&self, pose: Point, goal: Point) -> [f64; 8] {
        self.action_lengths_via(pose, |p| self.planner.path_length(p, goal))
    }

    /// Same estimates answered from a precomputed field for the same goal.
    pub fn action_lengths_field(&self, pose: Point, field: &DistanceField) -> [f64; 8] {
        self.action_lengths_via(pose, |p| {
            self.planner.grid.cell_of(p).and_then(|c| field.length_from(c))
        })
    }

    /// Expert label: stop once the goal is within `goal_tolerance`, else the
    /// direction with the smallest estimate.
    pub fn label(&self, pose: Point, goal: Point) -> Result<u8> {
        if pose.dist(goal) <= self.cfg.goal_tolerance {
            return Ok(STOP_ACTION);
        }
        pick_label(&self.action_lengths(pose, goal), pose, goal)
    }
}

/// Argmin over finite estimates. Exact ties go to the direction closest to
/// the straight-line goal bearing, then to the lowest index.
fn pick_label(lengths: &[f64; 8], pose: Point, goal: Point) -> Result<u8> {
    let bearing = (goal.y - pose.y).atan2(goal.x - pose.x);
    let mut best: Option<usize> = None;
    for (i, &li) in lengths.iter().enumerate() {
        if !li.is_finite() {
            continue;
        }
        best = Some(match best {
            None => i,
            Some(b) if li < lengths[b] => i,
            Some(b) if li == lengths[b] => {
                let di = util::angle_diff(util::action_angle(i), bearing);
                let db = util::angle_diff(util::action_angle(b), bearing);
                if di < db {
                    i
                } else {
                    b
                }
            }
            Some(b) => b,
        });
    }
    best.map(|i| i as u8).ok_or(Error::NoExpertLabel)
}

/// One recorded robot state with its expert action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub map_id: usize,
    pub robot_id: usize,
    pub timestep: usize,
    pub scan: LidarScan,
    /// Comm-range neighbors as (id, r, θ) with r < r_com strictly.
    pub neighbors: Vec<(usize, f64, f64)>,
    /// In-FOV teammates as (r, θ) with r ≤ r_fov.
    pub neighbors_in_fov: Vec<(f64, f64)>,
    /// Goal offset as (r, θ); (0, 0) when standing exactly on the goal.
    pub goal_rel: (f64, f64),
    pub label: u8,
}

/// Samples from one expert-driven episode.
#[derive(Debug, Clone)]
pub struct Episode {
    pub samples: Vec<Sample>,
    /// True when the step budget ran out before every robot stopped.
    pub truncated: bool,
    /// Movement steps taken.
    pub steps: usize,
}

/// Drive every robot by its expert label, recording one sample per robot per
/// timestep until all stop or the budget runs out. Experts ignore each other:
/// only static obstacles constrain the moves.
pub fn generate_episode_samples(
    world: &WorldMap,
    poses: &[RobotPose],
    map_id: usize,
    expert_cfg: &ExpertConfig,
    percept_cfg: &PerceptConfig,
) -> Result<Episode> {
    let expert = Expert::new(world, expert_cfg);
    let reach = expert_cfg.reach_distance(percept_cfg.r_fov);
    let mut fields = Vec::with_capacity(poses.len());
    for p in poses {
        let field = expert.planner.field(p.goal).ok_or(Error::UnreachableGoal)?;
        let start = expert.planner.grid.cell_of(p.position).ok_or(Error::UnreachableGoal)?;
        if field.steps_from(start).is_none() {
            return Err(Error::UnreachableGoal);
        }
        fields.push(field);
    }
    let budget = expert_cfg.step_budget.unwrap_or_else(|| {
        let (w, h) = world.bounds.extent();
        4 * (w.hypot(h) / expert_cfg.l_step).ceil() as usize
    });

    let n = poses.len();
    let mut positions: Vec<Point> = poses.iter().map(|p| p.position).collect();
    let mut samples = Vec::new();
    let mut truncated = false;
    let mut t = 0;
    loop {
        // Labels first: a robot with every direction blocked gets no sample
        // (discarded) and holds still, which also counts as stopped.
        let mut labels = vec![STOP_ACTION; n];
        let mut keep = vec![true; n];
        for i in 0..n {
            if positions[i].dist(poses[i].goal) <= reach {
                continue;
            }
            let lengths = expert.action_lengths_field(positions[i], &fields[i]);
            match pick_label(&lengths, positions[i], poses[i].goal) {
                Ok(a) => labels[i] = a,
                Err(Error::NoExpertLabel) => keep[i] = false,
                Err(e) => return Err(e),
            }
        }
        for i in 0..n {
            if !keep[i] {
                continue;
            }
            samples.push(record_sample(
                world,
                &positions,
                poses,
                i,
                map_id,
                t,
                labels[i],
                percept_cfg,
            )?);
        }
        if labels.iter().all(|&a| a == STOP_ACTION) {
            break;
        }
        if t == budget {
            truncated = true;
            break;
        }
        for i in 0..n {
            if labels[i] != STOP_ACTION {
                let (ux, uy) = ACTION_DIRS[labels[i] as usize];
                positions[i].x += expert_cfg.l_step * ux;
                positions[i].y += expert_cfg.l_step * uy;
            }
        }
        t += 1;
    }
    Ok(Episode { samples, truncated, steps: t })
}

#[allow(clippy::too_many_arguments)]
fn record_sample(
    world: &WorldMap,
    positions: &[Point],
    poses: &[RobotPose],
    i: usize,
    map_id: usize,
    timestep: usize,
    label: u8,
    percept_cfg: &PerceptConfig,
) -> Result<Sample> {
    let me = positions[i];
    let mut scan = world.raycast_scan(me, percept_cfg.r_fov)?;
    scan.quantize();
    let mut neighbors = Vec::new();
    let mut neighbors_in_fov = Vec::new();
    for (j, &other) in positions.iter().enumerate() {
        if j == i || other == me {
            // Coincident overlap can occur transiently since experts ignore
            // each other; the relative angle is undefined, so skip the pair.
            continue;
        }
        let (r, theta) = percept::relative_geometry(me, other)?;
        if r < percept_cfg.r_com {
            neighbors.push((poses[j].id, r, theta));
        }
        if r <= percept_cfg.r_fov {
            neighbors_in_fov.push((r, theta));
        }
    }
    let goal_rel = if me == poses[i].goal {
        (0.0, 0.0)
    } else {
        percept::relative_geometry(me, poses[i].goal)?
    };
    Ok(Sample {
        map_id,
        robot_id: poses[i].id,
        timestep,
        scan,
        neighbors,
        neighbors_in_fov,
        goal_rel,
        label,
    })
}
