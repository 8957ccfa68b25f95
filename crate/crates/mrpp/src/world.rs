//! Continuous 2D environment model: map synthesis, oriented-rectangle
//! geometry, occupancy rasterization, occlusion-aware lidar raycasting and
//! collision queries.
//!
//! All operations are read-only after construction; maps are safe to share
//! across threads.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::MapGenConfig;
use crate::util::wrap_angle;
use crate::{Error, Result};

/// Lidar beams per scan, one per degree of azimuth.
pub const LIDAR_BEAMS: usize = 360;

/// Rejection-sampling budget for placement operations.
const MAX_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(self, other: Point) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }

    pub fn offset(self, dx: f64, dy: f64) -> Point {
        Point::new(self.x + dx, self.y + dy)
    }
}

/// Axis-aligned bounding box in meters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Bounds {
    pub min: Point,
    pub max: Point,
}

impl Bounds {
    pub fn square(size: f64) -> Self {
        Self { min: Point::new(0.0, 0.0), max: Point::new(size, size) }
    }

    pub fn extent(&self) -> (f64, f64) {
        (self.max.x - self.min.x, self.max.y - self.min.y)
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    /// Shrink by `margin` on every side.
    pub fn shrunk(&self, margin: f64) -> Bounds {
        Bounds {
            min: Point::new(self.min.x + margin, self.min.y + margin),
            max: Point::new(self.max.x - margin, self.max.y - margin),
        }
    }
}

/// Oriented rectangular obstacle. `length` extends along the local x axis
/// before rotation by `angle`; `angle` is normalized to [0, 2π).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ObstacleRect {
    pub cx: f64,
    pub cy: f64,
    pub length: f64,
    pub width: f64,
    pub angle: f64,
}

impl ObstacleRect {
    pub fn new(cx: f64, cy: f64, length: f64, width: f64, angle: f64) -> Self {
        Self { cx, cy, length, width, angle: wrap_angle(angle) }
    }

    pub fn center(&self) -> Point {
        Point::new(self.cx, self.cy)
    }

    /// Corners in counter-clockwise order.
    pub fn corners(&self) -> [Point; 4] {
        let (s, c) = self.angle.sin_cos();
        let (hl, hw) = (self.length / 2.0, self.width / 2.0);
        let rot = |lx: f64, ly: f64| Point::new(self.cx + c * lx - s * ly, self.cy + s * lx + c * ly);
        [rot(hl, hw), rot(-hl, hw), rot(-hl, -hw), rot(hl, -hw)]
    }

    /// Edges as point pairs.
    pub fn edges(&self) -> [(Point, Point); 4] {
        let c = self.corners();
        [(c[0], c[1]), (c[1], c[2]), (c[2], c[3]), (c[3], c[0])]
    }

    /// Closed containment test: points exactly on the edge count as inside.
    pub fn contains(&self, p: Point) -> bool {
        let (lx, ly) = self.to_local(p);
        lx.abs() <= self.length / 2.0 && ly.abs() <= self.width / 2.0
    }

    /// Distance from a point to the (solid) rectangle; 0 when inside.
    pub fn distance(&self, p: Point) -> f64 {
        let (lx, ly) = self.to_local(p);
        let dx = (lx.abs() - self.length / 2.0).max(0.0);
        let dy = (ly.abs() - self.width / 2.0).max(0.0);
        (dx * dx + dy * dy).sqrt()
    }

    fn to_local(&self, p: Point) -> (f64, f64) {
        let (s, c) = self.angle.sin_cos();
        let dx = p.x - self.cx;
        let dy = p.y - self.cy;
        (c * dx + s * dy, -s * dx + c * dy)
    }

    fn aabb(&self) -> Bounds {
        let cs = self.corners();
        let mut b = Bounds { min: cs[0], max: cs[0] };
        for p in &cs[1..] {
            b.min.x = b.min.x.min(p.x);
            b.min.y = b.min.y.min(p.y);
            b.max.x = b.max.x.max(p.x);
            b.max.y = b.max.y.max(p.y);
        }
        b
    }

    /// Distance from a segment to the rectangle; 0 when they intersect.
    pub fn segment_distance(&self, p0: Point, p1: Point) -> f64 {
        if self.contains(p0) || self.contains(p1) {
            return 0.0;
        }
        let mut best = f64::INFINITY;
        for (a, b) in self.edges() {
            if segments_intersect(p0, p1, a, b) {
                return 0.0;
            }
            best = best.min(segment_segment_distance(p0, p1, a, b));
        }
        best
    }
}

/// A 360-beam lidar scan; `ranges[k]` is the range at azimuth k degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LidarScan {
    pub ranges: Vec<f64>,
    pub max_range: f64,
}

impl LidarScan {
    pub fn beam_angle(k: usize) -> f64 {
        (k as f64).to_radians()
    }

    /// Round ranges to 4 decimals. The rounded scan is the canonical sensor
    /// datum, so datasets and rollouts observe identical values.
    pub fn quantize(&mut self) {
        for r in &mut self.ranges {
            *r = (*r * 1e4).round() / 1e4;
        }
    }
}

/// Rasterized occupancy on a regular grid anchored at the map origin.
#[derive(Debug, Clone)]
pub struct OccGrid {
    pub nx: usize,
    pub ny: usize,
    pub resolution: f64,
    pub origin: Point,
    cells: Vec<bool>,
}

impl OccGrid {
    /// All-free grid covering `bounds`.
    pub fn free(bounds: Bounds, resolution: f64) -> Self {
        let (w, h) = bounds.extent();
        let nx = (w / resolution).ceil() as usize;
        let ny = (h / resolution).ceil() as usize;
        Self { nx, ny, resolution, origin: bounds.min, cells: vec![false; nx * ny] }
    }

    pub fn occupied(&self, ix: usize, iy: usize) -> bool {
        self.cells[iy * self.nx + ix]
    }

    pub fn set(&mut self, ix: usize, iy: usize, value: bool) {
        self.cells[iy * self.nx + ix] = value;
    }

    pub fn occupied_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> Point {
        Point::new(
            self.origin.x + (ix as f64 + 0.5) * self.resolution,
            self.origin.y + (iy as f64 + 0.5) * self.resolution,
        )
    }

    /// Cell containing a point, or None outside the grid.
    pub fn cell_of(&self, p: Point) -> Option<(usize, usize)> {
        let fx = (p.x - self.origin.x) / self.resolution;
        let fy = (p.y - self.origin.y) / self.resolution;
        if fx < 0.0 || fy < 0.0 {
            return None;
        }
        let (ix, iy) = (fx as usize, fy as usize);
        // Points exactly on the outer edge belong to the last cell.
        let ix = ix.min(self.nx.saturating_sub(1));
        let iy = iy.min(self.ny.saturating_sub(1));
        if fx > self.nx as f64 || fy > self.ny as f64 {
            return None;
        }
        Some((ix, iy))
    }
}

/// Continuous 2D bounded environment with oriented rectangular obstacles.
#[derive(Debug, Clone)]
pub struct WorldMap {
    pub bounds: Bounds,
    pub resolution: f64,
    pub obstacles: Vec<ObstacleRect>,
    occupancy: OccGrid,
}

impl WorldMap {
    pub fn new(bounds: Bounds, resolution: f64, obstacles: Vec<ObstacleRect>) -> Self {
        let occupancy = rasterize_into(bounds, resolution, &obstacles);
        Self { bounds, resolution, obstacles, occupancy }
    }

    /// Occupancy grid: a cell is occupied iff its center lies inside at
    /// least one obstacle rectangle.
    pub fn occupancy(&self) -> &OccGrid {
        &self.occupancy
    }

    pub fn point_in_obstacle(&self, p: Point) -> bool {
        self.obstacles.iter().any(|o| o.contains(p))
    }

    /// Distance from a point to the nearest obstacle (infinite when none).
    pub fn obstacle_distance(&self, p: Point) -> f64 {
        self.obstacles.iter().map(|o| o.distance(p)).fold(f64::INFINITY, f64::min)
    }

    /// Occupancy grid inflated by `radius`: a cell is blocked iff its center
    /// is within `radius` of any obstacle or of the map border.
    pub fn inflated_grid(&self, radius: f64) -> OccGrid {
        let mut grid = OccGrid::free(self.bounds, self.resolution);
        for obst in &self.obstacles {
            let aabb = obst.aabb();
            let (x0, y0, x1, y1) = cell_range(&grid, aabb, radius + grid.resolution);
            for iy in y0..y1 {
                for ix in x0..x1 {
                    if !grid.occupied(ix, iy) && obst.distance(grid.cell_center(ix, iy)) <= radius {
                        grid.set(ix, iy, true);
                    }
                }
            }
        }
        // Border band: the robot disc must stay inside bounds.
        let inner = self.bounds.shrunk(radius);
        for iy in 0..grid.ny {
            for ix in 0..grid.nx {
                if !grid.occupied(ix, iy) && !inner.contains(grid.cell_center(ix, iy)) {
                    grid.set(ix, iy, true);
                }
            }
        }
        grid
    }

    /// 360-beam scan from `origin`; beam k points at azimuth k degrees.
    /// Ranges are distances to the nearest obstacle edge, clamped to
    /// `max_range`. Nearest-hit semantics makes occlusion implicit.
    pub fn raycast_scan(&self, origin: Point, max_range: f64) -> Result<LidarScan> {
        if !self.bounds.contains(origin) {
            return Err(Error::Data(format!("scan origin ({}, {}) outside bounds", origin.x, origin.y)));
        }
        if self.point_in_obstacle(origin) {
            return Err(Error::OriginInsideObstacle(origin.x, origin.y));
        }
        let edges: Vec<(Point, Point)> = self.obstacles.iter().flat_map(|o| o.edges()).collect();
        let mut ranges = Vec::with_capacity(LIDAR_BEAMS);
        for k in 0..LIDAR_BEAMS {
            let (s, c) = LidarScan::beam_angle(k).sin_cos();
            let dir = Point::new(c, s);
            let mut best = max_range;
            for &(a, b) in &edges {
                if let Some(t) = ray_segment_intersection(origin, dir, a, b) {
                    if t < best {
                        best = t;
                    }
                }
            }
            ranges.push(best);
        }
        Ok(LidarScan { ranges, max_range })
    }

    /// True iff the capsule (segment swept by a disc of `radius`) intersects
    /// any obstacle or pokes outside the map bounds.
    pub fn segment_collides(&self, p0: Point, p1: Point, radius: f64) -> bool {
        let inner = self.bounds.shrunk(radius);
        if !inner.contains(p0) || !inner.contains(p1) {
            return true;
        }
        self.obstacles.iter().any(|o| o.segment_distance(p0, p1) <= radius)
    }

    /// Uniform sample over positions with clearance > `radius` from all
    /// obstacles and >= `radius` from the bounds.
    pub fn sample_free_position(&self, radius: f64, rng: &mut ChaCha8Rng) -> Result<Point> {
        let inner = self.bounds.shrunk(radius);
        if inner.min.x >= inner.max.x || inner.min.y >= inner.max.y {
            return Err(Error::NoFreePosition { attempts: 0 });
        }
        for _ in 0..MAX_ATTEMPTS {
            let p = Point::new(
                rng.gen_range(inner.min.x..inner.max.x),
                rng.gen_range(inner.min.y..inner.max.y),
            );
            if !self.segment_collides(p, p, radius) {
                return Ok(p);
            }
        }
        Err(Error::NoFreePosition { attempts: MAX_ATTEMPTS })
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "bounds": { "min": [self.bounds.min.x, self.bounds.min.y],
                         "max": [self.bounds.max.x, self.bounds.max.y] },
            "resolution": self.resolution,
            "obstacles": self.obstacles,
        })
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        #[derive(Deserialize)]
        struct File {
            bounds: FileBounds,
            resolution: f64,
            obstacles: Vec<ObstacleRect>,
        }
        #[derive(Deserialize)]
        struct FileBounds {
            min: [f64; 2],
            max: [f64; 2],
        }
        let file: File = serde_json::from_value(value.clone())?;
        let bounds = Bounds {
            min: Point::new(file.bounds.min[0], file.bounds.min[1]),
            max: Point::new(file.bounds.max[0], file.bounds.max[1]),
        };
        let obstacles =
            file.obstacles.into_iter().map(|o| ObstacleRect::new(o.cx, o.cy, o.length, o.width, o.angle)).collect();
        Ok(WorldMap::new(bounds, file.resolution, obstacles))
    }
}

/// A robot with a navigation goal. Position and goal lie in free space at
/// episode start; ids are unique within an episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotPose {
    pub id: usize,
    pub position: Point,
    pub goal: Point,
}

/// Synthesize a random map. Deterministic for a fixed seed; overlapping
/// obstacles are permitted, but every obstacle lies fully inside bounds.
pub fn generate_map(cfg: &MapGenConfig) -> Result<WorldMap> {
    cfg.validate()?;
    let bounds = Bounds::square(cfg.map_size);
    let mut rng = crate::util::rng(cfg.seed, 0x0b57, 0);
    let mut obstacles = Vec::with_capacity(cfg.obstacle_count);
    for _ in 0..cfg.obstacle_count {
        let mut placed = false;
        for _ in 0..MAX_ATTEMPTS {
            let length = [1.0, 2.0, 3.0][rng.gen_range(0..3)];
            let width = 0.5;
            let angle = match cfg.angle_mode {
                crate::config::AngleMode::Simple => {
                    let k = rng.gen_range(0..2u8) + rng.gen_range(0..2u8);
                    std::f64::consts::FRAC_PI_2 * k as f64
                }
                crate::config::AngleMode::Complex => rng.gen_range(0.0..crate::util::TAU),
            };
            let cx = rng.gen_range(bounds.min.x..bounds.max.x);
            let cy = rng.gen_range(bounds.min.y..bounds.max.y);
            let rect = ObstacleRect::new(cx, cy, length, width, angle);
            if rect.corners().iter().all(|&p| bounds.contains(p)) {
                obstacles.push(rect);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::MapTooCrowded { attempts: MAX_ATTEMPTS });
        }
    }
    Ok(WorldMap::new(bounds, cfg.resolution, obstacles))
}

fn rasterize_into(bounds: Bounds, resolution: f64, obstacles: &[ObstacleRect]) -> OccGrid {
    let mut grid = OccGrid::free(bounds, resolution);
    for obst in obstacles {
        let (x0, y0, x1, y1) = cell_range(&grid, obst.aabb(), resolution);
        for iy in y0..y1 {
            for ix in x0..x1 {
                if !grid.occupied(ix, iy) && obst.contains(grid.cell_center(ix, iy)) {
                    grid.set(ix, iy, true);
                }
            }
        }
    }
    grid
}

/// Cell index window covering an AABB grown by `margin`, clamped to the grid.
fn cell_range(grid: &OccGrid, aabb: Bounds, margin: f64) -> (usize, usize, usize, usize) {
    let to_ix = |x: f64| (((x - grid.origin.x) / grid.resolution).floor().max(0.0)) as usize;
    let to_iy = |y: f64| (((y - grid.origin.y) / grid.resolution).floor().max(0.0)) as usize;
    let x0 = to_ix(aabb.min.x - margin);
    let y0 = to_iy(aabb.min.y - margin);
    let x1 = (to_ix(aabb.max.x + margin) + 1).min(grid.nx);
    let y1 = (to_iy(aabb.max.y + margin) + 1).min(grid.ny);
    (x0, y0, x1, y1)
}

fn cross(ax: f64, ay: f64, bx: f64, by: f64) -> f64 {
    ax * by - ay * bx
}

/// Ray (o + t·dir, t >= 0) against segment [a, b]; returns the smallest
/// non-negative t, if any.
pub fn ray_segment_intersection(o: Point, dir: Point, a: Point, b: Point) -> Option<f64> {
    let ex = b.x - a.x;
    let ey = b.y - a.y;
    let denom = cross(dir.x, dir.y, ex, ey);
    if denom.abs() < 1e-15 {
        return None; // parallel; adjacent edges catch endpoint grazes
    }
    let wx = a.x - o.x;
    let wy = a.y - o.y;
    let t = cross(wx, wy, ex, ey) / denom;
    let u = cross(dir.x, dir.y, wx, wy) / -denom;
    if t >= 0.0 && (0.0..=1.0).contains(&u) {
        Some(t)
    } else {
        None
    }
}

fn segments_intersect(p0: Point, p1: Point, a: Point, b: Point) -> bool {
    let d1 = cross(p1.x - p0.x, p1.y - p0.y, a.x - p0.x, a.y - p0.y);
    let d2 = cross(p1.x - p0.x, p1.y - p0.y, b.x - p0.x, b.y - p0.y);
    let d3 = cross(b.x - a.x, b.y - a.y, p0.x - a.x, p0.y - a.y);
    let d4 = cross(b.x - a.x, b.y - a.y, p1.x - a.x, p1.y - a.y);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    // Collinear / endpoint touches are covered by the distance fallback.
    false
}

fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let ex = b.x - a.x;
    let ey = b.y - a.y;
    let len2 = ex * ex + ey * ey;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.x - a.x) * ex + (p.y - a.y) * ey) / len2).clamp(0.0, 1.0)
    };
    p.dist(Point::new(a.x + t * ex, a.y + t * ey))
}

fn segment_segment_distance(p0: Point, p1: Point, a: Point, b: Point) -> f64 {
    if segments_intersect(p0, p1, a, b) {
        return 0.0;
    }
    point_segment_distance(p0, a, b)
        .min(point_segment_distance(p1, a, b))
        .min(point_segment_distance(a, p0, p1))
        .min(point_segment_distance(b, p0, p1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::AngleMode;
    use proptest::prelude::*;

    fn cfg(count: usize, seed: u64) -> MapGenConfig {
        MapGenConfig { map_size: 20.0, resolution: 0.05, obstacle_count: count, angle_mode: AngleMode::Simple, seed }
    }

    #[test]
    fn empty_map_all_free() {
        let map = generate_map(&cfg(0, 1)).unwrap();
        assert!(map.obstacles.is_empty());
        assert_eq!(map.occupancy().occupied_count(), 0);
        assert_eq!(map.occupancy().nx, 400);
        assert_eq!(map.occupancy().ny, 400);
    }

    #[test]
    fn simple_mode_angles_are_axis_aligned() {
        let map = generate_map(&cfg(60, 7)).unwrap();
        for o in &map.obstacles {
            let ok = [0.0, std::f64::consts::FRAC_PI_2, std::f64::consts::PI]
                .iter()
                .any(|&a| (o.angle - a).abs() < 1e-12);
            assert!(ok, "angle {} not in {{0, pi/2, pi}}", o.angle);
        }
    }

    #[test]
    fn complex_mode_angles_are_spread() {
        let mut c = MapGenConfig { angle_mode: AngleMode::Complex, obstacle_count: 100, ..cfg(0, 3) };
        c.map_size = 30.0;
        let map = generate_map(&c).unwrap();
        let lattice = map
            .obstacles
            .iter()
            .filter(|o| {
                [0.0, std::f64::consts::FRAC_PI_2, std::f64::consts::PI]
                    .iter()
                    .any(|&a| (o.angle - a).abs() < 1e-9)
            })
            .count();
        assert_eq!(lattice, 0);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_map(&cfg(40, 9)).unwrap();
        let b = generate_map(&cfg(40, 9)).unwrap();
        assert_eq!(a.to_json().to_string(), b.to_json().to_string());
    }

    #[test]
    fn map_json_round_trip() {
        let map = generate_map(&cfg(12, 5)).unwrap();
        let back = WorldMap::from_json(&map.to_json()).unwrap();
        assert_eq!(map.to_json().to_string(), back.to_json().to_string());
        assert_eq!(map.occupancy().occupied_count(), back.occupancy().occupied_count());
    }

    /// Independent oracle: point-in-convex-polygon via corner cross products.
    fn in_polygon(p: Point, corners: &[Point; 4]) -> bool {
        let mut sign = 0.0f64;
        for i in 0..4 {
            let a = corners[i];
            let b = corners[(i + 1) % 4];
            let c = cross(b.x - a.x, b.y - a.y, p.x - a.x, p.y - a.y);
            if c.abs() < 1e-12 {
                continue;
            }
            if sign == 0.0 {
                sign = c.signum();
            } else if c.signum() != sign {
                return false;
            }
        }
        true
    }

    #[test]
    fn rasterize_counts_match_polygon_sweep() {
        // 2 x 0.5 m obstacle centered at the map center, axis aligned:
        // (2/0.05)*(0.5/0.05) = 400 cells, +- cells whose centers fall on edges.
        let rect = ObstacleRect::new(10.0, 10.0, 2.0, 0.5, 0.0);
        let map = WorldMap::new(Bounds::square(20.0), 0.05, vec![rect]);
        let grid = map.occupancy();
        let mut oracle_count = 0;
        let corners = rect.corners();
        for iy in 0..grid.ny {
            for ix in 0..grid.nx {
                let fast = grid.occupied(ix, iy);
                let slow = in_polygon(grid.cell_center(ix, iy), &corners);
                assert_eq!(fast, slow, "cell ({ix}, {iy})");
                if slow {
                    oracle_count += 1;
                }
            }
        }
        assert_eq!(grid.occupied_count(), oracle_count);
        assert!((360..=440).contains(&oracle_count), "got {oracle_count}");
    }

    #[test]
    fn rotation_by_pi_preserves_occupancy() {
        let a = WorldMap::new(Bounds::square(10.0), 0.05, vec![ObstacleRect::new(5.2, 4.9, 3.0, 0.5, 0.7)]);
        let b = WorldMap::new(
            Bounds::square(10.0),
            0.05,
            vec![ObstacleRect::new(5.2, 4.9, 3.0, 0.5, 0.7 + std::f64::consts::PI)],
        );
        for iy in 0..a.occupancy().ny {
            for ix in 0..a.occupancy().nx {
                assert_eq!(a.occupancy().occupied(ix, iy), b.occupancy().occupied(ix, iy));
            }
        }
    }

    #[test]
    fn raycast_empty_map_is_max_range() {
        let map = WorldMap::new(Bounds::square(20.0), 0.05, vec![]);
        let scan = map.raycast_scan(Point::new(10.0, 10.0), 5.0).unwrap();
        assert_eq!(scan.ranges.len(), 360);
        assert!(scan.ranges.iter().all(|&r| r == 5.0));
    }

    #[test]
    fn raycast_hits_near_face() {
        // Near face 2.0 m due east of the origin.
        let map =
            WorldMap::new(Bounds::square(20.0), 0.05, vec![ObstacleRect::new(13.0, 10.0, 2.0, 0.5, 0.0)]);
        let scan = map.raycast_scan(Point::new(10.0, 10.0), 5.0).unwrap();
        assert!((scan.ranges[0] - 2.0).abs() < 1e-9, "range {}", scan.ranges[0]);
        // Due north is clear.
        assert_eq!(scan.ranges[90], 5.0);
    }

    #[test]
    fn raycast_origin_inside_obstacle_errors() {
        let map = WorldMap::new(Bounds::square(20.0), 0.05, vec![ObstacleRect::new(10.0, 10.0, 2.0, 0.5, 0.0)]);
        assert!(matches!(
            map.raycast_scan(Point::new(10.0, 10.0), 5.0),
            Err(Error::OriginInsideObstacle(..))
        ));
    }

    /// Brute-force raycast: walk the beam in 1 mm steps until a point tests
    /// inside an obstacle.
    fn brute_raycast(map: &WorldMap, origin: Point, angle: f64, max_range: f64) -> f64 {
        let (s, c) = angle.sin_cos();
        let step = 1e-3;
        let mut t = step;
        while t < max_range {
            if map.point_in_obstacle(Point::new(origin.x + t * c, origin.y + t * s)) {
                return t;
            }
            t += step;
        }
        max_range
    }

    #[test]
    fn raycast_occlusion_matches_brute_force() {
        // B in front of A along the +x beam; raycast must report B.
        let map = WorldMap::new(
            Bounds::square(20.0),
            0.05,
            vec![
                ObstacleRect::new(14.0, 10.0, 2.0, 0.5, 0.3), // A, far
                ObstacleRect::new(12.0, 10.0, 1.0, 0.5, 1.2), // B, near
            ],
        );
        let origin = Point::new(10.0, 10.0);
        let scan = map.raycast_scan(origin, 5.0).unwrap();
        for k in 0..360 {
            let brute = brute_raycast(&map, origin, LidarScan::beam_angle(k), 5.0);
            assert!(
                (scan.ranges[k] - brute).abs() < 2e-3,
                "beam {k}: fast {} brute {brute}",
                scan.ranges[k]
            );
        }
    }

    #[test]
    fn raycast_raster_consistency() {
        let map = generate_map(&cfg(30, 21)).unwrap();
        let mut rng = crate::util::rng(21, 1, 0);
        let origin = map.sample_free_position(0.2, &mut rng).unwrap();
        let scan = map.raycast_scan(origin, 5.0).unwrap();
        let grid = map.occupancy();
        let res = grid.resolution;
        for k in 0..360 {
            let rho = scan.ranges[k];
            let (s, c) = LidarScan::beam_angle(k).sin_cos();
            if rho < 5.0 {
                // The cell one step into the hit must be occupied.
                let inside = Point::new(origin.x + (rho + res) * c, origin.y + (rho + res) * s);
                if let Some((ix, iy)) = grid.cell_of(inside) {
                    assert!(
                        grid.occupied(ix, iy) || map.obstacle_distance(inside) <= res * 1.5,
                        "beam {k} hit cell not occupied"
                    );
                }
            }
            // Points strictly before the hit are free, up to a one-cell margin.
            let mut t = res;
            while t < rho - res * std::f64::consts::SQRT_2 {
                let p = Point::new(origin.x + t * c, origin.y + t * s);
                if let Some((ix, iy)) = grid.cell_of(p) {
                    if grid.occupied(ix, iy) {
                        assert!(
                            map.obstacle_distance(p) <= res * std::f64::consts::SQRT_2,
                            "beam {k} blocked before hit at t={t}"
                        );
                    }
                }
                t += res;
            }
        }
    }

    #[test]
    fn segment_collision_cases() {
        let empty = WorldMap::new(Bounds::square(20.0), 0.05, vec![]);
        assert!(!empty.segment_collides(Point::new(2.0, 2.0), Point::new(18.0, 17.0), 0.2));
        // Exits bounds.
        assert!(empty.segment_collides(Point::new(2.0, 2.0), Point::new(19.95, 10.0), 0.2));

        let rect = ObstacleRect::new(10.0, 10.0, 2.0, 0.5, 0.0);
        let map = WorldMap::new(Bounds::square(20.0), 0.05, vec![rect]);
        // Pierces the obstacle center.
        assert!(map.segment_collides(Point::new(8.0, 10.0), Point::new(12.0, 10.0), 0.2));
        // Passes 0.1 m from the north edge (y = 10.25): capsule radius 0.2 hits.
        assert!(map.segment_collides(Point::new(8.0, 10.35), Point::new(12.0, 10.35), 0.2));
        // 0.3 m clearance with radius 0.2 does not.
        assert!(!map.segment_collides(Point::new(8.0, 10.55), Point::new(12.0, 10.55), 0.2));
        // Distance oracle agreement on the near-edge case.
        assert!((rect.segment_distance(Point::new(8.0, 10.35), Point::new(12.0, 10.35)) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn sample_free_position_respects_clearance() {
        // Half-blocked map: a big wall across the middle.
        let map = WorldMap::new(
            Bounds::square(10.0),
            0.05,
            vec![
                ObstacleRect::new(5.0, 5.0, 3.0, 0.5, 0.0),
                ObstacleRect::new(2.0, 5.0, 3.0, 0.5, 0.0),
                ObstacleRect::new(8.0, 5.0, 3.0, 0.5, 0.0),
            ],
        );
        let mut rng = crate::util::rng(11, 0, 0);
        for _ in 0..1000 {
            let p = map.sample_free_position(0.2, &mut rng).unwrap();
            assert!(!map.segment_collides(p, p, 0.2));
        }
        // Determinism.
        let a = map.sample_free_position(0.2, &mut crate::util::rng(5, 0, 0)).unwrap();
        let b = map.sample_free_position(0.2, &mut crate::util::rng(5, 0, 0)).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        /// Adding an obstacle never increases any beam's range.
        #[test]
        fn raycast_monotone_under_added_obstacle(
            cx in 2.0f64..18.0, cy in 2.0f64..18.0, angle in 0.0f64..6.28, len_idx in 0usize..3
        ) {
            let base = WorldMap::new(Bounds::square(20.0), 0.05,
                vec![ObstacleRect::new(13.0, 10.0, 2.0, 0.5, 0.4)]);
            let extra = ObstacleRect::new(cx, cy, [1.0, 2.0, 3.0][len_idx], 0.5, angle);
            let origin = Point::new(10.0, 10.0);
            prop_assume!(!extra.contains(origin));
            let mut obstacles = base.obstacles.clone();
            obstacles.push(extra);
            let bigger = WorldMap::new(Bounds::square(20.0), 0.05, obstacles);
            let s0 = base.raycast_scan(origin, 5.0).unwrap();
            let s1 = bigger.raycast_scan(origin, 5.0).unwrap();
            for k in 0..360 {
                prop_assert!(s1.ranges[k] <= s0.ranges[k] + 1e-12);
            }
        }

        /// Containment agrees with the polygon-corner oracle.
        #[test]
        fn contains_matches_polygon_oracle(
            px in 0.0f64..20.0, py in 0.0f64..20.0, angle in 0.0f64..6.28
        ) {
            let rect = ObstacleRect::new(10.0, 10.0, 3.0, 0.5, angle);
            let p = Point::new(px, py);
            // Skip points within a whisker of the boundary.
            prop_assume!((rect.distance(p) > 1e-9) || rect.contains(p));
            let corners = rect.corners();
            prop_assert_eq!(rect.contains(p), in_polygon(p, &corners));
        }
    }
}
