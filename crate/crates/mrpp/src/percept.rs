//! Per-robot perception: the three-channel observation map built from a
//! lidar scan, visible teammates and the goal, plus the communication graph
//! with (distance, bearing) edge geometry.
//!
//! Bearings live in the shared global action frame; robots have no heading.

use serde::{Deserialize, Serialize};

use crate::config::PerceptConfig;
use crate::util::wrap_angle;
use crate::world::{LidarScan, Point, RobotPose};
use crate::{Error, Result};

/// Directed edge of the communication graph: `dst` seen from `src`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeGeom {
    pub src: usize,
    pub dst: usize,
    pub r: f64,
    pub theta: f64,
}

/// Communication graph over robot ids; edges are exactly the ordered pairs
/// with distance strictly below r_com.
#[derive(Debug, Clone, Default)]
pub struct CommGraph {
    pub nodes: Vec<usize>,
    pub edges: Vec<EdgeGeom>,
}

impl CommGraph {
    /// Outgoing edges of a robot (its view of each neighbor).
    pub fn neighbors(&self, src: usize) -> impl Iterator<Item = &EdgeGeom> {
        self.edges.iter().filter(move |e| e.src == src)
    }

    pub fn degree(&self, src: usize) -> usize {
        self.neighbors(src).count()
    }
}

/// Euclidean distance and bearing of `b` as seen from `a`, bearing in [0, 2pi).
pub fn relative_geometry(a: Point, b: Point) -> Result<(f64, f64)> {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let r = (dx * dx + dy * dy).sqrt();
    if r == 0.0 {
        return Err(Error::CoincidentPositions);
    }
    Ok((r, wrap_angle(dy.atan2(dx))))
}

pub fn build_comm_graph(poses: &[RobotPose], r_com: f64) -> Result<CommGraph> {
    let nodes: Vec<usize> = poses.iter().map(|p| p.id).collect();
    {
        let mut sorted = nodes.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != nodes.len() {
            return Err(Error::Data("duplicate robot ids in comm graph".into()));
        }
    }
    let mut edges = Vec::new();
    for (i, a) in poses.iter().enumerate() {
        for b in &poses[i + 1..] {
            let d = a.position.dist(b.position);
            if d >= r_com {
                continue;
            }
            let (r, theta) = relative_geometry(a.position, b.position)?;
            edges.push(EdgeGeom { src: a.id, dst: b.id, r, theta });
            edges.push(EdgeGeom { src: b.id, dst: a.id, r, theta: wrap_angle(theta + std::f64::consts::PI) });
        }
    }
    Ok(CommGraph { nodes, edges })
}

/// Binary 3-channel observation map (channel order: local map, neighbors,
/// goal), robot at the center, spanning the FOV disc.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMap {
    pub d: usize,
    pub cell_size: f64,
    data: Vec<f64>,
}

impl ChannelMap {
    fn new(d: usize, cell_size: f64) -> Self {
        Self { d, cell_size, data: vec![0.0; 3 * d * d] }
    }

    pub fn get(&self, ch: usize, iy: usize, ix: usize) -> f64 {
        self.data[(ch * self.d + iy) * self.d + ix]
    }

    fn set(&mut self, ch: usize, iy: usize, ix: usize) {
        self.data[(ch * self.d + iy) * self.d + ix] = 1.0;
    }

    /// Row-major [3, d, d] buffer, ready to feed the encoder.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn nonzero_count(&self, ch: usize) -> usize {
        self.data[ch * self.d * self.d..(ch + 1) * self.d * self.d].iter().filter(|&&v| v != 0.0).count()
    }

    /// Cell of a robot-local offset; offsets of magnitude exactly r_fov land
    /// in the rim cells. None outside the map square.
    fn cell_of_local(&self, x: f64, y: f64, half: f64) -> Option<(usize, usize)> {
        let fx = (x + half) / self.cell_size;
        let fy = (y + half) / self.cell_size;
        if !(0.0..=self.d as f64).contains(&fx) || !(0.0..=self.d as f64).contains(&fy) {
            return None;
        }
        Some(((fx as usize).min(self.d - 1), (fy as usize).min(self.d - 1)))
    }
}

/// Rasterize one robot's observation.
///
/// Channel 0 marks every beam endpoint (obstacle hits and the free FOV rim).
/// Channel 1 marks in-FOV teammate positions. Channel 2 marks the goal cell
/// when the goal is inside the FOV, otherwise the rim cells within the
/// configured arc of the goal bearing.
pub fn build_channel_map(
    scan: &LidarScan,
    neighbors_in_fov: &[(f64, f64)],
    goal_rel: (f64, f64),
    cfg: &PerceptConfig,
) -> ChannelMap {
    let mut map = ChannelMap::new(cfg.d, cfg.cell_size());
    let half = cfg.r_fov;
    for (k, &range) in scan.ranges.iter().enumerate() {
        let (s, c) = LidarScan::beam_angle(k).sin_cos();
        if let Some((ix, iy)) = map.cell_of_local(range * c, range * s, half) {
            map.set(0, iy, ix);
        }
    }
    for &(r, theta) in neighbors_in_fov {
        let (s, c) = theta.sin_cos();
        if let Some((ix, iy)) = map.cell_of_local(r * c, r * s, half) {
            map.set(1, iy, ix);
        }
    }
    let (gr, gtheta) = goal_rel;
    if gr <= cfg.r_fov {
        let (s, c) = gtheta.sin_cos();
        if let Some((ix, iy)) = map.cell_of_local(gr * c, gr * s, half) {
            map.set(2, iy, ix);
        }
    } else {
        // Rim arc around the goal bearing, sampled finer than a cell.
        let arc = cfg.goal_arc_deg.to_radians();
        let step = (map.cell_size / (2.0 * cfg.r_fov)).min(arc / 4.0);
        let steps = (2.0 * arc / step).ceil() as usize;
        for i in 0..=steps {
            let phi = gtheta - arc + (2.0 * arc) * i as f64 / steps as f64;
            let (s, c) = phi.sin_cos();
            if let Some((ix, iy)) = map.cell_of_local(cfg.r_fov * c, cfg.r_fov * s, half) {
                map.set(2, iy, ix);
            }
        }
    }
    map
}

/// Filter a comm-edge list down to FOV range (teammate channel input).
pub fn in_fov(neighbors: &[(f64, f64)], r_fov: f64) -> Vec<(f64, f64)> {
    neighbors.iter().copied().filter(|&(r, _)| r <= r_fov).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::TAU;
    use crate::world::{Bounds, ObstacleRect, WorldMap};
    use std::collections::BTreeSet;

    fn pose(id: usize, x: f64, y: f64) -> RobotPose {
        RobotPose { id, position: Point::new(x, y), goal: Point::new(0.0, 0.0) }
    }

    fn pcfg(d: usize) -> PerceptConfig {
        PerceptConfig { d, r_fov: 5.0, r_com: 5.0, goal_arc_deg: 3.0 }
    }

    #[test]
    fn relative_geometry_basics() {
        let (r, t) = relative_geometry(Point::new(1.0, 1.0), Point::new(4.0, 1.0)).unwrap();
        assert_eq!((r, t), (3.0, 0.0));
        let (r, t) = relative_geometry(Point::new(0.0, 0.0), Point::new(0.0, 2.0)).unwrap();
        assert!((r - 2.0).abs() < 1e-15 && (t - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        assert!(matches!(
            relative_geometry(Point::new(1.0, 1.0), Point::new(1.0, 1.0)),
            Err(Error::CoincidentPositions)
        ));
    }

    #[test]
    fn relative_geometry_matches_acos_oracle() {
        let mut rng = crate::util::rng(3, 0, 0);
        use rand::Rng;
        for _ in 0..200 {
            let a = Point::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
            let b = Point::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
            if a.dist(b) < 1e-6 {
                continue;
            }
            let (r, theta) = relative_geometry(a, b).unwrap();
            // Independent route: acos of the normalized x component with a
            // sign flip from the y component.
            let alt_r = ((b.x - a.x).powi(2) + (b.y - a.y).powi(2)).sqrt();
            let base = ((b.x - a.x) / alt_r).clamp(-1.0, 1.0).acos();
            let alt_theta = if b.y - a.y >= 0.0 { base } else { TAU - base };
            assert!((r - alt_r).abs() < 1e-12);
            let dt = (theta - wrap_angle(alt_theta)).abs();
            assert!(dt < 1e-9 || (dt - TAU).abs() < 1e-9, "{theta} vs {alt_theta}");
        }
    }

    fn grid_poses(spacing: f64) -> Vec<RobotPose> {
        let mut poses = Vec::new();
        for gy in 0..3 {
            for gx in 0..3 {
                poses.push(pose(poses.len(), gx as f64 * spacing, gy as f64 * spacing));
            }
        }
        poses
    }

    #[test]
    fn comm_graph_degree_matches_grid_spacing() {
        // 3x3 grid at 3 m: sqrt(2)*3 < 5 < 6 gives the centre 8 neighbors.
        let g = build_comm_graph(&grid_poses(3.0), 5.0).unwrap();
        assert_eq!(g.degree(4), 8);
        // corner robots see 3
        assert_eq!(g.degree(0), 3);
        // r_com = 4: 3 < 4 < sqrt(2)*3, centre keeps only the 4 axis neighbors.
        let g4 = build_comm_graph(&grid_poses(3.0), 4.0).unwrap();
        assert_eq!(g4.degree(4), 4);
        // Strictness: distance exactly r_com is not an edge.
        let g3 = build_comm_graph(&grid_poses(3.0), 3.0).unwrap();
        assert_eq!(g3.edges.len(), 0);
        // Far pair: no edges at all.
        let far = build_comm_graph(&[pose(0, 0.0, 0.0), pose(1, 6.0, 0.0)], 5.0).unwrap();
        assert!(far.edges.is_empty());
    }

    #[test]
    fn comm_graph_edges_are_reciprocal() {
        let g = build_comm_graph(&grid_poses(3.0), 5.0).unwrap();
        for e in &g.edges {
            let back = g
                .edges
                .iter()
                .find(|b| b.src == e.dst && b.dst == e.src)
                .expect("missing reciprocal edge");
            assert_eq!(e.r, back.r);
            let dt = wrap_angle(back.theta - e.theta);
            assert!((dt - std::f64::consts::PI).abs() < 1e-12);
            assert!(e.r > 0.0 && e.r < 5.0);
            assert!((0.0..TAU).contains(&e.theta));
        }
    }

    #[test]
    fn comm_graph_is_permutation_invariant() {
        let poses = grid_poses(3.0);
        let mut shuffled = poses.clone();
        shuffled.reverse();
        shuffled.swap(1, 5);
        let key = |g: &CommGraph| -> BTreeSet<String> {
            g.edges.iter().map(|e| format!("{}->{} {:.12} {:.12}", e.src, e.dst, e.r, e.theta)).collect()
        };
        let a = build_comm_graph(&poses, 5.0).unwrap();
        let b = build_comm_graph(&shuffled, 5.0).unwrap();
        assert_eq!(key(&a), key(&b));
    }

    #[test]
    fn empty_scan_marks_the_fov_rim() {
        let cfg = pcfg(20);
        let scan = LidarScan { ranges: vec![5.0; 360], max_range: 5.0 };
        let map = build_channel_map(&scan, &[], (20.0, 0.3), &cfg);
        let n = map.nonzero_count(0);
        assert!((1..=360).contains(&n));
        // Every marked cell's centre sits near the radius-5 circle.
        for iy in 0..20 {
            for ix in 0..20 {
                if map.get(0, iy, ix) != 0.0 {
                    let cx = (ix as f64 + 0.5) * map.cell_size - 5.0;
                    let cy = (iy as f64 + 0.5) * map.cell_size - 5.0;
                    let rad = (cx * cx + cy * cy).sqrt();
                    assert!(
                        (rad - 5.0).abs() < map.cell_size * std::f64::consts::SQRT_2,
                        "cell ({ix},{iy}) at radius {rad}"
                    );
                }
            }
        }
    }

    #[test]
    fn teammate_cell_index_matches_arithmetic() {
        let cfg = pcfg(20); // cell 0.5 m
        let scan = LidarScan { ranges: vec![5.0; 360], max_range: 5.0 };
        let map = build_channel_map(&scan, &[(2.0, 0.0)], (20.0, 0.3), &cfg);
        assert_eq!(map.nonzero_count(1), 1);
        // local (+2, 0): ix = floor((2+5)/0.5) = 14, iy = floor(5/0.5) = 10
        assert_eq!(map.get(1, 10, 14), 1.0);
    }

    #[test]
    fn goal_inside_fov_is_a_single_cell() {
        let cfg = pcfg(20);
        let scan = LidarScan { ranges: vec![5.0; 360], max_range: 5.0 };
        let map = build_channel_map(&scan, &[], (2.3, std::f64::consts::PI), &cfg);
        assert_eq!(map.nonzero_count(2), 1);
        // local (-2.3, 0): ix = floor(2.7/0.5) = 5, iy = 10
        assert_eq!(map.get(2, 10, 5), 1.0);
    }

    #[test]
    fn far_goal_marks_rim_arc_near_bearing() {
        let cfg = pcfg(20);
        let scan = LidarScan { ranges: vec![5.0; 360], max_range: 5.0 };
        let north = std::f64::consts::FRAC_PI_2;
        let map = build_channel_map(&scan, &[], (10.0, north), &cfg);
        assert!(map.nonzero_count(2) >= 1);
        for iy in 0..20 {
            for ix in 0..20 {
                if map.get(2, iy, ix) != 0.0 {
                    let cx = (ix as f64 + 0.5) * map.cell_size - 5.0;
                    let cy = (iy as f64 + 0.5) * map.cell_size - 5.0;
                    let ang = cy.atan2(cx);
                    let rad = (cx * cx + cy * cy).sqrt();
                    // Half-cell angular slack on top of the 3 degree arc.
                    let slack = map.cell_size / rad;
                    assert!((ang - north).abs() < 3f64.to_radians() + slack);
                    assert!((rad - 5.0).abs() < map.cell_size * std::f64::consts::SQRT_2);
                }
            }
        }
    }

    #[test]
    fn channel_maps_are_binary() {
        let map = WorldMap::new(
            Bounds::square(20.0),
            0.05,
            vec![ObstacleRect::new(12.0, 10.3, 2.0, 0.5, 0.4), ObstacleRect::new(8.0, 9.0, 1.0, 0.5, 2.0)],
        );
        let scan = map.raycast_scan(Point::new(10.0, 10.0), 5.0).unwrap();
        let cm = build_channel_map(&scan, &[(1.5, 0.7), (4.0, 3.3)], (7.0, 1.1), &pcfg(32));
        for &v in cm.as_slice() {
            assert!(v == 0.0 || v == 1.0);
        }
        assert!(cm.nonzero_count(0) >= 1 && cm.nonzero_count(0) <= 360);
        assert_eq!(cm.nonzero_count(1), 2);
    }

    #[test]
    fn rotating_the_scene_rotates_the_map() {
        let cfg = pcfg(20);
        // Synthetic ranges chosen away from cell boundaries.
        let ranges: Vec<f64> = (0..360).map(|k| 2.0 + 0.017 * ((k * 7 % 13) as f64) + 0.0137).collect();
        let scan = LidarScan { ranges: ranges.clone(), max_range: 5.0 };
        let neighbors = vec![(1.73, 0.41), (3.91, 2.3)];
        let goal = (8.0, 0.77);

        let original = build_channel_map(&scan, &neighbors, goal, &cfg);

        // Rotate everything by +90 degrees: beam k of the rotated scene sees
        // what beam k-90 saw.
        let rot_ranges: Vec<f64> = (0..360).map(|k| ranges[(k + 360 - 90) % 360]).collect();
        let rot_scan = LidarScan { ranges: rot_ranges, max_range: 5.0 };
        let quarter = std::f64::consts::FRAC_PI_2;
        let rot_neighbors: Vec<(f64, f64)> = neighbors.iter().map(|&(r, t)| (r, wrap_angle(t + quarter))).collect();
        let rot_goal = (goal.0, wrap_angle(goal.1 + quarter));
        let rotated = build_channel_map(&rot_scan, &rot_neighbors, rot_goal, &cfg);

        // (x, y) -> (-y, x) maps cell (ix, iy) -> (d-1-iy, ix).
        let d = cfg.d;
        for ch in 0..3 {
            for iy in 0..d {
                for ix in 0..d {
                    let want = original.get(ch, iy, ix);
                    let got = rotated.get(ch, ix, d - 1 - iy);
                    assert_eq!(want, got, "channel {ch} cell ({ix},{iy})");
                }
            }
        }
    }
}
