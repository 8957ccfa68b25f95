//! Closed-loop decentralized execution with safety filtering.
//!
//! Each decision step runs four barrier phases: sense (channel maps from
//! ground truth), h+1 synchronous exchange rounds (features over the comm
//! graph), safety filtering in priority order, and a simultaneous move of
//! l_step in every robot's final direction. The exchange is the centralized
//! forward pass restricted to the communication graph, so per-robot and
//! batched inference agree to machine precision.
//!
//! The safety filter walks candidate actions best-first and keeps the first
//! one that passes three checks: (a) static, the swept capsule stays clear of
//! obstacles; (b) dynamic, the endpoint keeps more than 2ρ from every
//! comm-range neighbor's current position and from every lower-index
//! neighbor's announced endpoint; (c) loop, the endpoint's cell was not
//! already visited `loop_repeat_threshold` times in the last `loop_window`
//! steps. Stop is exempt from (a) and (c) and is the terminal fallback.
//!
//! Rule (b) checks current positions of *all* comm neighbors, not only
//! lower-index ones. Together with start separations above 2ρ this makes the
//! no-contact audit an induction rather than a hope: a mover clears every
//! neighbor's current spot and every earlier decider's endpoint, and a
//! stopper sits where all later deciders must already avoid.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::config::{ExpertConfig, PerceptConfig, RolloutConfig, ACTION_COUNT};
use crate::expert::{Expert, Planner};
use crate::model::Network;
use crate::percept::{self, build_comm_graph, ChannelMap, CommGraph};
use crate::util::{self, ACTION_DIRS, STOP_ACTION};
use crate::world::{Point, RobotPose, WorldMap};
use crate::{Error, Result};

/// All nine actions ordered best-first for the safety filter.
pub type ActionRank = [u8; ACTION_COUNT];

/// Where a robot's candidate ordering comes from. Implementations must rank
/// every robot in `poses` and place the proposed action first.
pub trait RolloutPolicy {
    fn rank(&self, world: &WorldMap, poses: &[RobotPose]) -> Result<Vec<ActionRank>>;
}

/// Actions by descending logit, ties to the lower id. Softmax is monotone,
/// so logit order is probability order and the head agrees with `action_of`.
pub fn rank_by_logits(logits: &[f64]) -> ActionRank {
    debug_assert_eq!(logits.len(), ACTION_COUNT);
    let mut ids: Vec<usize> = (0..ACTION_COUNT).collect();
    ids.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    let mut rank = [0u8; ACTION_COUNT];
    for (slot, id) in rank.iter_mut().zip(ids) {
        *slot = id as u8;
    }
    rank
}

/// Post-step position for an action taken from `pose`.
pub fn action_endpoint(pose: Point, action: u8, l_step: f64) -> Point {
    if action == STOP_ACTION {
        return pose;
    }
    let (ux, uy) = ACTION_DIRS[action as usize];
    Point::new(pose.x + l_step * ux, pose.y + l_step * uy)
}

/// Loop-detection cell of a position on the l_step grid.
pub fn cell_of(p: Point, l_step: f64) -> (i64, i64) {
    ((p.x / l_step).floor() as i64, (p.y / l_step).floor() as i64)
}

/// One decision step of the network policy: maps, graph, per-robot logits.
#[derive(Debug)]
pub struct Decision {
    pub maps: Vec<ChannelMap>,
    pub graph: CommGraph,
    pub logits: Vec<Vec<f64>>,
}

/// Decentralized inference: every robot encodes its own observation and
/// exchanges features with comm-range neighbors for `hops` rounds.
pub struct NetworkPolicy<'a> {
    net: &'a Network,
    percept: PerceptConfig,
}

impl<'a> NetworkPolicy<'a> {
    pub fn new(net: &'a Network, percept: PerceptConfig) -> Self {
        Self { net, percept }
    }

    /// Run the synchronous exchange protocol once. Round 0 broadcasts
    /// f⁰ = encode(map); round l folds each inbox of level l−1 features
    /// through the interaction layer. Neighbor messages accumulate in edge
    /// order, matching the centralized aggregation term for term.
    pub fn decide(&self, world: &WorldMap, poses: &[RobotPose]) -> Result<Decision> {
        let graph = build_comm_graph(poses, self.percept.r_com)?;
        let maps = observe_all(world, poses, &self.percept)?;
        let mut feats = maps
            .iter()
            .map(|m| self.net.encode_one(m))
            .collect::<Result<Vec<_>>>()?;
        for level in 0..self.net.hops() {
            let mut next = Vec::with_capacity(feats.len());
            for (i, f_i) in feats.iter().enumerate() {
                // Inbox of robot i at this round: one (sender, feature)
                // message per incident edge, consumed as it arrives.
                let mut msg_sum = vec![0.0; f_i.len()];
                for edge in graph.neighbors(i) {
                    let msg = self.net.message_one(level, &feats[edge.dst], edge.r, edge.theta)?;
                    for (acc, m) in msg_sum.iter_mut().zip(msg) {
                        *acc += m;
                    }
                }
                next.push(self.net.update_one(level, f_i, &msg_sum)?);
            }
            feats = next;
        }
        let logits = feats
            .iter()
            .map(|f| self.net.head_one(f))
            .collect::<Result<Vec<_>>>()?;
        Ok(Decision { maps, graph, logits })
    }
}

impl RolloutPolicy for NetworkPolicy<'_> {
    fn rank(&self, world: &WorldMap, poses: &[RobotPose]) -> Result<Vec<ActionRank>> {
        let decision = self.decide(world, poses)?;
        Ok(decision.logits.iter().map(|l| rank_by_logits(l)).collect())
    }
}

/// Expert lookahead as the ranking model: moves by ascending estimated total
/// path length (ties toward the goal bearing, then lower id), stop after the
/// finite ones, blocked or dead-end moves last.
pub struct ExpertPolicy<'a> {
    expert: Expert<'a>,
}

impl<'a> ExpertPolicy<'a> {
    pub fn new(world: &'a WorldMap, cfg: &ExpertConfig) -> Self {
        Self { expert: Expert::new(world, cfg) }
    }
}

impl RolloutPolicy for ExpertPolicy<'_> {
    fn rank(&self, _world: &WorldMap, poses: &[RobotPose]) -> Result<Vec<ActionRank>> {
        Ok(poses
            .iter()
            .map(|p| {
                let lengths = self.expert.action_lengths(p.position, p.goal);
                let bearing = (p.goal.y - p.position.y).atan2(p.goal.x - p.position.x);
                let mut moves: Vec<usize> = (0..ACTION_COUNT - 1).collect();
                moves.sort_by(|&a, &b| {
                    lengths[a]
                        .total_cmp(&lengths[b])
                        .then_with(|| {
                            let da = util::angle_diff(util::action_angle(a), bearing);
                            let db = util::angle_diff(util::action_angle(b), bearing);
                            da.total_cmp(&db)
                        })
                        .then(a.cmp(&b))
                });
                let split = moves.iter().position(|&m| !lengths[m].is_finite());
                let finite = split.unwrap_or(moves.len());
                let mut rank = [STOP_ACTION; ACTION_COUNT];
                for (slot, &m) in rank.iter_mut().zip(&moves[..finite]) {
                    *slot = m as u8;
                }
                for (slot, &m) in rank[finite + 1..].iter_mut().zip(&moves[finite..]) {
                    *slot = m as u8;
                }
                rank
            })
            .collect())
    }
}

/// Mutable per-robot episode state. Exchange inboxes are transient to the
/// rounds inside the policy; the announced endpoint lives in the filter
/// phase, where deciders publish it in priority order.
#[derive(Debug, Clone)]
pub struct RobotRuntime {
    pub pose: Point,
    pub goal: Point,
    pub reached: bool,
    pub path_length: f64,
    /// Decision steps until reached; None while unreached.
    pub reached_step: Option<usize>,
    /// Cells occupied after each step, oldest first, at most `loop_window`.
    history: VecDeque<(i64, i64)>,
}

impl RobotRuntime {
    pub fn new(pose: &RobotPose, cfg: &RolloutConfig) -> Self {
        let mut rt = Self {
            pose: pose.position,
            goal: pose.goal,
            reached: false,
            path_length: 0.0,
            reached_step: None,
            history: VecDeque::with_capacity(cfg.loop_window + 1),
        };
        rt.record_cell(cell_of(rt.pose, cfg.l_step), cfg.loop_window);
        if rt.pose.dist(rt.goal) <= cfg.goal_tolerance {
            rt.reached = true;
            rt.reached_step = Some(0);
        }
        rt
    }

    pub fn cell_visits(&self, cell: (i64, i64)) -> usize {
        self.history.iter().filter(|&&c| c == cell).count()
    }

    fn record_cell(&mut self, cell: (i64, i64), window: usize) {
        self.history.push_back(cell);
        while self.history.len() > window {
            self.history.pop_front();
        }
    }
}

/// A comm-range neighbor as seen by the filter: where it is now, and where
/// it will end the step if it already decided (lower index).
#[derive(Debug, Clone, Copy)]
pub struct NeighborIntent {
    pub position: Point,
    pub announced: Option<Point>,
}

/// First candidate in `rank` that passes the three checks; stop if none do.
pub fn safety_filter(
    world: &WorldMap,
    robot: &RobotRuntime,
    rank: &ActionRank,
    neighbors: &[NeighborIntent],
    cfg: &RolloutConfig,
) -> u8 {
    debug_assert!(
        {
            let mut seen = [false; ACTION_COUNT];
            rank.iter().all(|&a| {
                let id = a as usize;
                id < ACTION_COUNT && !std::mem::replace(&mut seen[id], true)
            })
        },
        "rank must be a permutation of the action set"
    );
    let clearance = 2.0 * cfg.robot_radius;
    for &cand in rank {
        let endpoint = action_endpoint(robot.pose, cand, cfg.l_step);
        if cand != STOP_ACTION && world.segment_collides(robot.pose, endpoint, cfg.robot_radius) {
            continue;
        }
        let crowded = neighbors.iter().any(|n| {
            endpoint.dist(n.position) <= clearance
                || n.announced.is_some_and(|a| endpoint.dist(a) <= clearance)
        });
        if crowded {
            continue;
        }
        if cand != STOP_ACTION
            && robot.cell_visits(cell_of(endpoint, cfg.l_step)) >= cfg.loop_repeat_threshold
        {
            continue;
        }
        return cand;
    }
    STOP_ACTION
}

/// One robot's row in a step trace: pose at the step start, the model's
/// proposal, and the action the filter let through.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub x: f64,
    pub y: f64,
    pub proposed: u8,
    pub action: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub step: usize,
    pub robots: Vec<TraceRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub robot_id: usize,
    /// Executed path length; grows by l_step per move.
    pub path_length: f64,
    /// A* length start → goal on the inflated grid, fixed per episode.
    pub expert_length: f64,
    pub reached: bool,
    /// Decision steps until reached, or steps executed when not.
    pub steps: usize,
}

#[derive(Debug)]
pub struct EpisodeOutcome {
    pub results: Vec<EpisodeResult>,
    pub trace: Vec<StepTrace>,
}

/// Run one episode to completion or the step budget.
///
/// Robot ids double as filter priorities and must be 0..n in order. Goals
/// must be reachable; `expert_length` is planned once up front. A robot is
/// reached within `goal_tolerance` of its goal and executes stop forever
/// after, while still occupying space and relaying features.
pub fn run_episode(
    world: &WorldMap,
    starts: &[RobotPose],
    policy: &dyn RolloutPolicy,
    cfg: &RolloutConfig,
    percept: &PerceptConfig,
) -> Result<EpisodeOutcome> {
    if starts.is_empty() {
        return Err(Error::Data("episode needs at least one robot".into()));
    }
    if starts.iter().enumerate().any(|(i, p)| p.id != i) {
        return Err(Error::Data("robot ids must be 0..n in order".into()));
    }
    let planner = Planner::new(world, cfg.robot_radius);
    let expert_lengths = starts
        .iter()
        .map(|p| planner.path_length(p.position, p.goal).ok_or(Error::UnreachableGoal))
        .collect::<Result<Vec<_>>>()?;

    let n = starts.len();
    let mut runtimes: Vec<RobotRuntime> =
        starts.iter().map(|p| RobotRuntime::new(p, cfg)).collect();
    let (w, h) = world.bounds.extent();
    let budget = cfg.effective_max_steps(w.max(h));
    let mut trace = Vec::new();
    let mut steps_run = 0;

    for step in 0..budget {
        if runtimes.iter().all(|r| r.reached) {
            break;
        }
        let poses: Vec<RobotPose> = runtimes
            .iter()
            .enumerate()
            .map(|(id, r)| RobotPose { id, position: r.pose, goal: r.goal })
            .collect();
        let ranks = policy.rank(world, &poses)?;
        if ranks.len() != n {
            return Err(Error::Data(format!(
                "policy ranked {} robots, expected {n}",
                ranks.len()
            )));
        }

        // Filter in priority order; endpoints double as announcements.
        let mut actions = vec![STOP_ACTION; n];
        let mut proposed = vec![STOP_ACTION; n];
        let mut endpoints: Vec<Point> = runtimes.iter().map(|r| r.pose).collect();
        for i in 0..n {
            if runtimes[i].reached {
                continue;
            }
            proposed[i] = ranks[i][0];
            let neighbors: Vec<NeighborIntent> = (0..n)
                .filter(|&j| j != i)
                .filter(|&j| runtimes[i].pose.dist(runtimes[j].pose) < percept.r_com)
                .map(|j| NeighborIntent {
                    position: runtimes[j].pose,
                    announced: (j < i).then(|| endpoints[j]),
                })
                .collect();
            actions[i] = safety_filter(world, &runtimes[i], &ranks[i], &neighbors, cfg);
            endpoints[i] = action_endpoint(runtimes[i].pose, actions[i], cfg.l_step);
        }

        trace.push(StepTrace {
            step,
            robots: runtimes
                .iter()
                .zip(proposed.iter().zip(&actions))
                .map(|(r, (&p, &a))| TraceRow { x: r.pose.x, y: r.pose.y, proposed: p, action: a })
                .collect(),
        });

        // Simultaneous move, then reach checks against the new poses.
        for (i, rt) in runtimes.iter_mut().enumerate() {
            if rt.reached {
                continue;
            }
            if actions[i] != STOP_ACTION {
                rt.pose = endpoints[i];
                rt.path_length += cfg.l_step;
            }
            rt.record_cell(cell_of(rt.pose, cfg.l_step), cfg.loop_window);
            if rt.pose.dist(rt.goal) <= cfg.goal_tolerance {
                rt.reached = true;
                rt.reached_step = Some(step + 1);
            }
        }
        steps_run = step + 1;
    }

    let results = runtimes
        .iter()
        .enumerate()
        .map(|(id, rt)| EpisodeResult {
            robot_id: id,
            path_length: rt.path_length,
            expert_length: expert_lengths[id],
            reached: rt.reached,
            steps: rt.reached_step.unwrap_or(steps_run),
        })
        .collect();
    Ok(EpisodeOutcome { results, trace })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n_robots: usize,
    pub n_reached: usize,
    pub success_rate: f64,
    /// Mean percent detour of reached robots; None when every reached robot
    /// started on its goal (l_expert = 0 is excluded).
    pub flowtime_increase: Option<f64>,
}

/// Aggregate FT and SR over per-robot results from any number of episodes.
pub fn metrics(results: &[EpisodeResult]) -> Result<Metrics> {
    if results.is_empty() {
        return Err(Error::Data("metrics over empty results".into()));
    }
    let n_reached = results.iter().filter(|r| r.reached).count();
    let detours: Vec<f64> = results
        .iter()
        .filter(|r| r.reached && r.expert_length > 0.0)
        .map(|r| 100.0 * (r.path_length - r.expert_length) / r.expert_length)
        .collect();
    Ok(Metrics {
        n_robots: results.len(),
        n_reached,
        success_rate: n_reached as f64 / results.len() as f64,
        flowtime_increase: (!detours.is_empty())
            .then(|| detours.iter().sum::<f64>() / detours.len() as f64),
    })
}

/// Post-hoc safety audit of a recorded episode.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AuditReport {
    /// Executed move segments whose capsule hits an obstacle or the border.
    pub static_collisions: usize,
    /// Robot pairs ending a step within 2ρ of each other.
    pub priority_violations: usize,
    /// Non-stop actions taken by robots already within goal tolerance.
    pub reached_moves: usize,
}

impl AuditReport {
    pub fn clean(&self) -> bool {
        self.static_collisions == 0 && self.priority_violations == 0 && self.reached_moves == 0
    }
}

/// Replay a trace against the world and count safety violations. `starts`
/// supply the goals for the reached-robots-never-move check.
pub fn audit_trace(
    world: &WorldMap,
    starts: &[RobotPose],
    trace: &[StepTrace],
    cfg: &RolloutConfig,
) -> AuditReport {
    let mut report = AuditReport::default();
    let clearance = 2.0 * cfg.robot_radius;
    for step in trace {
        let endpoints: Vec<Point> = step
            .robots
            .iter()
            .map(|r| action_endpoint(Point::new(r.x, r.y), r.action, cfg.l_step))
            .collect();
        for (i, row) in step.robots.iter().enumerate() {
            let pose = Point::new(row.x, row.y);
            if row.action != STOP_ACTION
                && world.segment_collides(pose, endpoints[i], cfg.robot_radius)
            {
                report.static_collisions += 1;
            }
            for end in &endpoints[..i] {
                if endpoints[i].dist(*end) <= clearance {
                    report.priority_violations += 1;
                }
            }
            if pose.dist(starts[i].goal) <= cfg.goal_tolerance && row.action != STOP_ACTION {
                report.reached_moves += 1;
            }
        }
    }
    report
}

/// Per-robot channel maps from ground truth, mirroring dataset recording:
/// quantized scan, FOV teammates from true positions, polar goal offset.
pub fn observe_all(
    world: &WorldMap,
    poses: &[RobotPose],
    cfg: &PerceptConfig,
) -> Result<Vec<ChannelMap>> {
    poses
        .iter()
        .enumerate()
        .map(|(i, me)| {
            let mut scan = world.raycast_scan(me.position, cfg.r_fov)?;
            scan.quantize();
            let mut fov = Vec::new();
            for (j, other) in poses.iter().enumerate() {
                if j == i || other.position == me.position {
                    continue;
                }
                let (r, theta) = percept::relative_geometry(me.position, other.position)?;
                if r <= cfg.r_fov {
                    fov.push((r, theta));
                }
            }
            let goal_rel = if me.position == me.goal {
                (0.0, 0.0)
            } else {
                percept::relative_geometry(me.position, me.goal)?
            };
            Ok(percept::build_channel_map(&scan, &fov, goal_rel, cfg))
        })
        .collect()
}
