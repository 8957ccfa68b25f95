//! Configuration tree shared by the library and the CLI.
//!
//! Every field has a default; a config file overrides the defaults and
//! command-line flags override the file.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Obstacle orientation distribution for map synthesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AngleMode {
    /// θ = (π/2)·k with k ~ Binomial(2, 0.5), so θ ∈ {0, π/2, π}.
    Simple,
    /// θ ~ Uniform(0, 2π).
    Complex,
}

impl std::str::FromStr for AngleMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simple" => Ok(AngleMode::Simple),
            "complex" => Ok(AngleMode::Complex),
            other => Err(Error::Config(format!("unknown angle mode '{other}'"))),
        }
    }
}

/// Map synthesis parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MapGenConfig {
    /// Side length of the square environment in meters.
    pub map_size: f64,
    /// Occupancy grid resolution in meters per cell.
    pub resolution: f64,
    pub obstacle_count: usize,
    pub angle_mode: AngleMode,
    pub seed: u64,
}

impl Default for MapGenConfig {
    fn default() -> Self {
        Self {
            map_size: 20.0,
            resolution: 0.05,
            obstacle_count: 40,
            angle_mode: AngleMode::Simple,
            seed: 0,
        }
    }
}

impl MapGenConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.map_size > 0.0) || !(self.resolution > 0.0) {
            return Err(Error::Config("map_size and resolution must be positive".into()));
        }
        Ok(())
    }
}

/// Observation construction parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PerceptConfig {
    /// Channel map side length in cells; the map spans the FOV disc, so the
    /// cell size is `2·r_fov / d`.
    pub d: usize,
    /// Lidar / sensing radius in meters.
    pub r_fov: f64,
    /// Communication radius in meters.
    pub r_com: f64,
    /// Half-width of the boundary arc marking an out-of-view goal, degrees.
    pub goal_arc_deg: f64,
}

impl Default for PerceptConfig {
    fn default() -> Self {
        Self { d: 100, r_fov: 5.0, r_com: 5.0, goal_arc_deg: 3.0 }
    }
}

impl PerceptConfig {
    pub fn cell_size(&self) -> f64 {
        2.0 * self.r_fov / self.d as f64
    }
}

/// How "goal reached" is decided during expert episodes and rollouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GoalRule {
    /// Reached when the Euclidean distance drops to `goal_tolerance`.
    Distance,
    /// Reached as soon as the goal enters the field of view.
    FovVisible,
}

/// Expert labeling parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExpertConfig {
    /// Fixed forward step length in meters.
    pub l_step: f64,
    pub goal_tolerance: f64,
    /// Robot collision radius ρ; the occupancy grid is inflated by it.
    pub inflation: f64,
    pub goal_rule: GoalRule,
    /// Per-episode step budget; `None` derives 4·ceil(diagonal / l_step).
    pub step_budget: Option<usize>,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        Self {
            l_step: 0.5,
            goal_tolerance: 0.5,
            inflation: 0.2,
            goal_rule: GoalRule::Distance,
            step_budget: None,
        }
    }
}

impl ExpertConfig {
    /// Distance at which a robot counts as having reached its goal.
    pub fn reach_distance(&self, r_fov: f64) -> f64 {
        match self.goal_rule {
            GoalRule::Distance => self.goal_tolerance,
            GoalRule::FovVisible => r_fov,
        }
    }
}

/// Dataset generation parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub n_maps: usize,
    pub robots_per_map: usize,
    /// Lattice spacing for grid placement, meters.
    pub grid_spacing: f64,
    /// Minimum pairwise distance among starts and among goals, meters.
    /// Above twice the robot radius so placements begin contact-free.
    pub min_separation: f64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self { n_maps: 60, robots_per_map: 9, grid_spacing: 3.0, min_separation: 1.0, seed: 0 }
    }
}

/// Geometric basis sizes for the interaction layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BasisConfig {
    /// Cutoff distance c; edges never exceed it (c = r_com).
    pub cutoff: f64,
    pub n_bbf: usize,
    pub n_sbf_radial: usize,
    pub l_sbf_max: usize,
}

impl Default for BasisConfig {
    fn default() -> Self {
        Self { cutoff: 5.0, n_bbf: 8, n_sbf_radial: 6, l_sbf_max: 6 }
    }
}

impl BasisConfig {
    pub fn sbf_len(&self) -> usize {
        self.n_sbf_radial * (self.l_sbf_max + 1)
    }
}

/// Which geometry encoding gates neighbor messages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PositionEncoding {
    /// No geometry gates: messages ignore edge (r, θ).
    None,
    /// Gaussian radial basis over distance only.
    Rbf,
    /// Bessel radial basis and spherical (distance, angle) basis.
    BbfSbf,
}

impl std::str::FromStr for PositionEncoding {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(PositionEncoding::None),
            "rbf" => Ok(PositionEncoding::Rbf),
            "bbf-sbf" => Ok(PositionEncoding::BbfSbf),
            other => Err(Error::Config(format!("unknown position encoding '{other}'"))),
        }
    }
}

/// Network architecture selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    /// Encoder + action mapper only; no interaction layers.
    Cnn,
    /// Encoder, `hops` interaction layers, action mapper.
    GeoGnn,
}

impl std::str::FromStr for Arch {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cnn" => Ok(Arch::Cnn),
            "geognn" => Ok(Arch::GeoGnn),
            other => Err(Error::Config(format!("unknown model '{other}'"))),
        }
    }
}

pub const ACTION_COUNT: usize = 9;

/// Model hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub arch: Arch,
    /// Feature dimension F.
    pub feature_dim: usize,
    /// Number of interaction layers (communication hops), 1..=3 typical.
    pub hops: usize,
    pub position_encoding: PositionEncoding,
    pub basis: BasisConfig,
    /// Channel map side length the encoder is built for.
    pub input_d: usize,
    /// Output channels of the three encoder blocks.
    pub encoder_widths: [usize; 3],
    /// Parameter initialization seed.
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            arch: Arch::GeoGnn,
            feature_dim: 128,
            hops: 2,
            position_encoding: PositionEncoding::BbfSbf,
            basis: BasisConfig::default(),
            input_d: 100,
            encoder_widths: [32, 64, 128],
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 {
            return Err(Error::Config("feature_dim must be positive".into()));
        }
        if self.arch == Arch::GeoGnn && self.hops == 0 {
            return Err(Error::Config("geognn requires hops >= 1".into()));
        }
        if self.input_d < 8 {
            return Err(Error::Config(format!(
                "channel map size d={} is incompatible with three 2x poolings",
                self.input_d
            )));
        }
        Ok(())
    }

    /// Interaction layer count actually built (0 for the CNN baseline).
    pub fn layer_count(&self) -> usize {
        match self.arch {
            Arch::Cnn => 0,
            Arch::GeoGnn => self.hops,
        }
    }
}

/// Plateau scheduler parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SchedulerConfig {
    pub factor: f64,
    pub patience: usize,
    /// Relative improvement threshold.
    pub threshold: f64,
    pub min_lr: f64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self { factor: 0.5, patience: 5, threshold: 1e-4, min_lr: 1e-6 }
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub iterations_per_epoch: usize,
    pub epochs: usize,
    pub seed: u64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub scheduler: SchedulerConfig,
    /// When true, the loss also covers neighbor labels inside each ego-graph.
    pub full_graph_supervision: bool,
    pub restarts: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 1e-4,
            batch_size: 16,
            iterations_per_epoch: 1000,
            epochs: 100,
            seed: 0,
            betas: (0.9, 0.999),
            eps: 1e-8,
            scheduler: SchedulerConfig::default(),
            full_graph_supervision: false,
            restarts: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.batch_size == 0 || self.restarts == 0 {
            return Err(Error::Config("lr, batch_size and restarts must be positive".into()));
        }
        Ok(())
    }
}

/// Closed-loop execution parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RolloutConfig {
    pub l_step: f64,
    /// `None` derives 4·ceil(map diagonal / l_step).
    pub max_steps: Option<usize>,
    /// Visited-cell history length H for loop detection.
    pub loop_window: usize,
    /// A candidate cell already seen this many times in the window is rejected.
    pub loop_repeat_threshold: usize,
    pub goal_tolerance: f64,
    pub robot_radius: f64,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            l_step: 0.5,
            max_steps: None,
            loop_window: 8,
            loop_repeat_threshold: 2,
            goal_tolerance: 0.5,
            robot_radius: 0.2,
        }
    }
}

impl RolloutConfig {
    pub fn effective_max_steps(&self, map_size: f64) -> usize {
        self.max_steps.unwrap_or_else(|| {
            let diag = map_size * std::f64::consts::SQRT_2;
            4 * (diag / self.l_step).ceil() as usize
        })
    }
}

/// Merged configuration tree for a run.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub world: MapGenConfig,
    pub percept: PerceptConfig,
    pub expert: ExpertConfig,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub rollout: RolloutConfig,
}

impl RunConfig {
    pub fn from_json_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn partial_json_overrides() {
        let cfg: RunConfig =
            serde_json::from_str(r#"{"world": {"map_size": 10.0}, "model": {"hops": 3}}"#).unwrap();
        assert_eq!(cfg.world.map_size, 10.0);
        assert_eq!(cfg.world.resolution, 0.05);
        assert_eq!(cfg.model.hops, 3);
        assert_eq!(cfg.model.feature_dim, 128);
    }

    #[test]
    fn enums_round_trip() {
        let s = serde_json::to_string(&PositionEncoding::BbfSbf).unwrap();
        assert_eq!(s, "\"bbf-sbf\"");
        let e: PositionEncoding = serde_json::from_str("\"rbf\"").unwrap();
        assert_eq!(e, PositionEncoding::Rbf);
    }
}
