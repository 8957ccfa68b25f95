//! Dataset generation: maps, robot placement, expert episodes, NDJSON files.
//!
//! A dataset is a directory: `manifest.json`, `maps/map_NNNN.json`, and
//! `samples/map_NNNN.ndjson` with one Sample per line. Splits are assigned
//! per map (3:1:1 by index block), never splitting one map's samples, so no
//! split ever sees another split's world geometry.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{AngleMode, RunConfig};
use crate::expert::{generate_episode_samples, Episode, Expert, Sample};
use crate::util::{self, ACTION_DIRS};
use crate::world::{generate_map, Point, RobotPose, WorldMap};
use crate::{Error, Result};

const TAG_MAP: u64 = 0x6d61_7073;
const TAG_PLACE: u64 = 0x706c_6163;
const PLACEMENT_ATTEMPTS: usize = 200;

/// The four expert-data combinations of obstacle angles × robot placement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetType {
    SimpleGrid,
    SimpleRandom,
    ComplexGrid,
    ComplexRandom,
}

impl DatasetType {
    pub const ALL: [DatasetType; 4] = [
        DatasetType::SimpleGrid,
        DatasetType::SimpleRandom,
        DatasetType::ComplexGrid,
        DatasetType::ComplexRandom,
    ];

    pub fn angle_mode(self) -> AngleMode {
        match self {
            DatasetType::SimpleGrid | DatasetType::SimpleRandom => AngleMode::Simple,
            DatasetType::ComplexGrid | DatasetType::ComplexRandom => AngleMode::Complex,
        }
    }

    pub fn grid_placement(self) -> bool {
        matches!(self, DatasetType::SimpleGrid | DatasetType::ComplexGrid)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DatasetType::SimpleGrid => "simple-grid",
            DatasetType::SimpleRandom => "simple-random",
            DatasetType::ComplexGrid => "complex-grid",
            DatasetType::ComplexRandom => "complex-random",
        }
    }
}

impl fmt::Display for DatasetType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for DatasetType {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        DatasetType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown dataset type '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Test,
    Val,
}

impl Split {
    /// Per-map assignment: each block of five maps splits 3:1:1.
    pub fn of_map(map_id: usize) -> Split {
        match map_id % 5 {
            0 | 1 | 2 => Split::Train,
            3 => Split::Test,
            _ => Split::Val,
        }
    }
}

/// One generated map with its episode file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MapEntry {
    pub map_id: usize,
    pub map_file: PathBuf,
    pub samples_file: PathBuf,
    pub n_samples: usize,
    pub split: Split,
    /// True when the episode hit its step budget before all robots stopped.
    pub truncated: bool,
    /// Start and goal of every robot, for replaying the same episode.
    pub robots: Vec<RobotPose>,
}

/// Dataset directory index plus the generation-time config snapshot.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub dataset_type: DatasetType,
    pub config: RunConfig,
    pub maps: Vec<MapEntry>,
}

impl DatasetManifest {
    pub fn entries(&self, split: Split) -> impl Iterator<Item = &MapEntry> {
        self.maps.iter().filter(move |e| e.split == split)
    }

    /// Sample counts as (train, test, val).
    pub fn split_counts(&self) -> (usize, usize, usize) {
        let count = |s: Split| self.entries(s).map(|e| e.n_samples).sum();
        (count(Split::Train), count(Split::Test), count(Split::Val))
    }
}

/// Centered lattice of points at `spacing`, row-major from the low corner.
fn lattice(world: &WorldMap, spacing: f64) -> Vec<Point> {
    let (w, h) = world.bounds.extent();
    let kx = (w / spacing).floor().max(1.0) as usize;
    let ky = (h / spacing).floor().max(1.0) as usize;
    let x0 = world.bounds.min.x + (w - (kx - 1) as f64 * spacing) / 2.0;
    let y0 = world.bounds.min.y + (h - (ky - 1) as f64 * spacing) / 2.0;
    (0..ky)
        .flat_map(|iy| {
            (0..kx).map(move |ix| {
                Point::new(x0 + ix as f64 * spacing, y0 + iy as f64 * spacing)
            })
        })
        .collect()
}

/// Clearance plus planner visibility: the point itself is free and its grid
/// cell survives inflation, so the expert can plan from it.
fn point_ok(world: &WorldMap, expert: &Expert, p: Point, radius: f64) -> bool {
    if world.segment_collides(p, p, radius) {
        return false;
    }
    let grid = expert.planner().grid();
    matches!(grid.cell_of(p), Some((ix, iy)) if !grid.occupied(ix, iy))
}

/// At least one of the eight step moves is executable from `p`.
fn can_step(world: &WorldMap, expert: &Expert, p: Point, l_step: f64, radius: f64) -> bool {
    let grid = expert.planner().grid();
    ACTION_DIRS.iter().any(|&(ux, uy)| {
        let q = Point::new(p.x + l_step * ux, p.y + l_step * uy);
        !world.segment_collides(p, q, radius)
            && matches!(grid.cell_of(q), Some((ix, iy)) if !grid.occupied(ix, iy))
    })
}

fn min_dist(points: &[Point], p: Point) -> f64 {
    points.iter().map(|q| q.dist(p)).fold(f64::INFINITY, f64::min)
}

/// Starts per the dataset type, then one reachable goal per start. Starts and
/// goals each keep `min_separation` pairwise so episodes begin and end free
/// of robot-robot contact.
pub fn place_robots(
    world: &WorldMap,
    dtype: DatasetType,
    cfg: &RunConfig,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<Vec<RobotPose>> {
    let expert = Expert::new(world, &cfg.expert);
    let radius = cfg.expert.inflation;
    let n = cfg.dataset.robots_per_map;

    let mut starts: Vec<Point> = Vec::with_capacity(n);
    if dtype.grid_placement() {
        for p in lattice(world, cfg.dataset.grid_spacing) {
            if starts.len() == n {
                break;
            }
            if point_ok(world, &expert, p, radius)
                && can_step(world, &expert, p, cfg.expert.l_step, radius)
            {
                starts.push(p);
            }
        }
        if starts.len() < n {
            return Err(Error::NoFreePosition { attempts: 0 });
        }
    } else {
        let mut attempts = 0;
        while starts.len() < n {
            if attempts == PLACEMENT_ATTEMPTS {
                return Err(Error::NoFreePosition { attempts });
            }
            attempts += 1;
            let p = world.sample_free_position(radius, rng)?;
            if min_dist(&starts, p) >= cfg.dataset.min_separation
                && point_ok(world, &expert, p, radius)
                && can_step(world, &expert, p, cfg.expert.l_step, radius)
            {
                starts.push(p);
            }
        }
    }

    let mut goals: Vec<Point> = Vec::with_capacity(n);
    for &start in &starts {
        // One flood per start answers reachability for every candidate goal.
        let field = expert.planner().field(start).ok_or(Error::UnreachableGoal)?;
        let mut placed = false;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let g = world.sample_free_position(radius, rng)?;
            let reachable = expert
                .planner()
                .grid()
                .cell_of(g)
                .and_then(|c| field.steps_from(c))
                .is_some();
            if reachable && min_dist(&goals, g) >= cfg.dataset.min_separation {
                goals.push(g);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::NoFreePosition { attempts: PLACEMENT_ATTEMPTS });
        }
    }

    Ok(starts
        .into_iter()
        .zip(goals)
        .enumerate()
        .map(|(id, (position, goal))| RobotPose { id, position, goal })
        .collect())
}

/// Map generation plus placement, with retries on derived seeds. A crowded
/// map or one whose obstacles block the placement (grid lattices have zero
/// slack: every point must be free) is discarded for the next seed variant.
fn generate_placed_map(
    dtype: DatasetType,
    cfg: &RunConfig,
    master: u64,
    map_id: usize,
) -> Result<(WorldMap, Vec<RobotPose>)> {
    let mut map_cfg = cfg.world.clone();
    map_cfg.angle_mode = dtype.angle_mode();
    let mut last = Error::MapTooCrowded { attempts: 0 };
    for attempt in 0..48u64 {
        map_cfg.seed = util::subseed(master, TAG_MAP, (map_id as u64) << 8 | attempt);
        let world = match generate_map(&map_cfg) {
            Ok(world) => world,
            Err(e @ Error::MapTooCrowded { .. }) => {
                last = e;
                continue;
            }
            Err(e) => return Err(e),
        };
        let mut rng = util::rng(master, TAG_PLACE, map_id as u64);
        match place_robots(&world, dtype, cfg, &mut rng) {
            Ok(robots) => return Ok((world, robots)),
            Err(e @ Error::NoFreePosition { .. }) => {
                last = e;
                continue;
            }
            Err(e) => return Err(e),
        }
    }
    Err(last)
}

/// Generate one map's episode. Exposed for callers that replay single maps.
pub fn generate_map_episode(
    dtype: DatasetType,
    cfg: &RunConfig,
    master: u64,
    map_id: usize,
) -> Result<(WorldMap, Vec<RobotPose>, Episode)> {
    let (world, robots) = generate_placed_map(dtype, cfg, master, map_id)?;
    let episode = generate_episode_samples(&world, &robots, map_id, &cfg.expert, &cfg.percept)?;
    Ok((world, robots, episode))
}

/// Generate the full dataset under `out`. Maps are independent work units;
/// per-map seeds make the output identical for any thread count.
pub fn generate_dataset(
    out: &Path,
    dtype: DatasetType,
    cfg: &RunConfig,
    threads: usize,
) -> Result<DatasetManifest> {
    cfg.validate()?;
    let master = cfg.dataset.seed;
    let n_maps = cfg.dataset.n_maps;
    fs::create_dir_all(out.join("maps"))?;
    fs::create_dir_all(out.join("samples"))?;

    let results = util::map_indexed(n_maps, threads, |m| -> Result<(MapEntry, String, String)> {
        let (world, robots, episode) = generate_map_episode(dtype, cfg, master, m)?;
        let map_json = serde_json::to_string_pretty(&world.to_json())?;
        let mut lines = String::new();
        for s in &episode.samples {
            lines.push_str(&serde_json::to_string(s)?);
            lines.push('\n');
        }
        let entry = MapEntry {
            map_id: m,
            map_file: PathBuf::from(format!("maps/map_{m:04}.json")),
            samples_file: PathBuf::from(format!("samples/map_{m:04}.ndjson")),
            n_samples: episode.samples.len(),
            split: Split::of_map(m),
            truncated: episode.truncated,
            robots,
        };
        Ok((entry, map_json, lines))
    });

    let mut maps = Vec::with_capacity(n_maps);
    for result in results {
        let (entry, map_json, lines) = result?;
        fs::write(out.join(&entry.map_file), map_json)?;
        fs::write(out.join(&entry.samples_file), lines)?;
        maps.push(entry);
    }
    let manifest = DatasetManifest { dataset_type: dtype, config: cfg.clone(), maps };
    let mut file = fs::File::create(out.join("manifest.json"))?;
    file.write_all(serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    file.write_all(b"\n")?;
    Ok(manifest)
}

pub fn load_manifest(dir: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(dir.join("manifest.json"))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn load_map(dir: &Path, entry: &MapEntry) -> Result<WorldMap> {
    let text = fs::read_to_string(dir.join(&entry.map_file))?;
    WorldMap::from_json(&serde_json::from_str(&text)?)
}

pub fn load_entry_samples(dir: &Path, entry: &MapEntry) -> Result<Vec<Sample>> {
    let file = fs::File::open(dir.join(&entry.samples_file))?;
    let mut samples = Vec::with_capacity(entry.n_samples);
    for line in BufReader::new(file).lines() {
        samples.push(serde_json::from_str(&line?)?);
    }
    Ok(samples)
}

/// All samples of one split, in map order.
pub fn load_split_samples(
    dir: &Path,
    manifest: &DatasetManifest,
    split: Split,
) -> Result<Vec<Sample>> {
    let mut samples = Vec::new();
    for entry in manifest.entries(split) {
        samples.extend(load_entry_samples(dir, entry)?);
    }
    Ok(samples)
}
