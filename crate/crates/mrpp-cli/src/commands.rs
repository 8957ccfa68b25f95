//! Implementations of the subcommands. Every run writes a self-contained
//! record (resolved config, seeds, artifact hashes) next to its outputs so a
//! rerun with `--threads 1` reproduces it bit for bit.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use serde::Serialize;
use serde_json::Value;

use mrpp::config::{MapGenConfig, ModelConfig, RunConfig, TrainConfig};
use mrpp::dataset::{self, DatasetType, Split};
use mrpp::model::checkpoint;
use mrpp::rollout::{
    audit_trace, metrics, run_episode, AuditReport, EpisodeResult, ExpertPolicy, Metrics,
    NetworkPolicy,
};
use mrpp::train::{evaluate, TrainData, TrainReport};
use mrpp::util;
use mrpp::{Error, Result};

const TAG_ROLLOUT_MAP: u64 = 0x726d_6170;
const TAG_ROLLOUT_PLACE: u64 = 0x7270_6c63;

/// FNV-1a over a file, for artifact fingerprints in run records.
fn file_hash(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in &bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    Ok(format!("{h:016x}"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut file = fs::File::create(path)?;
    file.write_all(serde_json::to_string_pretty(value)?.as_bytes())?;
    file.write_all(b"\n")?;
    Ok(())
}

#[derive(Args)]
pub struct GenMapArgs {
    /// Side length in meters.
    #[arg(long)]
    size: Option<f64>,
    #[arg(long)]
    obstacles: Option<usize>,
    /// Obstacle orientations: simple (axis-ish) or complex (uniform).
    #[arg(long)]
    angle_mode: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output JSON file.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn gen_map(args: GenMapArgs, cfg: RunConfig) -> Result<()> {
    let mut world_cfg = cfg.world;
    if let Some(s) = args.size {
        world_cfg.map_size = s;
    }
    if let Some(n) = args.obstacles {
        world_cfg.obstacle_count = n;
    }
    if let Some(m) = &args.angle_mode {
        world_cfg.angle_mode = m.parse()?;
    }
    if let Some(s) = args.seed {
        world_cfg.seed = s;
    }
    let out = crate::resolve_out(args.out)?;
    let world = mrpp::world::generate_map(&world_cfg)?;
    if let Some(dir) = out.parent() {
        fs::create_dir_all(dir)?;
    }
    write_json(&out, &world.to_json())?;
    println!("map: {} ({} obstacles, {} m)", out.display(), world.obstacles.len(), world_cfg.map_size);
    Ok(())
}

#[derive(Args)]
pub struct GenDatasetArgs {
    /// Dataset type: simple-grid, simple-random, complex-grid, complex-random.
    #[arg(long = "type")]
    dtype: String,
    #[arg(long)]
    maps: Option<usize>,
    #[arg(long)]
    robots: Option<usize>,
    /// Map side length in meters.
    #[arg(long)]
    map_size: Option<f64>,
    #[arg(long)]
    obstacles: Option<usize>,
    /// Channel map side length baked into the manifest for training.
    #[arg(long)]
    percept_d: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output dataset directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn gen_dataset(args: GenDatasetArgs, mut cfg: RunConfig, threads: usize) -> Result<()> {
    let dtype: DatasetType = args.dtype.parse()?;
    if let Some(n) = args.maps {
        cfg.dataset.n_maps = n;
    }
    if let Some(k) = args.robots {
        cfg.dataset.robots_per_map = k;
    }
    if let Some(d) = args.percept_d {
        cfg.percept.d = d;
    }
    if let Some(s) = args.map_size {
        cfg.world.map_size = s;
    }
    if let Some(n) = args.obstacles {
        cfg.world.obstacle_count = n;
    }
    if let Some(s) = args.seed {
        cfg.dataset.seed = s;
    }
    let out = crate::resolve_out(args.out)?;
    fs::create_dir_all(&out)?;
    let manifest = dataset::generate_dataset(&out, dtype, &cfg, threads)?;

    let mut split_counts: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    let mut histogram = [0usize; 9];
    for entry in &manifest.maps {
        let name = match entry.split {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        };
        let slot = split_counts.entry(name).or_insert((0, 0));
        slot.0 += 1;
        slot.1 += entry.n_samples;
        for sample in dataset::load_entry_samples(&out, entry)? {
            histogram[sample.label as usize] += 1;
        }
    }
    let total: usize = histogram.iter().sum();
    println!("manifest: {}", out.join("manifest.json").display());
    println!("manifest hash: {}", file_hash(&out.join("manifest.json"))?);
    for (name, (maps, samples)) in &split_counts {
        println!("{name}: {maps} maps, {samples} samples");
    }
    println!("total samples: {total}");
    let labels: Vec<String> =
        histogram.iter().enumerate().map(|(a, n)| format!("{a}:{n}")).collect();
    println!("labels: {}", labels.join(" "));
    Ok(())
}

#[derive(Args)]
pub struct TrainArgs {
    /// Dataset directory (from gen-dataset).
    #[arg(long)]
    data: PathBuf,
    /// Architecture: cnn or geognn.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    hops: Option<usize>,
    /// Position encoding: none, rbf, bbf-sbf.
    #[arg(long)]
    pos_enc: Option<String>,
    #[arg(long)]
    feature_dim: Option<usize>,
    /// Encoder block widths, e.g. 8,12,16.
    #[arg(long)]
    encoder_widths: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    init_seed: Option<u64>,
    #[arg(long)]
    restarts: Option<usize>,
    /// Output run directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct TrainRecord<'a> {
    model: &'a ModelConfig,
    train: &'a TrainConfig,
    dataset: String,
    test_accuracy: f64,
    checkpoint_hash: String,
    report: &'a TrainReport,
}

fn resolved_model(args: &TrainArgs, base: &ModelConfig, input_d: usize) -> Result<ModelConfig> {
    let mut model = base.clone();
    model.input_d = input_d;
    if let Some(m) = &args.model {
        model.arch = m.parse()?;
    }
    if let Some(h) = args.hops {
        model.hops = h;
    }
    if let Some(p) = &args.pos_enc {
        model.position_encoding = p.parse()?;
    }
    if let Some(f) = args.feature_dim {
        model.feature_dim = f;
    }
    if let Some(w) = &args.encoder_widths {
        let parts: Vec<usize> = w
            .split(',')
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Config(format!("bad --encoder-widths '{w}'")))?;
        if parts.len() != 3 {
            return Err(Error::Config("--encoder-widths needs exactly three values".into()));
        }
        model.encoder_widths = [parts[0], parts[1], parts[2]];
    }
    if let Some(s) = args.init_seed {
        model.init_seed = s;
    }
    Ok(model)
}

pub fn train(args: TrainArgs, mut cfg: RunConfig) -> Result<()> {
    let manifest = dataset::load_manifest(&args.data)?;
    let data = TrainData::load(&args.data, &manifest)?;
    let model_cfg = resolved_model(&args, &cfg.model, data.percept.d)?;
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    if let Some(i) = args.iterations {
        cfg.train.iterations_per_epoch = i;
    }
    if let Some(b) = args.batch_size {
        cfg.train.batch_size = b;
    }
    if let Some(lr) = args.lr {
        cfg.train.lr = lr;
    }
    if let Some(s) = args.seed {
        cfg.train.seed = s;
    }
    if let Some(r) = args.restarts {
        cfg.train.restarts = r;
    }
    let out = crate::resolve_out(args.out)?;
    fs::create_dir_all(&out)?;

    // Self-contained run record: the dataset's generation config with this
    // run's model/train sections resolved in.
    let mut record_cfg = manifest.config.clone();
    record_cfg.model = model_cfg.clone();
    record_cfg.train = cfg.train.clone();
    write_json(&out.join("config.json"), &record_cfg)?;

    let (net, report) = mrpp::train::train_restarts(&model_cfg, &data, &cfg.train, &out)?;
    let test_accuracy = mrpp::train::accuracy(&net, &data.test, &data.percept)?;
    let record = TrainRecord {
        model: &model_cfg,
        train: &cfg.train,
        dataset: args.data.display().to_string(),
        test_accuracy,
        checkpoint_hash: file_hash(&report.best_checkpoint)?,
        report: &report,
    };
    write_json(&out.join("report.json"), &record)?;
    println!("checkpoint: {}", report.best_checkpoint.display());
    println!("best val accuracy: {:.4}", report.best_val_accuracy);
    println!("test accuracy: {test_accuracy:.4}");
    Ok(())
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset directory to evaluate on.
    #[arg(long)]
    data: PathBuf,
    /// Split: train, val, test, or all.
    #[arg(long, default_value = "all")]
    split: String,
    /// Output JSON file (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct SplitEval {
    n_samples: usize,
    mean_loss: f64,
    accuracy: f64,
}

pub fn eval(args: EvalArgs, _cfg: RunConfig) -> Result<()> {
    let (net, _) = checkpoint::load_network(&args.checkpoint)?;
    let manifest = dataset::load_manifest(&args.data)?;
    let data = TrainData::load(&args.data, &manifest)?;
    if net.config().input_d != data.percept.d {
        return Err(Error::CheckpointMismatch(format!(
            "checkpoint expects d={}, dataset provides d={}",
            net.config().input_d,
            data.percept.d
        )));
    }
    let wanted: Vec<&str> = match args.split.as_str() {
        "all" => vec!["train", "val", "test"],
        "train" | "val" | "test" => vec![args.split.as_str()],
        other => {
            return Err(Error::Config(format!(
                "unknown split '{other}' (train|val|test|all)"
            )))
        }
    };
    let mut evals: BTreeMap<&str, SplitEval> = BTreeMap::new();
    for name in wanted {
        let split = match name {
            "train" => &data.train,
            "val" => &data.val,
            _ => &data.test,
        };
        let (mean_loss, accuracy) = evaluate(&net, split, &data.percept, 64)?;
        evals.insert(name, SplitEval { n_samples: split.len(), mean_loss, accuracy });
    }
    match &args.out {
        Some(path) => {
            write_json(path, &evals)?;
            println!("wrote {}", path.display());
        }
        None => println!("{}", serde_json::to_string_pretty(&evals)?),
    }
    Ok(())
}

#[derive(Args)]
pub struct RolloutArgs {
    /// Model checkpoint; omit with --policy expert.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Policy: model (default with --checkpoint) or expert.
    #[arg(long)]
    policy: Option<String>,
    /// Number of fresh random maps.
    #[arg(long)]
    maps: usize,
    /// Robots per map.
    #[arg(long)]
    robots: Option<usize>,
    #[arg(long)]
    map_size: Option<f64>,
    #[arg(long)]
    obstacles: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for traces and metrics.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct MapRecord {
    map_id: usize,
    steps: usize,
    metrics: Metrics,
    audit: AuditReport,
    trace_file: String,
}

#[derive(Serialize)]
struct RolloutSummary {
    policy: String,
    maps: usize,
    robots_per_map: usize,
    map_size: f64,
    obstacle_count: usize,
    seed: u64,
    aggregate: Metrics,
    audit_totals: AuditReport,
    per_map: Vec<MapRecord>,
}

pub fn rollout(args: RolloutArgs, mut cfg: RunConfig, threads: usize) -> Result<()> {
    if args.maps == 0 {
        return Err(Error::Config("--maps must be positive".into()));
    }
    let policy_name = match (&args.policy, &args.checkpoint) {
        (Some(p), _) if p != "model" && p != "expert" => {
            return Err(Error::Config(format!("unknown policy '{p}' (model|expert)")))
        }
        (Some(p), Some(_)) if p == "expert" => {
            return Err(Error::Config("--policy expert does not take a checkpoint".into()))
        }
        (Some(p), None) if p == "model" => {
            return Err(Error::Config("--policy model requires --checkpoint".into()))
        }
        (Some(p), _) => p.clone(),
        (None, Some(_)) => "model".to_string(),
        (None, None) => {
            return Err(Error::Config("provide --checkpoint or --policy expert".into()))
        }
    };
    if let Some(k) = args.robots {
        cfg.dataset.robots_per_map = k;
    }
    if let Some(s) = args.map_size {
        cfg.world.map_size = s;
    }
    if let Some(n) = args.obstacles {
        cfg.world.obstacle_count = n;
    }
    let seed = args.seed.unwrap_or(cfg.dataset.seed);
    if let Some(ckpt) = &args.checkpoint {
        // The channel-map size is part of the architecture; episodes must
        // observe at the size the encoder was built for.
        let (net, _) = checkpoint::load_network(ckpt)?;
        cfg.percept.d = net.config().input_d;
    }
    let out = crate::resolve_out(args.out)?;
    fs::create_dir_all(out.join("traces"))?;

    let results = util::map_indexed(args.maps, threads, |m| -> Result<(MapRecord, String, Vec<EpisodeResult>)> {
        let world_cfg = MapGenConfig {
            seed: util::subseed(seed, TAG_ROLLOUT_MAP, m as u64),
            ..cfg.world.clone()
        };
        let world = mrpp::world::generate_map(&world_cfg)?;
        let mut rng = util::rng(seed, TAG_ROLLOUT_PLACE, m as u64);
        let starts = dataset::place_robots(&world, DatasetType::SimpleRandom, &cfg, &mut rng)?;
        let outcome = match policy_name.as_str() {
            "expert" => {
                let policy = ExpertPolicy::new(&world, &cfg.expert);
                run_episode(&world, &starts, &policy, &cfg.rollout, &cfg.percept)?
            }
            _ => {
                let ckpt = args.checkpoint.as_ref().expect("checked above");
                let (net, _) = checkpoint::load_network(ckpt)?;
                let policy = NetworkPolicy::new(&net, cfg.percept.clone());
                run_episode(&world, &starts, &policy, &cfg.rollout, &cfg.percept)?
            }
        };
        let audit = audit_trace(&world, &starts, &outcome.trace, &cfg.rollout);
        let mut lines = String::new();
        for step in &outcome.trace {
            lines.push_str(&serde_json::to_string(step)?);
            lines.push('\n');
        }
        let record = MapRecord {
            map_id: m,
            steps: outcome.trace.len(),
            metrics: metrics(&outcome.results)?,
            audit,
            trace_file: format!("traces/map_{m:04}.ndjson"),
        };
        Ok((record, lines, outcome.results))
    });

    let mut per_map = Vec::with_capacity(args.maps);
    let mut all_results = Vec::new();
    let mut audit_totals = AuditReport::default();
    for result in results {
        let (record, lines, results) = result?;
        fs::write(out.join(&record.trace_file), lines)?;
        audit_totals.static_collisions += record.audit.static_collisions;
        audit_totals.priority_violations += record.audit.priority_violations;
        audit_totals.reached_moves += record.audit.reached_moves;
        all_results.extend(results);
        per_map.push(record);
    }
    let summary = RolloutSummary {
        policy: policy_name,
        maps: args.maps,
        robots_per_map: cfg.dataset.robots_per_map,
        map_size: cfg.world.map_size,
        obstacle_count: cfg.world.obstacle_count,
        seed,
        aggregate: metrics(&all_results)?,
        audit_totals,
        per_map,
    };
    write_json(&out.join("metrics.json"), &summary)?;
    let ft = summary
        .aggregate
        .flowtime_increase
        .map_or("n/a".to_string(), |v| format!("{v:.2}%"));
    println!(
        "maps: {}  SR: {:.3}  FT: {ft}  audit: {}/{}/{}",
        summary.maps,
        summary.aggregate.success_rate,
        summary.audit_totals.static_collisions,
        summary.audit_totals.priority_violations,
        summary.audit_totals.reached_moves,
    );
    println!("metrics: {}", out.join("metrics.json").display());
    Ok(())
}

#[derive(Args)]
pub struct GradcheckArgs {
    /// Randomized trials per check.
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Optional JSON results file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct CheckRecord {
    name: String,
    trials: usize,
    worst_rel_error: f64,
    tolerance: f64,
    passed: bool,
}

pub fn gradcheck(args: GradcheckArgs) -> Result<()> {
    let started = Instant::now();
    let results = mrpp::verify::check_all(args.trials, args.seed)?;
    let mut failed = Vec::new();
    let mut records = Vec::with_capacity(results.len());
    for r in &results {
        let verdict = if r.passed() { "pass" } else { "FAIL" };
        println!("{verdict}  {:<28} worst {:>10.3e}  (tol {:.0e})", r.name, r.worst, r.tolerance);
        if !r.passed() {
            failed.push(r.name.clone());
        }
        records.push(CheckRecord {
            name: r.name.clone(),
            trials: r.trials,
            worst_rel_error: r.worst,
            tolerance: r.tolerance,
            passed: r.passed(),
        });
    }
    println!("{} checks in {:.1}s", records.len(), started.elapsed().as_secs_f64());
    if let Some(path) = &args.out {
        write_json(path, &records)?;
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::NumericCheck(format!("gradient checks failed: {}", failed.join(", "))))
    }
}

#[derive(Args)]
pub struct ReportArgs {
    /// report.json files from train runs.
    #[arg(long = "train-report")]
    train_reports: Vec<PathBuf>,
    /// Eval JSON files.
    #[arg(long = "eval")]
    evals: Vec<PathBuf>,
    /// metrics.json files from rollout runs.
    #[arg(long = "rollout")]
    rollouts: Vec<PathBuf>,
    /// Combined JSON output (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct ReportEntry {
    path: String,
    content: Value,
}

#[derive(Serialize)]
struct CombinedReport {
    train: Vec<ReportEntry>,
    eval: Vec<ReportEntry>,
    rollout: Vec<ReportEntry>,
}

fn read_entries(paths: &[PathBuf]) -> Result<Vec<ReportEntry>> {
    paths
        .iter()
        .map(|p| {
            let content: Value = serde_json::from_str(&fs::read_to_string(p)?)?;
            Ok(ReportEntry { path: p.display().to_string(), content })
        })
        .collect()
}

pub fn report(args: ReportArgs) -> Result<()> {
    let combined = CombinedReport {
        train: read_entries(&args.train_reports)?,
        eval: read_entries(&args.evals)?,
        rollout: read_entries(&args.rollouts)?,
    };
    for entry in &combined.train {
        let model = &entry.content["model"];
        println!(
            "train {}: arch {} hops {} enc {} test_acc {}",
            entry.path,
            model["arch"].as_str().unwrap_or("?"),
            model["hops"],
            model["position_encoding"].as_str().unwrap_or("?"),
            entry.content["test_accuracy"],
        );
    }
    for entry in &combined.rollout {
        println!(
            "rollout {}: SR {} FT {} (maps {})",
            entry.path,
            entry.content["aggregate"]["success_rate"],
            entry.content["aggregate"]["flowtime_increase"],
            entry.content["maps"],
        );
    }
    match &args.out {
        Some(path) => {
            write_json(path, &combined)?;
            println!("wrote {}", path.display());
        }
        None => println!("{}", serde_json::to_string_pretty(&combined)?),
    }
    Ok(())
}
