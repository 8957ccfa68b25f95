//! Imitation training: ego-graph batching over generated datasets,
//! cross-entropy on expert labels, Adam with plateau scheduling, best-val
//! checkpointing, and split accuracy evaluation.
//!
//! A batch item is one robot's sample plus its h-hop neighborhood from the
//! same map and timestep; the loss reads only the center's logits unless
//! full-graph supervision is enabled.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ops, Adam, PlateauScheduler, Tensor};
use crate::config::{ModelConfig, PerceptConfig, TrainConfig};
use crate::dataset::{load_split_samples, DatasetManifest, Split};
use crate::expert::Sample;
use crate::model::checkpoint::{self, RngCursor};
use crate::model::{action_of, Network};
use crate::percept::{build_channel_map, ChannelMap, CommGraph, EdgeGeom};
use crate::util::rng;
use crate::{Error, Result};

const TAG_EPOCH: u64 = 0x6570_6f63;

/// One split held in memory, indexed so ego-graphs can find the samples of
/// neighboring robots at the same map and timestep.
pub struct LoadedSplit {
    samples: Vec<Sample>,
    index: BTreeMap<(usize, usize, usize), usize>,
}

impl LoadedSplit {
    pub fn new(samples: Vec<Sample>) -> Self {
        let index = samples
            .iter()
            .enumerate()
            .map(|(i, s)| ((s.map_id, s.timestep, s.robot_id), i))
            .collect();
        Self { samples, index }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    fn at(&self, map_id: usize, timestep: usize, robot_id: usize) -> Option<usize> {
        self.index.get(&(map_id, timestep, robot_id)).copied()
    }
}

/// The dataset splits a training run needs, plus the perception geometry
/// its channel maps were generated under.
pub struct TrainData {
    pub percept: PerceptConfig,
    pub train: LoadedSplit,
    pub val: LoadedSplit,
    pub test: LoadedSplit,
}

impl TrainData {
    pub fn load(dir: &Path, manifest: &DatasetManifest) -> Result<Self> {
        Ok(Self {
            percept: manifest.config.percept.clone(),
            train: LoadedSplit::new(load_split_samples(dir, manifest, Split::Train)?),
            val: LoadedSplit::new(load_split_samples(dir, manifest, Split::Val)?),
            test: LoadedSplit::new(load_split_samples(dir, manifest, Split::Test)?),
        })
    }
}

/// A merged batch of ego-graphs: channel maps and edges are the disjoint
/// union, `centers` are the rows whose labels the plain loss reads.
pub struct EgoBatch {
    pub maps: Vec<ChannelMap>,
    pub graph: CommGraph,
    pub centers: Vec<usize>,
    pub labels: Vec<usize>,
    pub node_labels: Vec<usize>,
}

impl EgoBatch {
    fn empty() -> Self {
        Self {
            maps: Vec::new(),
            graph: CommGraph::default(),
            centers: Vec::new(),
            labels: Vec::new(),
            node_labels: Vec::new(),
        }
    }
}

/// Appends the h-hop ego-graph of `center` to the batch. Neighbor ids whose
/// sample is missing at this timestep (robots discarded at labeling time)
/// are treated as silent and skipped.
fn append_ego(
    split: &LoadedSplit,
    center: usize,
    hops: usize,
    percept: &PerceptConfig,
    batch: &mut EgoBatch,
) {
    let c = &split.samples[center];
    let (map_id, t) = (c.map_id, c.timestep);
    let mut local: Vec<usize> = vec![center];
    let mut frontier: Vec<usize> = vec![center];
    for _ in 0..hops {
        let mut next = Vec::new();
        for &si in &frontier {
            for &(nbr, _, _) in &split.samples[si].neighbors {
                if let Some(ni) = split.at(map_id, t, nbr) {
                    if !local.contains(&ni) {
                        local.push(ni);
                        next.push(ni);
                    }
                }
            }
        }
        frontier = next;
    }

    let offset = batch.maps.len();
    batch.centers.push(offset);
    batch.labels.push(c.label as usize);
    for (li, &si) in local.iter().enumerate() {
        let s = &split.samples[si];
        batch.maps.push(build_channel_map(&s.scan, &s.neighbors_in_fov, s.goal_rel, percept));
        batch.node_labels.push(s.label as usize);
        batch.graph.nodes.push(offset + li);
        for &(nbr, r, theta) in &s.neighbors {
            let Some(ni) = split.at(map_id, t, nbr) else { continue };
            if let Some(lj) = local.iter().position(|&x| x == ni) {
                batch.graph.edges.push(EdgeGeom {
                    src: offset + li,
                    dst: offset + lj,
                    r,
                    theta,
                });
            }
        }
    }
}

/// Cycles through a split in seeded shuffled order, emitting merged
/// ego-graph batches; reshuffles whenever the order is exhausted.
pub struct Batcher<'a> {
    split: &'a LoadedSplit,
    percept: PerceptConfig,
    hops: usize,
    batch_size: usize,
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl<'a> Batcher<'a> {
    pub fn new(
        split: &'a LoadedSplit,
        percept: &PerceptConfig,
        hops: usize,
        batch_size: usize,
        mut rng: ChaCha8Rng,
    ) -> Result<Self> {
        if split.is_empty() {
            return Err(Error::Data("cannot batch an empty split".into()));
        }
        let mut order: Vec<usize> = (0..split.len()).collect();
        order.shuffle(&mut rng);
        Ok(Self {
            split,
            percept: percept.clone(),
            hops,
            batch_size,
            order,
            pos: 0,
            rng,
        })
    }

    pub fn next_batch(&mut self) -> EgoBatch {
        let mut batch = EgoBatch::empty();
        for _ in 0..self.batch_size {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            let center = self.order[self.pos];
            self.pos += 1;
            append_ego(self.split, center, self.hops, &self.percept, &mut batch);
        }
        batch
    }
}

fn batch_loss(net: &Network, batch: &EgoBatch, training: bool, full_graph: bool) -> Result<Tensor> {
    let refs: Vec<&ChannelMap> = batch.maps.iter().collect();
    let (logits, _) = net.forward_centralized(&batch.graph, &refs, training)?;
    if full_graph {
        ops::softmax_cross_entropy(&logits, &batch.node_labels)
    } else {
        let centers = ops::rows(&logits, &batch.centers)?;
        ops::softmax_cross_entropy(&centers, &batch.labels)
    }
}

/// Mean center loss and accuracy over a whole split, eval mode, fixed order.
pub fn evaluate(
    net: &Network,
    split: &LoadedSplit,
    percept: &PerceptConfig,
    batch_size: usize,
) -> Result<(f64, f64)> {
    if split.is_empty() {
        return Err(Error::Data("cannot evaluate an empty split".into()));
    }
    let hops = net.hops();
    let mut loss_sum = 0.0;
    let mut right = 0usize;
    let mut start = 0usize;
    while start < split.len() {
        let end = (start + batch_size).min(split.len());
        let mut batch = EgoBatch::empty();
        for center in start..end {
            append_ego(split, center, hops, percept, &mut batch);
        }
        let refs: Vec<&ChannelMap> = batch.maps.iter().collect();
        let (logits, _) = crate::autodiff::no_grad(|| net.forward_centralized(&batch.graph, &refs, false))?;
        let rows = logits.value();
        let width = rows.len() / batch.maps.len();
        for (k, &row) in batch.centers.iter().enumerate() {
            let logit_row = &rows[row * width..(row + 1) * width];
            let ce = {
                let m = logit_row.iter().cloned().fold(f64::MIN, f64::max);
                let lse = m + logit_row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                lse - logit_row[batch.labels[k]]
            };
            loss_sum += ce;
            if action_of(logit_row) as usize == batch.labels[k] {
                right += 1;
            }
        }
        start = end;
    }
    let n = split.len() as f64;
    Ok((loss_sum / n, right as f64 / n))
}

/// Split accuracy alone (the evaluation metric of the tables).
pub fn accuracy(net: &Network, split: &LoadedSplit, percept: &PerceptConfig) -> Result<f64> {
    evaluate(net, split, percept, 64).map(|(_, acc)| acc)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: usize,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub val_accuracy: Vec<f64>,
    pub lr: Vec<f64>,
    pub best_val_accuracy: f64,
    pub best_checkpoint: PathBuf,
}

/// Trains `net` in place; writes the best-val-accuracy checkpoint under
/// `out` and returns the traces. Zero epochs saves the initialization.
pub fn train(net: &Network, data: &TrainData, cfg: &TrainConfig, out: &Path) -> Result<TrainReport> {
    std::fs::create_dir_all(out)?;
    let best_path = out.join("best.ckpt");
    let mut report = TrainReport {
        epochs: cfg.epochs,
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        val_accuracy: Vec::new(),
        lr: Vec::new(),
        best_val_accuracy: f64::NEG_INFINITY,
        best_checkpoint: best_path.clone(),
    };
    checkpoint::save(&best_path, net, None, Some(RngCursor { seed: cfg.seed, next_epoch: 0 }))?;
    if cfg.epochs == 0 {
        report.best_val_accuracy = 0.0;
        return Ok(report);
    }

    let mut optim = Adam::new(cfg.lr, cfg.betas, cfg.eps, cfg.weight_decay);
    let mut sched = PlateauScheduler::new(
        cfg.scheduler.factor,
        cfg.scheduler.patience,
        cfg.scheduler.threshold,
        cfg.scheduler.min_lr,
    );
    let mut lr = cfg.lr;

    for epoch in 0..cfg.epochs {
        let mut batcher = Batcher::new(
            &data.train,
            &data.percept,
            net.hops(),
            cfg.batch_size,
            rng(cfg.seed, TAG_EPOCH, epoch as u64),
        )?;
        let mut loss_sum = 0.0;
        for _ in 0..cfg.iterations_per_epoch {
            let batch = batcher.next_batch();
            Adam::zero_grad(net.params());
            let loss = batch_loss(net, &batch, true, cfg.full_graph_supervision)?;
            let l = loss.item();
            if !l.is_finite() {
                return Err(Error::NonFiniteLoss(l));
            }
            loss.backward()?;
            optim.lr = lr;
            optim.step(net.params())?;
            loss_sum += l;
        }
        let (val_loss, val_acc) = evaluate(net, &data.val, &data.percept, cfg.batch_size.max(16))?;
        sched.step(val_loss, &mut lr);
        report.train_loss.push(loss_sum / cfg.iterations_per_epoch as f64);
        report.val_loss.push(val_loss);
        report.val_accuracy.push(val_acc);
        report.lr.push(lr);
        if val_acc > report.best_val_accuracy {
            report.best_val_accuracy = val_acc;
            checkpoint::save(
                &best_path,
                net,
                None,
                Some(RngCursor { seed: cfg.seed, next_epoch: epoch as u64 + 1 }),
            )?;
        }
    }
    Ok(report)
}

/// Independent restarts (fresh init and batch seeds); keeps the run with the
/// best validation accuracy as `out/best.ckpt` and returns its network.
pub fn train_restarts(
    model_cfg: &ModelConfig,
    data: &TrainData,
    cfg: &TrainConfig,
    out: &Path,
) -> Result<(Network, TrainReport)> {
    let restarts = cfg.restarts.max(1);
    let mut best: Option<(Network, TrainReport)> = None;
    for r in 0..restarts {
        let mut mc = model_cfg.clone();
        mc.init_seed = model_cfg.init_seed.wrapping_add(r as u64);
        let mut tc = cfg.clone();
        tc.seed = cfg.seed.wrapping_add(r as u64);
        let net = Network::new(&mc)?;
        let run_out = if restarts == 1 { out.to_path_buf() } else { out.join(format!("restart{r}")) };
        let report = train(&net, data, &tc, &run_out)?;
        let better = best
            .as_ref()
            .map(|(_, b)| report.best_val_accuracy > b.best_val_accuracy)
            .unwrap_or(true);
        if better {
            best = Some((net, report));
        }
    }
    let (net, mut report) = best.expect("at least one restart ran");
    if restarts > 1 {
        let final_path = out.join("best.ckpt");
        std::fs::copy(&report.best_checkpoint, &final_path)?;
        report.best_checkpoint = final_path;
    }
    Ok((net, report))
}
