//! Checkpoint file format: a versioned JSON header (model config plus an
//! index of named f64 arrays) followed by the arrays as little-endian bytes
//! in index order. Parameters, batch-norm statistics, Adam moments and the
//! training RNG position all travel in one file.
//!
//! Writes are byte-deterministic for identical state: the array index
//! follows sorted parameter order and the header is compact JSON.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Adam;
use crate::config::ModelConfig;
use crate::model::Network;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"MRPPCKPT";
const VERSION: u32 = 1;

/// Position of the seeded training RNG, recorded as the derivation inputs
/// rather than raw generator words: epoch streams are re-derived from
/// (seed, epoch), so the next epoch index pins the state exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngCursor {
    pub seed: u64,
    pub next_epoch: u64,
}

#[derive(Serialize, Deserialize)]
struct ArrayMeta {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    model: ModelConfig,
    arrays: Vec<ArrayMeta>,
    optimizer_steps: Option<u64>,
    rng: Option<RngCursor>,
}

/// A loaded checkpoint, not yet bound to a network.
#[derive(Debug)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub optimizer_steps: Option<u64>,
    pub rng: Option<RngCursor>,
    arrays: BTreeMap<String, (Vec<usize>, Vec<f64>)>,
}

fn stat_names(name: &str) -> (String, String, String) {
    (
        format!("{name}.mean"),
        format!("{name}.var"),
        format!("{name}.batches"),
    )
}

/// Serializes the network (and optionally optimizer moments and the RNG
/// cursor) to `path`.
pub fn save(
    path: &Path,
    net: &Network,
    optim: Option<&Adam>,
    rng: Option<RngCursor>,
) -> Result<()> {
    let mut arrays: Vec<(String, Vec<usize>, Vec<f64>)> = Vec::new();
    for (name, p) in net.params() {
        arrays.push((name.clone(), p.shape(), p.value()));
    }
    for (name, stats) in net.stats() {
        let s = stats.borrow();
        let (mean, var, batches) = stat_names(name);
        arrays.push((mean, vec![s.mean.len()], s.mean.clone()));
        arrays.push((var, vec![s.var.len()], s.var.clone()));
        // u64 exact in f64 for any realistic batch count.
        arrays.push((batches, vec![1], vec![s.batches as f64]));
    }
    let optimizer_steps = optim.map(|o| {
        let (t, m, v) = o.export_moments();
        for (name, buf) in m {
            arrays.push((format!("optim.m.{name}"), vec![buf.len()], buf.clone()));
        }
        for (name, buf) in v {
            arrays.push((format!("optim.v.{name}"), vec![buf.len()], buf.clone()));
        }
        t
    });

    let header = Header {
        version: VERSION,
        model: net.config().clone(),
        arrays: arrays
            .iter()
            .map(|(name, shape, _)| ArrayMeta { name: name.clone(), shape: shape.clone() })
            .collect(),
        optimizer_steps,
        rng,
    };
    let header_bytes = serde_json::to_vec(&header)?;

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    for (_, _, data) in &arrays {
        for v in data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Data(format!("{}: not a checkpoint file", path.display())));
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let mut header_bytes = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut header_bytes)?;
    let header: Header = serde_json::from_slice(&header_bytes)?;
    if header.version != VERSION {
        return Err(Error::CheckpointMismatch(format!(
            "version {} (expected {VERSION})",
            header.version
        )));
    }

    let mut arrays = BTreeMap::new();
    for meta in header.arrays {
        let numel: usize = meta.shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        let mut buf = [0u8; 8];
        for _ in 0..numel {
            r.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        arrays.insert(meta.name, (meta.shape, data));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::CheckpointMismatch("trailing bytes after payload".into()));
    }
    Ok(Checkpoint {
        model: header.model,
        optimizer_steps: header.optimizer_steps,
        rng: header.rng,
        arrays,
    })
}

impl Checkpoint {
    fn take(&self, name: &str, want_shape: &[usize]) -> Result<&Vec<f64>> {
        let (shape, data) = self
            .arrays
            .get(name)
            .ok_or_else(|| Error::CheckpointMismatch(format!("missing array {name}")))?;
        if shape != want_shape {
            return Err(Error::CheckpointMismatch(format!(
                "array {name} has shape {shape:?}, expected {want_shape:?}"
            )));
        }
        Ok(data)
    }

    /// Writes parameters and batch-norm statistics into `net`, which must
    /// have been built from the same model config.
    pub fn restore(&self, net: &Network) -> Result<()> {
        if *net.config() != self.model {
            return Err(Error::CheckpointMismatch(
                "checkpoint model config differs from the target network".into(),
            ));
        }
        for (name, p) in net.params() {
            p.set_data(self.take(name, &p.shape())?);
        }
        for (name, stats) in net.stats() {
            let channels = stats.borrow().mean.len();
            let (mean, var, batches) = stat_names(name);
            let mean = self.take(&mean, &[channels])?.clone();
            let var = self.take(&var, &[channels])?.clone();
            let batches = self.take(&batches, &[1])?[0] as u64;
            let mut s = stats.borrow_mut();
            s.mean = mean;
            s.var = var;
            s.batches = batches;
        }
        Ok(())
    }

    /// Feeds stored Adam moments back into an optimizer.
    pub fn restore_optimizer(&self, optim: &mut Adam, net: &Network) -> Result<()> {
        let steps = self.optimizer_steps.ok_or_else(|| {
            Error::CheckpointMismatch("checkpoint carries no optimizer state".into())
        })?;
        let mut m = BTreeMap::new();
        let mut v = BTreeMap::new();
        for (name, p) in net.params() {
            let n = p.numel();
            m.insert(name.clone(), self.take(&format!("optim.m.{name}"), &[n])?.clone());
            v.insert(name.clone(), self.take(&format!("optim.v.{name}"), &[n])?.clone());
        }
        optim.import_moments(steps, m, v);
        Ok(())
    }
}

/// Builds a network from the stored config and restores its state.
pub fn load_network(path: &Path) -> Result<(Network, Checkpoint)> {
    let ckpt = load(path)?;
    let net = Network::new(&ckpt.model)?;
    ckpt.restore(&net)?;
    Ok((net, ckpt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ops;
    use crate::autodiff::Tensor;
    use crate::config::{Arch, BasisConfig, PositionEncoding};
    use tempfile::tempdir;

    fn cfg() -> ModelConfig {
        ModelConfig {
            arch: Arch::GeoGnn,
            feature_dim: 5,
            hops: 1,
            position_encoding: PositionEncoding::BbfSbf,
            basis: BasisConfig { cutoff: 5.0, n_bbf: 2, n_sbf_radial: 1, l_sbf_max: 1 },
            input_d: 8,
            encoder_widths: [2, 2, 3],
            init_seed: 9,
        }
    }

    fn scramble(net: &Network) {
        for (i, p) in net.params().values().enumerate() {
            let n = p.numel();
            p.set_data(&(0..n).map(|k| ((i * 31 + k * 7) % 13) as f64 / 13.0 - 0.4).collect::<Vec<_>>());
        }
        for (i, (_, s)) in net.stats().iter().enumerate() {
            let mut s = s.borrow_mut();
            let c = s.mean.len();
            s.mean = (0..c).map(|k| (i + k) as f64 * 0.125).collect();
            s.var = (0..c).map(|k| 1.0 + (i + k) as f64 * 0.0625).collect();
            s.batches = 3 + i as u64;
        }
    }

    #[test]
    fn round_trip_restores_every_array() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let net = Network::new(&cfg()).unwrap();
        scramble(&net);
        save(&path, &net, None, Some(RngCursor { seed: 4, next_epoch: 7 })).unwrap();

        let (loaded, ckpt) = load_network(&path).unwrap();
        assert_eq!(ckpt.rng, Some(RngCursor { seed: 4, next_epoch: 7 }));
        assert_eq!(ckpt.optimizer_steps, None);
        assert_eq!(loaded.config(), net.config());
        for (name, p) in net.params() {
            assert_eq!(p.value(), loaded.params()[name].value(), "{name}");
        }
        for ((_, a), (_, b)) in net.stats().iter().zip(loaded.stats()) {
            assert_eq!(a.borrow().mean, b.borrow().mean);
            assert_eq!(a.borrow().var, b.borrow().var);
            assert_eq!(a.borrow().batches, b.borrow().batches);
        }
    }

    #[test]
    fn saves_are_byte_identical() {
        let dir = tempdir().unwrap();
        let net = Network::new(&cfg()).unwrap();
        let a = dir.path().join("a.ckpt");
        let b = dir.path().join("b.ckpt");
        save(&a, &net, None, None).unwrap();
        save(&b, &net, None, None).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    /// Sum of squares over every parameter: a cheap loss touching all of
    /// them, so Adam builds moments for the full set.
    fn dummy_loss(params: &BTreeMap<String, Tensor>) -> Tensor {
        let mut total = Tensor::scalar(0.0);
        for p in params.values() {
            let sq = ops::sum_all(&ops::mul(p, p).unwrap()).unwrap();
            total = ops::add(&total, &sq).unwrap();
        }
        total
    }

    fn run_steps(optim: &mut Adam, params: &BTreeMap<String, Tensor>, k: usize) {
        for _ in 0..k {
            Adam::zero_grad(params);
            dummy_loss(params).backward().unwrap();
            optim.step(params).unwrap();
        }
    }

    #[test]
    fn optimizer_moments_round_trip_and_resume_identically() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.ckpt");

        // Uninterrupted: 4 Adam steps on a fresh network.
        let reference = Network::new(&cfg()).unwrap();
        let mut ref_optim = Adam::new(0.05, (0.9, 0.999), 1e-8, 0.0);
        run_steps(&mut ref_optim, reference.params(), 4);

        // Interrupted: 2 steps, checkpoint, reload, 2 more.
        let net = Network::new(&cfg()).unwrap();
        let mut optim = Adam::new(0.05, (0.9, 0.999), 1e-8, 0.0);
        run_steps(&mut optim, net.params(), 2);
        save(&path, &net, Some(&optim), None).unwrap();

        let (resumed, ckpt) = load_network(&path).unwrap();
        assert_eq!(ckpt.optimizer_steps, Some(2));
        let mut resumed_optim = Adam::new(0.05, (0.9, 0.999), 1e-8, 0.0);
        ckpt.restore_optimizer(&mut resumed_optim, &resumed).unwrap();
        run_steps(&mut resumed_optim, resumed.params(), 2);

        for (name, p) in reference.params() {
            assert_eq!(p.value(), resumed.params()[name].value(), "{name}");
        }
    }

    #[test]
    fn restore_rejects_config_mismatch() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let net = Network::new(&cfg()).unwrap();
        save(&path, &net, None, None).unwrap();
        let ckpt = load(&path).unwrap();

        let mut other_cfg = cfg();
        other_cfg.feature_dim = 6;
        let other = Network::new(&other_cfg).unwrap();
        assert!(matches!(
            ckpt.restore(&other).unwrap_err(),
            Error::CheckpointMismatch(_)
        ));
    }

    #[test]
    fn load_rejects_foreign_files() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"definitely not a checkpoint").unwrap();
        assert!(matches!(load(&path).unwrap_err(), Error::Data(_)));
    }
}
