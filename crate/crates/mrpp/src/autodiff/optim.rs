//! Optimization: Adam with L2 weight decay, reduce-on-plateau scheduling,
//! and a central-difference gradient checker.

use std::collections::BTreeMap;

use rand::Rng;

use super::tensor::{no_grad, Tensor};
use crate::{Error, Result};

/// Adam with classic L2 regularization folded into the gradient
/// (`g += weight_decay * theta`) before the moment updates.
#[derive(Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, betas: (f64, f64), eps: f64, weight_decay: f64) -> Self {
        Self { lr, beta1: betas.0, beta2: betas.1, eps, weight_decay, t: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }

    /// One update over named parameters (sorted by name, so the float
    /// schedule is reproducible). Errors on any non-finite gradient.
    pub fn step(&mut self, params: &BTreeMap<String, Tensor>) -> Result<()> {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, p) in params {
            let mut inner = p.0.borrow_mut();
            if inner.grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteGradient(name.clone()));
            }
            let n = inner.data.len();
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            for i in 0..n {
                let g = inner.grad[i] + self.weight_decay * inner.data[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                inner.data[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }

    pub fn zero_grad(params: &BTreeMap<String, Tensor>) {
        for p in params.values() {
            p.zero_grad();
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Moment state for checkpointing.
    pub fn export_moments(&self) -> (u64, &BTreeMap<String, Vec<f64>>, &BTreeMap<String, Vec<f64>>) {
        (self.t, &self.m, &self.v)
    }

    pub fn import_moments(
        &mut self,
        t: u64,
        m: BTreeMap<String, Vec<f64>>,
        v: BTreeMap<String, Vec<f64>>,
    ) {
        self.t = t;
        self.m = m;
        self.v = v;
    }
}

/// Halve the learning rate when a metric stops improving, after `patience`
/// non-improving epochs. Relative threshold, like the usual `min` mode.
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    pub factor: f64,
    pub patience: usize,
    pub threshold: f64,
    pub min_lr: f64,
    best: Option<f64>,
    bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(factor: f64, patience: usize, threshold: f64, min_lr: f64) -> Self {
        Self { factor, patience, threshold, min_lr, best: None, bad_epochs: 0 }
    }

    /// Feed one epoch's metric; adjusts `lr` in place and reports whether it
    /// was reduced.
    pub fn step(&mut self, metric: f64, lr: &mut f64) -> bool {
        let improved = match self.best {
            None => true,
            Some(best) => metric < best * (1.0 - self.threshold),
        };
        if improved {
            self.best = Some(metric);
            self.bad_epochs = 0;
            return false;
        }
        self.bad_epochs += 1;
        if self.bad_epochs > self.patience {
            *lr = (*lr * self.factor).max(self.min_lr);
            self.bad_epochs = 0;
            return true;
        }
        false
    }
}

fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn check_coords(
    f: &dyn Fn() -> Result<Tensor>,
    params: &[Tensor],
    coords: &[Vec<usize>],
    eps: f64,
) -> Result<f64> {
    for p in params {
        p.zero_grad();
    }
    let loss = f()?;
    loss.backward()?;
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|p| p.grad().ok_or_else(|| Error::Config("grad_check on non-grad tensor".into())))
        .collect::<Result<_>>()?;

    let mut worst = 0.0f64;
    for (pi, p) in params.iter().enumerate() {
        for &ci in &coords[pi] {
            p.nudge(ci, eps);
            let plus = no_grad(|| f())?.item();
            p.nudge(ci, -2.0 * eps);
            let minus = no_grad(|| f())?.item();
            p.nudge(ci, eps);
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(rel_error(analytic[pi][ci], numeric));
        }
    }
    Ok(worst)
}

/// Central-difference check over every coordinate of every parameter.
/// Returns the worst relative error `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check_full(
    f: impl Fn() -> Result<Tensor>,
    params: &[Tensor],
    eps: f64,
) -> Result<f64> {
    let coords: Vec<Vec<usize>> = params.iter().map(|p| (0..p.numel()).collect()).collect();
    check_coords(&f, params, &coords, eps)
}

/// Same check over at most `per_param` seeded random coordinates of each
/// parameter, for models too large to sweep exhaustively.
pub fn grad_check_sampled(
    f: impl Fn() -> Result<Tensor>,
    params: &[Tensor],
    eps: f64,
    per_param: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = crate::util::rng(seed, 0x6c, 0);
    let coords: Vec<Vec<usize>> = params
        .iter()
        .map(|p| {
            let n = p.numel();
            if n <= per_param {
                (0..n).collect()
            } else {
                let mut picked: Vec<usize> = (0..per_param).map(|_| rng.gen_range(0..n)).collect();
                picked.sort_unstable();
                picked.dedup();
                picked
            }
        })
        .collect();
    check_coords(&f, params, &coords, eps)
}
