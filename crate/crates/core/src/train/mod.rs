//! Adam, cosine learning-rate annealing and minibatch training loops.

use std::fmt::Write as _;

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::net::Mlp;
use crate::rng;

/// Adam moment estimates for one parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Array1<f64>,
    v: Array1<f64>,
    t: u64,
}

impl Adam {
    pub fn new(len: usize) -> Self {
        Self::with_params(len, 0.9, 0.999, 1e-8)
    }

    pub fn with_params(len: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam { beta1, beta2, eps, m: Array1::zeros(len), v: Array1::zeros(len), t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One bias-corrected update of `w` in place.
    pub fn step(&mut self, w: &mut [f64], grad: ArrayView1<'_, f64>, lr: f64) {
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..w.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / b1t;
            let vh = self.v[i] / b2t;
            w[i] -= lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// `lr_end + ½(lr_start - lr_end)(1 + cos(π·step/total))`.
pub fn cosine_lr(step: usize, total: usize, lr_start: f64, lr_end: f64) -> f64 {
    if total == 0 {
        return lr_start;
    }
    let frac = step.min(total) as f64 / total as f64;
    lr_end + 0.5 * (lr_start - lr_end) * (1.0 + (std::f64::consts::PI * frac).cos())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 500,
            lr_start: 1e-3,
            lr_end: 1e-5,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::input("batch size must be at least 1"));
        }
        if !(self.lr_end > 0.0 && self.lr_start >= self.lr_end) {
            return Err(Error::input(format!(
                "need lr_start >= lr_end > 0, got {} and {}",
                self.lr_start, self.lr_end
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_error: f64,
    pub val_loss: f64,
    pub val_error: f64,
}

#[derive(Debug, Clone, Default)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,train_error,val_loss,val_error\n");
        for r in &self.records {
            writeln!(s, "{},{:?},{:?},{:?},{:?}", r.epoch, r.train_loss, r.train_error, r.val_loss, r.val_error).unwrap();
        }
        s
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }
}

/// Extra loss term added to `ĕ` during training.
#[derive(Debug, Clone)]
pub enum Penalty {
    None,
    /// `α‖w - w₀‖²` with `α = factor × current learning rate`.
    Spring { anchor: Array1<f64>, factor: f64 },
}

fn record(mlp: &Mlp, epoch: usize, train: &Dataset, val: Option<&Dataset>) -> Result<EpochRecord> {
    let (tl, te) = mlp.loss_and_error(train)?;
    let (vl, ve) = match val {
        Some(v) => mlp.loss_and_error(v)?,
        None => (f64::NAN, f64::NAN),
    };
    Ok(EpochRecord { epoch, train_loss: tl, train_error: te, val_loss: vl, val_error: ve })
}

/// Minibatch Adam on `ĕ` (plus an optional penalty) with a cosine
/// schedule over all steps and a fresh shuffle every epoch.
///
/// Epoch 0 in the history is the starting point.
pub fn train_with_penalty(
    mlp: &mut Mlp,
    train: &Dataset,
    val: Option<&Dataset>,
    config: &TrainConfig,
    penalty: &Penalty,
) -> Result<History> {
    train_observed(mlp, train, val, config, penalty, &mut |_, _| Ok(()))
}

/// [`train_with_penalty`] calling `on_epoch(epoch, mlp)` after every
/// completed epoch.
pub fn train_observed(
    mlp: &mut Mlp,
    train: &Dataset,
    val: Option<&Dataset>,
    config: &TrainConfig,
    penalty: &Penalty,
    on_epoch: &mut dyn FnMut(usize, &Mlp) -> Result<()>,
) -> Result<History> {
    config.validate()?;
    let n = train.n();
    let per_epoch = n.div_ceil(config.batch_size);
    let total = per_epoch * config.epochs;
    let mut opt = Adam::with_params(mlp.num_params(), config.beta1, config.beta2, config.adam_eps);
    let mut r = rng::rng(config.seed);
    let mut history = History::default();
    history.records.push(record(mlp, 0, train, val)?);
    let mut w = mlp.flat().to_vec();
    let mut step = 0;
    for epoch in 1..=config.epochs {
        let order = rng::permutation(&mut r, n);
        for batch in order.chunks(config.batch_size) {
            let x = train.inputs().select(ndarray::Axis(0), batch);
            let y: Vec<usize> = batch.iter().map(|&i| train.labels()[i]).collect();
            let lr = cosine_lr(step, total, config.lr_start, config.lr_end);
            let (loss, mut g) = match mlp.grad(x.view(), &y) {
                Ok(v) => v,
                Err(Error::Numeric(_)) => return Err(diverged(history, epoch)),
                Err(e) => return Err(e),
            };
            if !loss.is_finite() {
                return Err(diverged(history, epoch));
            }
            if let Penalty::Spring { anchor, factor } = penalty {
                let alpha = factor * lr;
                for i in 0..w.len() {
                    g[i] += 2.0 * alpha * (w[i] - anchor[i]);
                }
            }
            opt.step(&mut w, g.view(), lr);
            mlp.set_flat(&w)?;
            step += 1;
        }
        let rec = match record(mlp, epoch, train, val) {
            Ok(r) => r,
            Err(Error::Numeric(_)) => return Err(diverged(history, epoch)),
            Err(e) => return Err(e),
        };
        if !rec.train_loss.is_finite() {
            history.records.push(rec);
            return Err(diverged(history, epoch));
        }
        history.records.push(rec);
        on_epoch(epoch, mlp)?;
    }
    Ok(history)
}

fn diverged(history: History, epoch: usize) -> Error {
    Error::numeric(format!(
        "training loss became non-finite in epoch {epoch}\n{}",
        history.to_csv()
    ))
}

pub fn train(mlp: &mut Mlp, train: &Dataset, val: Option<&Dataset>, config: &TrainConfig) -> Result<History> {
    train_with_penalty(mlp, train, val, config, &Penalty::None)
}

/// Continues training with the spring term `α‖w - w₀‖²`, `α` equal to
/// twice the current learning rate.
pub fn v2_retrain(
    mlp: &mut Mlp,
    w0: ArrayView1<'_, f64>,
    train: &Dataset,
    val: Option<&Dataset>,
    config: &TrainConfig,
) -> Result<History> {
    if w0.len() != mlp.num_params() {
        return Err(Error::input("initial weights have the wrong length"));
    }
    let penalty = Penalty::Spring { anchor: w0.to_owned(), factor: 2.0 };
    train_with_penalty(mlp, train, val, config, &penalty)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(0, 10, 1e-3, 1e-5), 1e-3);
        assert!((cosine_lr(10, 10, 1e-3, 1e-5) - 1e-5).abs() < 1e-18);
        assert!((cosine_lr(5, 10, 1e-3, 1e-5) - 0.5 * (1e-3 + 1e-5)).abs() < 1e-15);
    }

    #[test]
    fn first_adam_step_is_lr_sign() {
        let mut opt = Adam::new(2);
        let mut w = [1.0, 1.0];
        opt.step(&mut w, array![3.0, -0.02].view(), 0.1);
        assert!((w[0] - 0.9).abs() < 1e-6);
        assert!((w[1] - 1.1).abs() < 1e-6);
    }

    #[test]
    fn zero_gradient_keeps_weights() {
        let mut opt = Adam::new(3);
        let mut w = [0.5, -1.0, 2.0];
        for _ in 0..100 {
            opt.step(&mut w, array![0.0, 0.0, 0.0].view(), 0.1);
        }
        assert_eq!(w, [0.5, -1.0, 2.0]);
    }
}
