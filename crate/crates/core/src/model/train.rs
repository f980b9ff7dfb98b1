//! Adam training over context windows.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig};
use crate::context::{build_windows, ContextWindow, WindowParams};
use crate::error::{Error, Result};
use crate::octree::NodeSequence;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Windows per optimizer step.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Stop after this many seconds of wall time (checked between steps).
    pub time_budget_secs: Option<f64>,
    /// Return the parameters of the epoch with the lowest validation loss
    /// instead of the last epoch's. Ignored without a validation set.
    pub keep_best: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 8,
            batch_size: 32,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            time_budget_secs: None,
            keep_best: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub steps: usize,
    pub train_bits_per_node: f64,
    pub val_bits_per_node: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct Adam<T> {
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(n: usize, cfg: &TrainConfig) -> Self {
        Self {
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            t: 0,
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.epsilon,
        }
    }

    pub fn step(&mut self, params: &mut [T], grads: &[T]) {
        self.t += 1;
        let b1 = T::lit(self.beta1);
        let b2 = T::lit(self.beta2);
        let c1 = T::one() - b1;
        let c2 = T::one() - b2;
        let lr_t = T::lit(self.lr * (1.0 - self.beta2.powi(self.t)).sqrt() / (1.0 - self.beta1.powi(self.t)));
        let eps = T::lit(self.eps);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + c1 * g;
            self.v[i] = b2 * self.v[i] + c2 * g * g;
            params[i] -= lr_t * self.m[i] / (self.v[i].sqrt() + eps);
        }
    }
}

/// Windows used both for training and for measuring bits per node.
pub fn windows_for(dataset: &[NodeSequence], params: WindowParams) -> Vec<ContextWindow> {
    dataset.iter().flat_map(|ns| build_windows(ns, params)).collect()
}

/// Trains a fresh model. `on_epoch` sees every epoch's statistics as they
/// complete. With a validation set and `keep_best`, the returned model is the
/// end-of-epoch snapshot with the lowest validation bits per node. Gradients of a batch are computed per window (possibly in
/// parallel) and summed in window order, so results depend only on the seed.
pub fn train<T: Scalar>(
    train_set: &[NodeSequence],
    val_set: &[NodeSequence],
    model_config: ModelConfig,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<(Model<T>, Vec<EpochStats>)> {
    if train_set.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let wp = WindowParams::new(model_config.n, model_config.k, model_config.n0)?;
    let windows = windows_for(train_set, wp);
    let val_windows = windows_for(val_set, wp);
    let mut model = Model::<T>::new_random(model_config, cfg.seed)?;
    let mut adam = Adam::new(model.param_count(), cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let start = Instant::now();
    let mut history = Vec::new();
    let mut out_of_time = false;
    let mut best: Option<(f64, Vec<T>)> = None;

    for epoch in 0..cfg.epochs {
        let epoch_start = Instant::now();
        order.shuffle(&mut rng);
        let mut nats = 0.0;
        let mut count = 0usize;
        let mut steps = 0;
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            if let Some(budget) = cfg.time_budget_secs {
                if start.elapsed().as_secs_f64() > budget {
                    out_of_time = true;
                    break;
                }
            }
            let targets: usize = batch.iter().map(|&i| windows[i].targets.len()).sum();
            let weight = T::one() / T::lit(targets as f64);
            let per_window: Vec<(Vec<T>, f64)> = batch
                .par_iter()
                .map(|&i| {
                    let mut g = vec![T::zero(); model.param_count()];
                    let loss = model.loss_and_grad(&windows[i], weight, &mut g)?;
                    Ok((g, loss))
                })
                .collect::<Result<_>>()?;
            let mut grads = vec![T::zero(); model.param_count()];
            let mut batch_loss = 0.0;
            for (g, loss) in &per_window {
                for (acc, &v) in grads.iter_mut().zip(g) {
                    *acc += v;
                }
                batch_loss += loss;
            }
            if !batch_loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    step,
                    loss: batch_loss / targets as f64,
                });
            }
            adam.step(model.params_mut(), &grads);
            nats += batch_loss;
            count += targets;
            steps += 1;
        }
        if steps == 0 {
            break;
        }
        let val_bits_per_node = if val_windows.is_empty() {
            None
        } else {
            let (vn, vc) = model.evaluate(&val_windows)?;
            Some(vn / (vc as f64 * std::f64::consts::LN_2))
        };
        let stats = EpochStats {
            epoch,
            steps,
            train_bits_per_node: nats / (count as f64 * std::f64::consts::LN_2),
            val_bits_per_node,
            seconds: epoch_start.elapsed().as_secs_f64(),
        };
        on_epoch(&stats);
        history.push(stats);
        if let (true, Some(v)) = (cfg.keep_best, val_bits_per_node) {
            if best.as_ref().is_none_or(|(b, _)| v < *b) {
                best = Some((v, model.params().to_vec()));
            }
        }
        if out_of_time {
            break;
        }
    }
    if let Some((_, params)) = best {
        model = Model::from_params(model_config, params)?;
    }
    Ok((model, history))
}

/// Bits per node of `model` over the windows of `dataset`.
pub fn bits_per_node<T: Scalar>(model: &Model<T>, dataset: &[NodeSequence], params: WindowParams) -> Result<f64> {
    let windows = windows_for(dataset, params);
    let (nats, count) = model.evaluate(&windows)?;
    Ok(nats / (count as f64 * std::f64::consts::LN_2))
}
