//! The attention context model: parameters, inference, gradients, training.

mod config;
pub mod gradcheck;
pub mod kernels;
mod layout;
mod dist;
mod io;
mod trace;
pub mod train;

pub use config::ModelConfig;
pub use dist::{
    bits_per_node, cross_entropy, quantize_dist, Distribution255, QuantizedCdf, PROB_BITS, PROB_TOTAL,
    SYMBOL_COUNT,
};
pub use layout::{Layout, TensorKind, TensorSpec};
pub use trace::WindowTrace;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::context::{ContextWindow, NodeFeatureRow, PAD_OCTANT};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Model weights in a flat vector laid out by [`Layout`].
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    config: ModelConfig,
    layout: Layout,
    params: Vec<T>,
}

impl<T: Scalar> Model<T> {
    /// Uniform ±1/sqrt(fan_in) initialization; layer norms start as identity.
    pub fn new_random(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![T::zero(); layout.total];
        for spec in &layout.tensors {
            let slice = &mut params[spec.range()];
            match spec.kind {
                TensorKind::NormGain => slice.iter_mut().for_each(|v| *v = T::one()),
                TensorKind::NormBias => {}
                TensorKind::Embedding | TensorKind::Weight | TensorKind::Bias => {
                    let bound = 1.0 / (spec.fan_in as f64).sqrt();
                    for v in slice.iter_mut() {
                        *v = T::lit(rng.gen_range(-bound..bound));
                    }
                }
            }
        }
        Ok(Self {
            config,
            layout,
            params,
        })
    }

    pub fn from_params(config: ModelConfig, params: Vec<T>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.total {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameters, got {}",
                layout.total,
                params.len()
            )));
        }
        Ok(Self {
            config,
            layout,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config,
            layout: self.layout.clone(),
            params: self.params.iter().map(|&v| U::lit(v.as_f64())).collect(),
        }
    }

    fn check_row(&self, row: &NodeFeatureRow) -> Result<()> {
        if row.slots.len() != self.config.k {
            return Err(Error::InvalidArgument(format!(
                "row has {} slots, model expects {}",
                row.slots.len(),
                self.config.k
            )));
        }
        for s in &row.slots {
            if s.level as usize > self.config.max_level {
                return Err(Error::IndexOutOfRange {
                    table: "level",
                    index: s.level as usize,
                    size: self.config.max_level + 1,
                });
            }
            if s.octant > PAD_OCTANT {
                return Err(Error::IndexOutOfRange {
                    table: "octant",
                    index: s.octant as usize,
                    size: PAD_OCTANT as usize + 1,
                });
            }
        }
        Ok(())
    }

    pub(crate) fn embed_into(&self, row: &NodeFeatureRow, out: &mut [T]) -> Result<()> {
        self.check_row(row)?;
        let c = &self.config;
        let e = c.slot_dim();
        let p = &self.params;
        for (t, s) in row.slots.iter().enumerate() {
            let dst = &mut out[t * e..(t + 1) * e];
            let o = self.layout.emb_occ + s.occupancy as usize * c.d_occ;
            dst[..c.d_occ].copy_from_slice(&p[o..o + c.d_occ]);
            let o = self.layout.emb_lvl + s.level as usize * c.d_lvl;
            dst[c.d_occ..c.d_occ + c.d_lvl].copy_from_slice(&p[o..o + c.d_lvl]);
            let o = self.layout.emb_oct + s.octant as usize * c.d_oct;
            dst[c.d_occ + c.d_lvl..].copy_from_slice(&p[o..o + c.d_oct]);
        }
        Ok(())
    }

    /// Per-slot embeddings `[occupancy | level | octant]`, one vector per slot.
    pub fn embed(&self, row: &NodeFeatureRow) -> Result<Vec<Vec<T>>> {
        let e = self.config.slot_dim();
        let mut flat = vec![T::zero(); self.config.model_dim()];
        self.embed_into(row, &mut flat)?;
        Ok(flat.chunks(e).map(<[T]>::to_vec).collect())
    }

    pub fn trace(&self) -> WindowTrace<'_, T> {
        WindowTrace::new(self)
    }

    /// Runs a window and returns the distributions of its target rows.
    pub fn forward(&self, window: &ContextWindow) -> Result<Vec<Distribution255<T>>> {
        let trace = self.run_window(window)?;
        Ok(trace.outputs().map(|p| Distribution255(p.to_vec())).collect())
    }

    pub fn run_window(&self, window: &ContextWindow) -> Result<WindowTrace<'_, T>> {
        let mut trace = self.trace();
        let first = window.first_target_row();
        for (r, row) in window.rows.iter().enumerate() {
            trace.push_row(row, r >= first)?;
        }
        Ok(trace)
    }

    /// Mean cross-entropy (nats) over the window's targets, with its gradient
    /// scaled by `weight` accumulated into `grads`. Returns the summed loss.
    pub fn loss_and_grad(&self, window: &ContextWindow, weight: T, grads: &mut [T]) -> Result<f64> {
        let trace = self.run_window(window)?;
        Ok(trace.backward(&window.targets, weight, grads))
    }

    /// Summed cross-entropy in nats over all targets of the windows.
    pub fn evaluate(&self, windows: &[ContextWindow]) -> Result<(f64, usize)> {
        let mut nats = 0.0;
        let mut count = 0;
        for w in windows {
            let dists = self.forward(w)?;
            nats += cross_entropy(&dists, &w.targets)?;
            count += w.targets.len();
        }
        Ok((nats, count))
    }
}

pub type Model32 = Model<f32>;
pub type Model64 = Model<f64>;

#[cfg(test)]
mod tests;
