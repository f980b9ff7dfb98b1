//! Flat run configuration shared by the command-line tools.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::context::WindowParams;
use crate::error::{Error, Result};
use crate::metrics::DEFAULT_NORMAL_K;
use crate::model::train::TrainConfig;
use crate::model::ModelConfig;

pub const CONFIG_VERSION: u32 = 1;

/// Every key is optional; missing keys take the defaults below, unknown keys
/// are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub version: u32,
    /// Window length.
    pub n: usize,
    /// Slots per row, which is also the number of heads.
    pub k: usize,
    /// Targets per window.
    pub n0: usize,
    /// Octree depth.
    pub depth: u8,
    pub d_occ: usize,
    pub d_lvl: usize,
    pub d_oct: usize,
    pub max_level: usize,
    pub head_dim: usize,
    pub ffn_hidden: usize,
    pub out_hidden: usize,
    pub layers: usize,
    /// Must equal `k` when given.
    pub heads: Option<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub time_budget_secs: Option<f64>,
    /// PSNR peak value.
    pub peak: f64,
    /// Neighbours used for normal estimation.
    pub normal_k: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::desk();
        let t = TrainConfig::default();
        Self {
            version: CONFIG_VERSION,
            n: m.n,
            k: m.k,
            n0: m.n0,
            depth: 10,
            d_occ: m.d_occ,
            d_lvl: m.d_lvl,
            d_oct: m.d_oct,
            max_level: m.max_level,
            head_dim: m.head_dim,
            ffn_hidden: m.ffn_hidden,
            out_hidden: m.out_hidden,
            layers: m.layers,
            heads: None,
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            epochs: t.epochs,
            seed: t.seed,
            time_budget_secs: t.time_budget_secs,
            peak: 1.0,
            normal_k: DEFAULT_NORMAL_K,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("plain fields serialize")
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "config version {} not supported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if let Some(h) = self.heads {
            if h != self.k {
                return Err(Error::Config(format!("heads ({h}) must equal k ({})", self.k)));
            }
        }
        if !(self.peak > 0.0 && self.peak.is_finite()) {
            return Err(Error::Config("peak must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.depth == 0 || self.depth > crate::geometry::MAX_DEPTH {
            return Err(Error::Config(format!("depth must be in 1..={}", crate::geometry::MAX_DEPTH)));
        }
        self.model_config().validate()
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            d_occ: self.d_occ,
            d_lvl: self.d_lvl,
            d_oct: self.d_oct,
            max_level: self.max_level,
            k: self.k,
            head_dim: self.head_dim,
            ffn_hidden: self.ffn_hidden,
            out_hidden: self.out_hidden,
            layers: self.layers,
            n: self.n,
            n0: self.n0,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            seed: self.seed,
            time_budget_secs: self.time_budget_secs,
            ..TrainConfig::default()
        }
    }

    pub fn window(&self) -> Result<WindowParams> {
        WindowParams::new(self.n, self.k, self.n0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn overrides_and_roundtrip() {
        let c = RunConfig::from_toml("n = 1024\nn0 = 1024\nd_occ = 128\nheads = 4\nlearning_rate = 0.001\n").unwrap();
        assert_eq!(c.n, 1024);
        assert_eq!(c.model_config().slot_dim(), 138);
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn rejects_unknown_and_inconsistent_keys() {
        assert!(matches!(RunConfig::from_toml("window = 3"), Err(Error::Config(_))));
        assert!(RunConfig::from_toml("heads = 3").is_err());
        assert!(RunConfig::from_toml("n0 = 500").is_err());
        assert!(RunConfig::from_toml("version = 2").is_err());
        assert!(RunConfig::from_toml("depth = 17").is_err());
    }
}
