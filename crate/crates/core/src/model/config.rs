use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture and default window configuration of the context model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Occupancy embedding width.
    pub d_occ: usize,
    /// Level embedding width.
    pub d_lvl: usize,
    /// Octant embedding width.
    pub d_oct: usize,
    /// Largest level index the level table can embed.
    pub max_level: usize,
    /// Slots per row (node plus ancestors); also the number of heads.
    pub k: usize,
    pub head_dim: usize,
    pub ffn_hidden: usize,
    pub out_hidden: usize,
    pub layers: usize,
    /// Default window length used for training and coding.
    pub n: usize,
    /// Default number of targets per window.
    pub n0: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// Small configuration that trains in minutes on one CPU core.
    pub fn desk() -> Self {
        Self {
            d_occ: 32,
            d_lvl: 6,
            d_oct: 4,
            max_level: 16,
            k: 4,
            head_dim: 24,
            ffn_hidden: 160,
            out_hidden: 160,
            layers: 2,
            n: 128,
            n0: 128,
        }
    }

    /// Full-size configuration: 128/6/4 embeddings, N = N0 = 1024.
    pub fn full() -> Self {
        Self {
            d_occ: 128,
            d_lvl: 6,
            d_oct: 4,
            max_level: 16,
            k: 4,
            head_dim: 138,
            ffn_hidden: 552,
            out_hidden: 552,
            layers: 2,
            n: 1024,
            n0: 1024,
        }
    }

    pub fn slot_dim(&self) -> usize {
        self.d_occ + self.d_lvl + self.d_oct
    }

    pub fn model_dim(&self) -> usize {
        self.k * self.slot_dim()
    }

    pub fn heads_dim(&self) -> usize {
        self.k * self.head_dim
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_occ", self.d_occ),
            ("d_lvl", self.d_lvl),
            ("d_oct", self.d_oct),
            ("k", self.k),
            ("head_dim", self.head_dim),
            ("ffn_hidden", self.ffn_hidden),
            ("out_hidden", self.out_hidden),
            ("layers", self.layers),
            ("n", self.n),
            ("n0", self.n0),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.n0 > self.n {
            return Err(Error::Config("n0 must not exceed n".into()));
        }
        if self.max_level > 255 {
            return Err(Error::Config("max_level must be below 256".into()));
        }
        Ok(())
    }
}
