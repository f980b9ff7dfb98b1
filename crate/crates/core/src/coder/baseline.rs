//! Adaptive order-0 model: one count per symbol, starting at 1.

use crate::model::{QuantizedCdf, SYMBOL_COUNT};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdaptiveModel {
    counts: Vec<u64>,
}

impl Default for AdaptiveModel {
    fn default() -> Self {
        Self::new()
    }
}

impl AdaptiveModel {
    pub fn new() -> Self {
        Self {
            counts: vec![1; SYMBOL_COUNT],
        }
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn cdf(&self) -> QuantizedCdf {
        QuantizedCdf::from_counts(&self.counts)
    }

    pub fn update(&mut self, symbol: u8) {
        self.counts[symbol as usize - 1] += 1;
    }
}

/// Ideal adaptive code length in bits of `symbols`, using the same quantized
/// probabilities the coder would.
pub fn adaptive_bits(symbols: impl IntoIterator<Item = u8>) -> f64 {
    let mut m = AdaptiveModel::new();
    let mut bits = 0.0;
    for s in symbols {
        bits -= m.cdf().probability(s).log2();
        m.update(s);
    }
    bits
}
