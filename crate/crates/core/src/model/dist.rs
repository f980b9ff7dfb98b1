//! Symbol distributions over occupancy codes 1..=255 and their integer form
//! used by the range coder.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const SYMBOL_COUNT: usize = 255;
pub const PROB_BITS: u32 = 16;
pub const PROB_TOTAL: u32 = 1 << PROB_BITS;

/// Probabilities for occupancy symbols 1..=255 (index `s - 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution255<T>(pub Vec<T>);

impl<T: Scalar> Distribution255<T> {
    pub fn uniform() -> Self {
        Self(vec![T::one() / T::lit(SYMBOL_COUNT as f64); SYMBOL_COUNT])
    }

    pub fn probability(&self, symbol: u8) -> T {
        self.0[symbol as usize - 1]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }
}

/// Cumulative frequencies: symbol `s` owns `[cum[s-1], cum[s])`, `cum[255] = 2^16`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedCdf {
    cum: [u32; SYMBOL_COUNT + 1],
}

impl QuantizedCdf {
    pub fn from_frequencies(freqs: &[u32]) -> Result<Self> {
        if freqs.len() != SYMBOL_COUNT {
            return Err(Error::InvalidArgument(format!(
                "expected {SYMBOL_COUNT} frequencies, got {}",
                freqs.len()
            )));
        }
        let mut cum = [0u32; SYMBOL_COUNT + 1];
        for (i, &f) in freqs.iter().enumerate() {
            if f == 0 {
                return Err(Error::ZeroFrequency);
            }
            cum[i + 1] = cum[i] + f;
        }
        if cum[SYMBOL_COUNT] != PROB_TOTAL {
            return Err(Error::InvalidArgument(format!(
                "frequencies sum to {}, expected {PROB_TOTAL}",
                cum[SYMBOL_COUNT]
            )));
        }
        Ok(Self { cum })
    }

    /// Quantizes non-negative integer weights (at least one positive).
    pub fn from_counts(counts: &[u64]) -> Self {
        assert_eq!(counts.len(), SYMBOL_COUNT);
        let total: u128 = counts.iter().map(|&c| c as u128).sum();
        assert!(total > 0, "all-zero counts");
        let spare = (PROB_TOTAL as u128) - SYMBOL_COUNT as u128;
        let shares = counts.iter().map(|&c| {
            let scaled = c as u128 * spare;
            ((scaled / total) as u32, (scaled % total) as f64 / total as f64)
        });
        Self::from_shares(shares)
    }

    /// `shares` yields (integer part, fractional remainder) of each symbol's
    /// portion of the `2^16 - 255` mass left after the one-count floor.
    fn from_shares(shares: impl Iterator<Item = (u32, f64)>) -> Self {
        let mut freqs = [1u32; SYMBOL_COUNT];
        let mut rema = [0f64; SYMBOL_COUNT];
        let mut used = 0u32;
        for (i, (whole, frac)) in shares.enumerate() {
            freqs[i] += whole;
            rema[i] = frac;
            used += freqs[i];
        }
        debug_assert!(used <= PROB_TOTAL);
        let leftover = (PROB_TOTAL - used) as usize;
        if leftover > 0 {
            // largest remainder first, ties to the lower symbol; a strict total
            // order, so the chosen set does not depend on the selection algorithm
            let mut order: [u8; SYMBOL_COUNT] = std::array::from_fn(|i| i as u8);
            let by_rank = |a: &u8, b: &u8| rema[*b as usize].total_cmp(&rema[*a as usize]).then(a.cmp(b));
            let whole_rounds = leftover / SYMBOL_COUNT;
            let rest = leftover % SYMBOL_COUNT;
            if rest > 0 {
                order.select_nth_unstable_by(rest - 1, by_rank);
            }
            for f in freqs.iter_mut() {
                *f += whole_rounds as u32;
            }
            for &i in &order[..rest] {
                freqs[i as usize] += 1;
            }
        }
        Self::from_frequencies(&freqs).expect("quantizer invariant")
    }

    pub fn uniform() -> Self {
        Self::from_counts(&[1; SYMBOL_COUNT])
    }

    /// `[low, high)` interval of `symbol` (1..=255).
    #[inline]
    pub fn interval(&self, symbol: u8) -> (u32, u32) {
        let s = symbol as usize;
        (self.cum[s - 1], self.cum[s])
    }

    pub fn frequency(&self, symbol: u8) -> u32 {
        let (lo, hi) = self.interval(symbol);
        hi - lo
    }

    pub fn cumulative(&self) -> &[u32; SYMBOL_COUNT + 1] {
        &self.cum
    }

    /// Probability the coder actually assigns to `symbol`.
    pub fn probability(&self, symbol: u8) -> f64 {
        self.frequency(symbol) as f64 / PROB_TOTAL as f64
    }
}

/// Deterministic rounding of a distribution to 16-bit frequencies with every
/// symbol at least 1. All arithmetic is exact-order IEEE `f64`.
pub fn quantize_dist<T: Scalar>(d: &Distribution255<T>) -> QuantizedCdf {
    let probs: Vec<f64> = d.0.iter().map(|p| p.as_f64().max(0.0)).collect();
    let total: f64 = probs.iter().sum();
    let spare = (PROB_TOTAL as usize - SYMBOL_COUNT) as f64;
    let shares = probs.iter().map(|&p| {
        let scaled = if total > 0.0 {
            p / total * spare
        } else {
            spare / SYMBOL_COUNT as f64
        };
        let whole = scaled.floor();
        (whole as u32, scaled - whole)
    });
    QuantizedCdf::from_shares(shares)
}

/// Summed cross-entropy `-Σ ln q_i(x_i)` in nats.
pub fn cross_entropy<T: Scalar>(dists: &[Distribution255<T>], targets: &[u8]) -> Result<f64> {
    if dists.len() != targets.len() {
        return Err(Error::InvalidArgument("distribution/target count mismatch".into()));
    }
    let mut loss = 0.0;
    for (d, &x) in dists.iter().zip(targets) {
        if x == 0 {
            return Err(Error::InvalidTarget(0));
        }
        loss -= d.probability(x).as_f64().ln();
    }
    Ok(loss)
}

/// Cross-entropy expressed in bits per predicted node.
pub fn bits_per_node<T: Scalar>(dists: &[Distribution255<T>], targets: &[u8]) -> Result<f64> {
    Ok(cross_entropy(dists, targets)? / (targets.len() as f64 * std::f64::consts::LN_2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn kl_bits(d: &[f64], q: &QuantizedCdf) -> f64 {
        d.iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(i, &p)| p * (p / q.probability(i as u8 + 1)).log2())
            .sum()
    }

    #[test]
    fn uniform_quantizes_evenly() {
        let q = quantize_dist(&Distribution255::<f64>::uniform());
        let freqs: Vec<u32> = (1..=255).map(|s| q.frequency(s)).collect();
        assert_eq!(q.cumulative()[255], 65536);
        let (lo, hi) = (freqs.iter().min().unwrap(), freqs.iter().max().unwrap());
        assert!(hi - lo <= 1);
    }

    #[test]
    fn tiny_tail_gets_the_floor() {
        let mut p = vec![0.0f64; 255];
        p[0] = 1.0 - 1e-12;
        p[200] = 1e-12;
        let q = quantize_dist(&Distribution255(p));
        assert_eq!(q.frequency(201), 1);
        assert!((1..=255).all(|s| q.frequency(s) >= 1));
        assert_eq!(q.frequency(1), 65536 - 254);
    }

    #[test]
    fn kl_small_on_random_sweep() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut worst = 0.0f64;
        for trial in 0..2000 {
            let scale = [0.5, 1.0, 2.0, 4.0][trial % 4];
            let mut logits: Vec<f64> = (0..255).map(|_| rng.gen::<f64>() * 2.0 * scale - scale).collect();
            let max = logits.iter().cloned().fold(f64::MIN, f64::max);
            logits.iter_mut().for_each(|l| *l = (*l - max).exp());
            let s: f64 = logits.iter().sum();
            logits.iter_mut().for_each(|l| *l /= s);
            let q = quantize_dist(&Distribution255(logits.clone()));
            worst = worst.max(kl_bits(&logits, &q));
        }
        assert!(worst < 1e-3, "worst KL {worst}");
    }

    #[test]
    fn kl_bounded_by_floor_mass_for_peaked_inputs() {
        // the floor of one count per symbol caps the top symbol at 1 - 254/2^16
        let mut p = vec![1e-15f64; 255];
        p[7] = 1.0;
        let q = quantize_dist(&Distribution255(p.clone()));
        let bound = -(1.0 - 254.0 / 65536.0f64).log2();
        assert!(kl_bits(&p, &q) <= bound + 1e-12);
    }

    /// Full sort by (remainder desc, index asc), cycling over the order.
    fn sorted_reference(probs: &[f64]) -> Vec<u32> {
        let total: f64 = probs.iter().sum();
        let spare = 65536.0 - 255.0;
        let mut freqs = vec![1u32; 255];
        let mut rema = vec![0.0; 255];
        for (i, &p) in probs.iter().enumerate() {
            let scaled = p / total * spare;
            freqs[i] += scaled.floor() as u32;
            rema[i] = scaled - scaled.floor();
        }
        let leftover = 65536 - freqs.iter().sum::<u32>() as usize;
        let mut order: Vec<usize> = (0..255).collect();
        order.sort_by(|&a, &b| rema[b].total_cmp(&rema[a]).then(a.cmp(&b)));
        for &i in order.iter().cycle().take(leftover) {
            freqs[i] += 1;
        }
        freqs
    }

    #[test]
    fn selection_matches_sorted_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for trial in 0..500 {
            // coarse values force many tied remainders
            let probs: Vec<f64> = if trial % 2 == 0 {
                (0..255).map(|_| rng.gen_range(0..4) as f64 + 1e-3).collect()
            } else {
                (0..255).map(|_| rng.gen::<f64>().powi(6)).collect()
            };
            let q = quantize_dist(&Distribution255(probs.clone()));
            let got: Vec<u32> = (1..=255).map(|s| q.frequency(s)).collect();
            assert_eq!(got, sorted_reference(&probs), "trial {trial}");
        }
    }

    #[test]
    fn counts_quantize_exactly() {
        let q = QuantizedCdf::from_counts(&[1; 255]);
        assert_eq!(q, QuantizedCdf::uniform());
        let mut c = vec![1u64; 255];
        c[254] = 1_000_000;
        let q = QuantizedCdf::from_counts(&c);
        assert_eq!(q.cumulative()[255], 65536);
        assert!(q.frequency(255) > 65000);
    }

    #[test]
    fn cross_entropy_examples() {
        let mut one_hot = vec![0.0f64; 255];
        one_hot[41] = 1.0;
        let d = vec![Distribution255(one_hot)];
        assert_eq!(cross_entropy(&d, &[42]).unwrap(), 0.0);

        let u = vec![Distribution255::<f64>::uniform(); 3];
        let nats = cross_entropy(&u, &[1, 100, 255]).unwrap() / 3.0;
        assert!((nats - 5.541).abs() < 1e-3);
        assert!((bits_per_node(&u, &[1, 100, 255]).unwrap() - 7.994).abs() < 1e-3);
        assert!(matches!(cross_entropy(&u[..1], &[0]), Err(Error::InvalidTarget(0))));
    }

    #[test]
    fn cross_entropy_hand_computed() {
        // five nodes, each with a two-level distribution
        let mut dists = Vec::new();
        let targets = [1u8, 2, 3, 4, 5];
        let picks = [0.5, 0.25, 0.125, 0.9, 0.01];
        for (i, &p) in picks.iter().enumerate() {
            let mut v = vec![(1.0 - p) / 254.0; 255];
            v[i] = p;
            dists.push(Distribution255(v));
        }
        let expected = -(0.5f64.ln() + 0.25f64.ln() + 0.125f64.ln() + 0.9f64.ln() + 0.01f64.ln());
        assert!((cross_entropy(&dists, &targets).unwrap() - expected).abs() < 1e-12);
    }
}
