//! Byte-oriented range coder over 16-bit cumulative frequencies.
//!
//! State is a 32-bit range and a 64-bit low word whose bit 32 is a pending
//! carry. Symbol `[c_lo, c_hi)` maps the range `r` to the sub-interval
//! `[⌊r·c_lo/2^16⌋, ⌊r·c_hi/2^16⌋)`; adjacent symbols share their boundary, so
//! the partition of `r` is exact. The range is kept at or above 2^24 by
//! shifting out whole bytes.

use crate::error::{Error, Result};
use crate::model::{QuantizedCdf, PROB_BITS, SYMBOL_COUNT};

const TOP: u32 = 1 << 24;

#[inline]
fn bound(range: u32, cum: u32) -> u32 {
    ((range as u64 * cum as u64) >> PROB_BITS) as u32
}

#[derive(Debug, Clone)]
pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    /// Bytes held back for carry resolution: the cache plus this many - 1 0xFF bytes.
    pending: u64,
    out: Vec<u8>,
    /// The very first byte is always zero and is not stored.
    skip_first: bool,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        Self {
            low: 0,
            range: u32::MAX,
            cache: 0,
            pending: 1,
            out: Vec::new(),
            skip_first: true,
        }
    }

    /// Codes the interval `[c_lo, c_hi)` of a total of `2^16`.
    pub fn encode(&mut self, c_lo: u32, c_hi: u32) -> Result<()> {
        if c_hi <= c_lo {
            return Err(Error::ZeroFrequency);
        }
        debug_assert!(c_hi <= 1 << PROB_BITS);
        let lo = bound(self.range, c_lo);
        let hi = bound(self.range, c_hi);
        self.low += lo as u64;
        self.range = hi - lo;
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
        Ok(())
    }

    pub fn encode_symbol(&mut self, cdf: &QuantizedCdf, symbol: u8) -> Result<()> {
        if symbol == 0 {
            return Err(Error::InvalidTarget(0));
        }
        let (lo, hi) = cdf.interval(symbol);
        self.encode(lo, hi)
    }

    fn emit(&mut self, byte: u8) {
        if self.skip_first {
            debug_assert_eq!(byte, 0);
            self.skip_first = false;
        } else {
            self.out.push(byte);
        }
    }

    fn shift_low(&mut self) {
        if self.low < 0xFF00_0000 || self.low >= 1 << 32 {
            let carry = (self.low >> 32) as u8;
            let mut byte = self.cache;
            while self.pending > 0 {
                self.emit(byte.wrapping_add(carry));
                byte = 0xFF;
                self.pending -= 1;
            }
            self.cache = (self.low >> 24) as u8;
        }
        self.pending += 1;
        self.low = (self.low & 0x00FF_FFFF) << 8;
    }

    /// Terminates the stream. The final value is the point of `[low, low+range)`
    /// with the most trailing zero bits; trailing zero bytes are dropped since
    /// the decoder reads past the end as zeros. At least one byte is kept.
    pub fn finish(mut self) -> Vec<u8> {
        let top = self.low + self.range as u64;
        for bits in (0..=32).rev() {
            let mask = (1u64 << bits) - 1;
            let v = (self.low + mask) & !mask;
            if v < top {
                self.low = v;
                break;
            }
        }
        for _ in 0..5 {
            self.shift_low();
        }
        while self.out.last() == Some(&0) {
            self.out.pop();
        }
        if self.out.is_empty() {
            self.out.push(0);
        }
        self.out
    }
}

#[derive(Debug, Clone)]
pub struct RangeDecoder<'a> {
    input: &'a [u8],
    pos: usize,
    code: u32,
    range: u32,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(input: &'a [u8]) -> Self {
        let mut d = Self {
            input,
            pos: 0,
            code: 0,
            range: u32::MAX,
        };
        for _ in 0..4 {
            d.code = d.code << 8 | d.next_byte() as u32;
        }
        d
    }

    fn next_byte(&mut self) -> u8 {
        let b = self.input.get(self.pos).copied().unwrap_or(0);
        self.pos += 1;
        b
    }

    /// Bytes consumed so far, counting implicit zeros past the end.
    pub fn consumed(&self) -> usize {
        self.pos
    }

    /// Decodes one symbol (1..=255). `position` only labels errors.
    pub fn decode_symbol(&mut self, cdf: &QuantizedCdf, position: usize) -> Result<u8> {
        let cum = cdf.cumulative();
        if self.code >= bound(self.range, cum[SYMBOL_COUNT]) {
            return Err(Error::Corrupt {
                position,
                message: "code value outside the coding interval".into(),
            });
        }
        // largest s with bound(cum[s]) <= code; bounds are strictly increasing
        let (mut lo, mut hi) = (0usize, SYMBOL_COUNT);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if bound(self.range, cum[mid]) <= self.code {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let b_lo = bound(self.range, cum[lo]);
        let b_hi = bound(self.range, cum[lo + 1]);
        self.code -= b_lo;
        self.range = b_hi - b_lo;
        while self.range < TOP {
            self.range <<= 8;
            self.code = self.code << 8 | self.next_byte() as u32;
        }
        Ok(lo as u8 + 1)
    }
}

/// Ideal code length `-log2 q̂(symbol)` in bits.
pub fn symbol_bits(cdf: &QuantizedCdf, symbol: u8) -> f64 {
    -cdf.probability(symbol).log2()
}
