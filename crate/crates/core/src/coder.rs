//! 32-bit range coder with 16-bit probability totals and discretized
//! Laplace distributions over a bounded integer support.
//!
//! Every floating-point operation that decides a cumulative frequency runs
//! in `f64` through `libm`, so encoder and decoder agree across hosts.

use crate::error::{Error, Result};

pub const PRECISION_BITS: u32 = 16;
/// Sum of all frequencies of a distribution.
pub const TOTAL: u32 = 1 << PRECISION_BITS;
/// Largest support a distribution may span.
pub const MAX_SUPPORT: usize = (TOTAL / 2) as usize;
const TOP: u32 = 1 << 24;

/// Cumulative frequencies over `[lo, hi]`: `cum(lo) == 0`, `cum(hi + 1) == TOTAL`
/// and every symbol gets a frequency of at least one.
pub trait Cdf {
    fn support(&self) -> (i32, i32);
    /// Cumulative frequency of all symbols below `s`, for `s` in `lo..=hi + 1`.
    fn cum(&self, s: i32) -> u32;
}

/// A Laplace(`mu`, `b`) distribution restricted to `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaplaceCdf {
    lo: i32,
    hi: i32,
    mu: f64,
    b: f64,
    norm: f64,
}

/// `P(a < X < c)` for a Laplace(`mu`, `b`), accurate in both tails.
fn interval_mass(a: f64, c: f64, mu: f64, b: f64) -> f64 {
    if c <= mu {
        0.5 * (libm::exp((c - mu) / b) - libm::exp((a - mu) / b))
    } else if a >= mu {
        0.5 * (libm::exp(-(a - mu) / b) - libm::exp(-(c - mu) / b))
    } else {
        1.0 - 0.5 * libm::exp((a - mu) / b) - 0.5 * libm::exp(-(c - mu) / b)
    }
}

impl LaplaceCdf {
    pub fn new(lo: i32, hi: i32, mu: f64, b: f64) -> Result<Self> {
        if hi < lo || (hi as i64 - lo as i64 + 1) as usize > MAX_SUPPORT {
            return Err(Error::InvalidArgument(format!("coder support [{lo}, {hi}] is empty or too wide")));
        }
        if !(b > 0.0 && b.is_finite() && mu.is_finite()) {
            return Err(Error::InvalidArgument(format!("invalid Laplace parameters mu={mu}, b={b}")));
        }
        let norm = interval_mass(lo as f64 - 0.5, hi as f64 + 0.5, mu, b);
        Ok(Self { lo, hi, mu, b, norm })
    }

    fn span(&self) -> u32 {
        (self.hi - self.lo + 1) as u32
    }

    /// Normalized mass below `s - 0.5`.
    fn below(&self, s: i32) -> f64 {
        let a = self.lo as f64 - 0.5;
        if self.norm > 1e-300 {
            (interval_mass(a, s as f64 - 0.5, self.mu, self.b) / self.norm).clamp(0.0, 1.0)
        } else {
            (s - self.lo) as f64 / self.span() as f64
        }
    }
}

impl Cdf for LaplaceCdf {
    fn support(&self) -> (i32, i32) {
        (self.lo, self.hi)
    }

    fn cum(&self, s: i32) -> u32 {
        if s <= self.lo {
            return 0;
        }
        if s > self.hi {
            return TOTAL;
        }
        let spare = (TOTAL - self.span()) as f64;
        (self.below(s) * spare).floor() as u32 + (s - self.lo) as u32
    }
}

pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    cache_size: u64,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        Self { low: 0, range: u32::MAX, cache: 0, cache_size: 1, out: Vec::new() }
    }

    fn shift_low(&mut self) {
        if (self.low as u32) < 0xFF00_0000 || (self.low >> 32) != 0 {
            let carry = (self.low >> 32) as u8;
            let mut byte = self.cache;
            loop {
                self.out.push(byte.wrapping_add(carry));
                byte = 0xFF;
                self.cache_size -= 1;
                if self.cache_size == 0 {
                    break;
                }
            }
            self.cache = (self.low >> 24) as u8;
        }
        self.cache_size += 1;
        self.low = (self.low & 0x00FF_FFFF) << 8;
    }

    /// Codes the interval `[cum, cum + freq)` of `TOTAL`.
    pub fn encode(&mut self, cum: u32, freq: u32) {
        debug_assert!(freq > 0 && cum + freq <= TOTAL);
        let r = self.range >> PRECISION_BITS;
        self.low += r as u64 * cum as u64;
        self.range = r * freq;
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
    }

    pub fn encode_symbol<C: Cdf>(&mut self, s: i32, cdf: &C) -> Result<()> {
        let (lo, hi) = cdf.support();
        if s < lo || s > hi {
            return Err(Error::SymbolOutOfRange { symbol: s as i64, min: lo as i64, max: hi as i64 });
        }
        let (a, b) = (cdf.cum(s), cdf.cum(s + 1));
        if b <= a {
            return Err(Error::CorruptPayload(format!("symbol {s} has zero frequency")));
        }
        self.encode(a, b - a);
        Ok(())
    }

    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..5 {
            self.shift_low();
        }
        self.out
    }
}

pub struct RangeDecoder<'a> {
    input: &'a [u8],
    pos: usize,
    range: u32,
    code: u32,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(input: &'a [u8]) -> Result<Self> {
        let mut d = Self { input, pos: 0, range: u32::MAX, code: 0 };
        for _ in 0..5 {
            d.code = (d.code << 8) | d.next_byte()? as u32;
        }
        Ok(d)
    }

    fn next_byte(&mut self) -> Result<u8> {
        let b = *self
            .input
            .get(self.pos)
            .ok_or_else(|| Error::CorruptPayload("range coder read past the payload".into()))?;
        self.pos += 1;
        Ok(b)
    }

    /// Bytes consumed so far.
    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn decode_symbol<C: Cdf>(&mut self, cdf: &C) -> Result<i32> {
        let r = self.range >> PRECISION_BITS;
        let target = self.code / r;
        if target >= TOTAL {
            return Err(Error::CorruptPayload("range coder value outside the distribution".into()));
        }
        // largest s with cum(s) <= target
        let (mut lo, mut hi) = cdf.support();
        while lo < hi {
            let mid = lo + (hi - lo + 1) / 2;
            if cdf.cum(mid) <= target {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        let (a, b) = (cdf.cum(lo), cdf.cum(lo + 1));
        if b <= a || target >= b {
            return Err(Error::CorruptPayload("CDF inversion failed".into()));
        }
        self.code -= r * a;
        self.range = r * (b - a);
        while self.range < TOP {
            self.range <<= 8;
            self.code = (self.code << 8) | self.next_byte()? as u32;
        }
        Ok(lo)
    }
}

/// Codes `symbols[i]` under `cdf_for(i)`.
pub fn range_encode<C: Cdf>(symbols: &[i32], mut cdf_for: impl FnMut(usize) -> Result<C>) -> Result<Vec<u8>> {
    let mut enc = RangeEncoder::new();
    for (i, &s) in symbols.iter().enumerate() {
        enc.encode_symbol(s, &cdf_for(i)?)?;
    }
    Ok(enc.finish())
}

pub fn range_decode<C: Cdf>(bytes: &[u8], count: usize, mut cdf_for: impl FnMut(usize) -> Result<C>) -> Result<Vec<i32>> {
    let mut dec = RangeDecoder::new(bytes)?;
    (0..count).map(|i| dec.decode_symbol(&cdf_for(i)?)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entropy::{laplace_rate, LaplaceParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Exp};

    fn laplace_ints(n: usize, b: f64, seed: u64) -> Vec<i32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = Exp::new(1.0 / b).unwrap();
        (0..n)
            .map(|_| {
                let x: f64 = e.sample(&mut rng);
                let s = if rng.gen_bool(0.5) { x } else { -x };
                s.round() as i32
            })
            .collect()
    }

    #[test]
    fn cdf_is_a_valid_table() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..300 {
            let lo = rng.gen_range(-300..10);
            let hi = lo + rng.gen_range(0..400);
            let mu = rng.gen_range(-400.0..400.0);
            let b = 10f64.powf(rng.gen_range(-4.0..3.0));
            let cdf = LaplaceCdf::new(lo, hi, mu, b).unwrap();
            assert_eq!(cdf.cum(lo), 0);
            assert_eq!(cdf.cum(hi + 1), TOTAL);
            for s in lo..=hi {
                assert!(cdf.cum(s + 1) > cdf.cum(s), "mu {mu} b {b} s {s}");
            }
        }
        assert!(LaplaceCdf::new(3, 2, 0.0, 1.0).is_err());
        assert!(LaplaceCdf::new(0, 5, 0.0, 0.0).is_err());
        assert!(LaplaceCdf::new(0, MAX_SUPPORT as i32, 0.0, 1.0).is_err());
    }

    #[test]
    fn empty_sequence() {
        let mk = |_| LaplaceCdf::new(0, 0, 0.0, 1.0);
        let bytes = range_encode(&[], mk).unwrap();
        assert_eq!(bytes.len(), 5);
        assert!(range_decode(&bytes, 0, mk).unwrap().is_empty());
    }

    #[test]
    fn payload_tracks_the_estimate() {
        let symbols = laplace_ints(1000, 1.0, 9);
        let (lo, hi) = (*symbols.iter().min().unwrap(), *symbols.iter().max().unwrap());
        let bytes = range_encode(&symbols, |_| LaplaceCdf::new(lo, hi, 0.0, 1.0)).unwrap();
        let est = laplace_rate(&symbols, LaplaceParams::new(0.0, 1.0).unwrap()).bits;
        assert!((bytes.len() * 8) as f64 <= est * 1.02 + 32.0, "{} bytes vs {est} bits", bytes.len());
        let back = range_decode(&bytes, symbols.len(), |_| LaplaceCdf::new(lo, hi, 0.0, 1.0)).unwrap();
        assert_eq!(back, symbols);
    }

    #[test]
    fn out_of_support_symbol() {
        let err = range_encode(&[0, 7], |_| LaplaceCdf::new(-3, 3, 0.0, 1.0)).unwrap_err();
        assert!(matches!(err, Error::SymbolOutOfRange { symbol: 7, .. }));
    }

    #[test]
    fn varying_distributions_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let params: Vec<(f64, f64)> = (0..2000).map(|_| (rng.gen_range(-5.0..5.0), rng.gen_range(1e-3..8.0))).collect();
        let symbols: Vec<i32> = params.iter().map(|&(mu, b)| (mu + rng.gen_range(-2.0..2.0) * b).round().clamp(-20.0, 20.0) as i32).collect();
        let cdf = |i: usize| LaplaceCdf::new(-20, 20, params[i].0, params[i].1);
        let bytes = range_encode(&symbols, cdf).unwrap();
        assert_eq!(range_decode(&bytes, symbols.len(), cdf).unwrap(), symbols);
        // a truncated payload is reported, not silently decoded
        let short = &bytes[..bytes.len() / 2];
        assert!(range_decode(short, symbols.len(), cdf).is_err());
    }
}
