//! Quantized Gaussian parameters and the frequency tables built from them.

use std::sync::OnceLock;

use crate::entropy::{standard_interval, upper_tail, SIGMA_MIN};
use crate::error::{BitstreamError, Result};

pub const PRECISION: u32 = 16;
pub const TOTAL: u32 = 1 << PRECISION;
/// Largest residual magnitude with its own symbol.
pub const R_MAX: i64 = 64;
/// Symbols `-R_MAX..=R_MAX` followed by the escape symbol.
pub const ALPHABET: usize = 2 * R_MAX as usize + 2;
pub const ESCAPE: usize = ALPHABET - 1;
pub const SCALE_LEVELS: usize = 64;
pub const SIGMA_MAX: f64 = 16.0;
pub const MU_STEPS: i64 = 256;

/// Cumulative frequencies; `cum[s]..cum[s + 1]` is the slot of symbol `s`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CdfTable {
    cum: Vec<u32>,
}

impl CdfTable {
    /// Accepts any strictly increasing table from 0 to [`TOTAL`].
    pub fn from_cumulative(cum: Vec<u32>) -> Result<Self> {
        let ok = cum.len() >= 2
            && cum[0] == 0
            && *cum.last().unwrap() == TOTAL
            && cum.windows(2).all(|w| w[0] < w[1]);
        if !ok {
            return Err(BitstreamError::Corrupt("cumulative table is not a valid CDF".into()).into());
        }
        Ok(CdfTable { cum })
    }

    pub fn cumulative(&self) -> &[u32] {
        &self.cum
    }

    pub fn symbols(&self) -> usize {
        self.cum.len() - 1
    }

    #[inline]
    pub fn cum(&self, s: usize) -> u32 {
        self.cum[s]
    }

    #[inline]
    pub fn freq(&self, s: usize) -> u32 {
        self.cum[s + 1] - self.cum[s]
    }

    /// Symbol whose slot contains `target`.
    #[inline]
    pub fn symbol_for(&self, target: u32) -> usize {
        self.cum.partition_point(|&c| c <= target) - 1
    }

    /// Probability the coder actually assigns to `s`.
    pub fn probability(&self, s: usize) -> f64 {
        self.freq(s) as f64 / TOTAL as f64
    }
}

/// Symbol index of residual `r`, or [`ESCAPE`] when out of range.
#[inline]
pub fn symbol_of(r: i64) -> usize {
    if r.abs() <= R_MAX {
        (r + R_MAX) as usize
    } else {
        ESCAPE
    }
}

#[inline]
pub fn residual_of(symbol: usize) -> i64 {
    symbol as i64 - R_MAX
}

/// Analytic probabilities of every symbol of a `N(mu_frac, sigma)` value
/// rounded to the integers, with both tails lumped into the escape symbol.
pub fn symbol_probabilities(mu_frac: f64, sigma: f64) -> [f64; ALPHABET] {
    let mut p = [0.0; ALPHABET];
    for (s, slot) in p.iter_mut().enumerate().take(ESCAPE) {
        let r = residual_of(s) as f64 - mu_frac;
        *slot = standard_interval((r - 0.5) / sigma, (r + 0.5) / sigma);
    }
    let edge = R_MAX as f64 + 0.5;
    p[ESCAPE] = upper_tail((edge - mu_frac) / sigma) + upper_tail((edge + mu_frac) / sigma);
    p
}

/// Frequency table for a value centred `mu_frac` above an integer with
/// scale `sigma`. Every symbol gets at least one count; rounding slack goes
/// to the most probable symbol.
pub fn build_cdf(mu_frac: f64, sigma: f64) -> CdfTable {
    let p = symbol_probabilities(mu_frac, sigma);
    let spare = (TOTAL as usize - ALPHABET) as f64;
    let mut freq: Vec<u32> = p.iter().map(|&q| 1 + (q * spare).floor() as u32).collect();
    let used: u32 = freq.iter().sum();
    let mut best = 0;
    for s in 1..ALPHABET {
        if p[s] > p[best] {
            best = s;
        }
    }
    freq[best] += TOTAL - used;
    let mut cum = Vec::with_capacity(ALPHABET + 1);
    cum.push(0);
    let mut acc = 0;
    for f in freq {
        acc += f;
        cum.push(acc);
    }
    CdfTable { cum }
}

/// A mean snapped to the `1/256` grid, kept as an integer step count.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SnappedMean(pub i64);

impl SnappedMean {
    /// Caps keep every snapped value exactly representable.
    const LIMIT: i64 = 1 << 40;

    pub fn new(mu: f64) -> Self {
        let q = (mu * MU_STEPS as f64).round();
        let q = if q.is_nan() { 0 } else { q as i64 };
        SnappedMean(q.clamp(-Self::LIMIT, Self::LIMIT))
    }

    pub fn value(self) -> f64 {
        self.0 as f64 / MU_STEPS as f64
    }

    pub fn floor(self) -> i64 {
        self.0.div_euclid(MU_STEPS)
    }

    /// Index of the fractional part, `0..256`.
    pub fn frac_index(self) -> usize {
        self.0.rem_euclid(MU_STEPS) as usize
    }
}

/// Log-spaced scales from [`SIGMA_MIN`] to [`SIGMA_MAX`] and a lazily
/// filled table for every `(mean fraction, scale)` pair.
pub struct ScaleLattice {
    scales: Vec<f64>,
    bounds: Vec<f64>,
    tables: Vec<OnceLock<CdfTable>>,
}

impl std::fmt::Debug for ScaleLattice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScaleLattice").field("scales", &self.scales).finish_non_exhaustive()
    }
}

impl ScaleLattice {
    fn build() -> Self {
        let (lo, hi) = (SIGMA_MIN.ln(), SIGMA_MAX.ln());
        let step = (hi - lo) / (SCALE_LEVELS - 1) as f64;
        let mut scales: Vec<f64> = (0..SCALE_LEVELS).map(|i| (lo + step * i as f64).exp()).collect();
        scales[0] = SIGMA_MIN;
        scales[SCALE_LEVELS - 1] = SIGMA_MAX;
        let bounds = scales.windows(2).map(|w| (w[0] * w[1]).sqrt()).collect();
        let tables = (0..SCALE_LEVELS * MU_STEPS as usize).map(|_| OnceLock::new()).collect();
        ScaleLattice { scales, bounds, tables }
    }

    /// Process-wide instance.
    pub fn global() -> &'static ScaleLattice {
        static LATTICE: OnceLock<ScaleLattice> = OnceLock::new();
        LATTICE.get_or_init(Self::build)
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    /// Nearest scale in log distance; out-of-range values clamp to the ends.
    pub fn snap_sigma(&self, sigma: f64) -> usize {
        self.bounds.partition_point(|&b| b < sigma)
    }

    pub fn table(&self, frac_index: usize, scale_index: usize) -> &CdfTable {
        self.tables[scale_index * MU_STEPS as usize + frac_index].get_or_init(|| {
            build_cdf(frac_index as f64 / MU_STEPS as f64, self.scales[scale_index])
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lattice_endpoints() {
        let l = ScaleLattice::global();
        assert_eq!(l.scales()[0], SIGMA_MIN);
        assert_eq!(l.scales()[63], SIGMA_MAX);
        assert_eq!(l.snap_sigma(0.0), 0);
        assert_eq!(l.snap_sigma(1e9), 63);
        assert_eq!(l.snap_sigma(f64::NAN), 0);
        for (i, &s) in l.scales().iter().enumerate() {
            assert_eq!(l.snap_sigma(s), i);
        }
    }

    #[test]
    fn snapped_mean_parts() {
        let m = SnappedMean::new(-0.3);
        assert_eq!(m.0, -77);
        assert_eq!(m.floor(), -1);
        assert_eq!(m.frac_index(), 179);
        assert_eq!(m.floor() as f64 + m.frac_index() as f64 / 256.0, m.value());
    }

    #[test]
    fn narrow_table_is_peaked() {
        let t = build_cdf(0.0, SIGMA_MIN);
        assert!(t.probability(symbol_of(0)) > 0.99);
        assert_eq!(t.freq(ESCAPE), 1);
    }

    #[test]
    fn symbol_lookup_inverts_slots() {
        let t = build_cdf(0.3, 2.0);
        for s in 0..ALPHABET {
            assert_eq!(t.symbol_for(t.cum(s)), s);
            assert_eq!(t.symbol_for(t.cum(s + 1) - 1), s);
        }
    }
}
