//! Per-channel quantized-Gaussian symbol model.
//!
//! The rate estimator and the range coder must agree bit for bit, so both
//! consume the same frozen table: given a channel's binary16 (mean, scale),
//! integer bins [v - 1/2, v + 1/2] of N(mean, scale^2) are evaluated over a
//! window around the mean, quantized to a total probability mass of 2^16 with
//! every bin kept at >= 1 (a floor of 2^-16 per symbol), and a dedicated
//! escape symbol absorbs the tails. Escaped values are coded raw as two
//! uniform bytes.

use half::f16;

use crate::error::{Error, Result};

/// Total probability mass; bin probabilities are multiples of 2^-16.
pub const PROB_TOTAL: u32 = 1 << 16;
/// Bits spent on the raw value after an escape symbol.
pub const ESCAPE_RAW_BITS: u32 = 16;

const MAX_HALF_WIDTH: i64 = 8192;

/// Normal CDF via the Abramowitz-Stegun 7.1.26 erf approximation
/// (absolute error ~1.5e-7, far below the 2^-16 bin quantum).
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

fn erf(x: f64) -> f64 {
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let poly = t
        * (0.254829592 + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    sign * (1.0 - poly * (-x * x).exp())
}

/// Frozen per-channel symbol table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelModel {
    /// Smallest in-window integer value.
    pub lo: i32,
    /// Largest in-window integer value.
    pub hi: i32,
    /// Cumulative masses, length = symbol count + 1, cum[last] == PROB_TOTAL.
    /// Symbols are [lo..=hi] followed by the escape symbol.
    cum: Vec<u32>,
}

impl ChannelModel {
    /// Builds the table from wire-resolution parameters. Deterministic in the
    /// two bit patterns, which is what makes encoder and decoder agree.
    pub fn build(mean_bits: u16, scale_bits: u16) -> Result<Self> {
        let mean = f16::from_bits(mean_bits).to_f64();
        let scale = f16::from_bits(scale_bits).to_f64();
        if !mean.is_finite() || !scale.is_finite() || scale <= 0.0 {
            return Err(Error::Config(format!(
                "channel entropy parameters must be finite with positive scale, got ({mean}, {scale})"
            )));
        }
        let center = mean.round().clamp(i16::MIN as f64, i16::MAX as f64) as i64;
        let half_width = ((6.0 * scale).ceil() as i64 + 4).clamp(4, MAX_HALF_WIDTH);
        let lo = center.saturating_sub(half_width).max(i16::MIN as i64) as i32;
        let hi = center.saturating_add(half_width).min(i16::MAX as i64) as i32;
        let n_window = (hi - lo + 1) as usize;

        // Raw masses for window bins plus the two-sided tail for escape.
        let mut masses = Vec::with_capacity(n_window + 1);
        let mut window_mass = 0.0;
        for v in lo..=hi {
            let p = (norm_cdf((v as f64 + 0.5 - mean) / scale)
                - norm_cdf((v as f64 - 0.5 - mean) / scale))
                .max(0.0);
            window_mass += p;
            masses.push(p);
        }
        masses.push((1.0 - window_mass).max(1e-12));

        // Quantize to a total of exactly PROB_TOTAL with every bin >= 1:
        // floor-scale into the budget left after the +1 floor, then hand the
        // remainder to the largest bin.
        let n_syms = masses.len();
        let budget = PROB_TOTAL - n_syms as u32;
        let total_mass: f64 = masses.iter().sum();
        let mut p16: Vec<u32> = masses
            .iter()
            .map(|m| 1 + ((m / total_mass) * budget as f64).floor() as u32)
            .collect();
        let assigned: u32 = p16.iter().sum();
        let leftover = PROB_TOTAL - assigned;
        let argmax = p16
            .iter()
            .enumerate()
            .max_by_key(|(_, &p)| p)
            .map(|(i, _)| i)
            .unwrap();
        p16[argmax] += leftover;

        let mut cum = Vec::with_capacity(n_syms + 1);
        let mut acc = 0u32;
        cum.push(0);
        for p in &p16 {
            acc += p;
            cum.push(acc);
        }
        debug_assert_eq!(acc, PROB_TOTAL);
        Ok(Self { lo, hi, cum })
    }

    pub fn symbol_count(&self) -> usize {
        self.cum.len() - 1
    }

    pub fn escape_index(&self) -> usize {
        self.symbol_count() - 1
    }

    /// Index of an in-window value, or None if it must escape.
    pub fn index_of(&self, v: i32) -> Option<usize> {
        if v >= self.lo && v <= self.hi {
            Some((v - self.lo) as usize)
        } else {
            None
        }
    }

    pub fn interval(&self, index: usize) -> (u32, u32) {
        (self.cum[index], self.cum[index + 1])
    }

    /// Symbol index owning a cumulative offset in [0, PROB_TOTAL).
    pub fn find(&self, offset: u32) -> usize {
        debug_assert!(offset < PROB_TOTAL);
        // cum is strictly increasing; binary search for the bin.
        match self.cum.binary_search(&offset) {
            Ok(i) => i,
            Err(i) => i - 1,
        }
    }

    /// Information content of coding `v` under this table, in bits.
    pub fn bits_for(&self, v: i32) -> f64 {
        let total = PROB_TOTAL as f64;
        match self.index_of(v) {
            Some(i) => {
                let (a, b) = self.interval(i);
                -(((b - a) as f64) / total).log2()
            }
            None => {
                let (a, b) = self.interval(self.escape_index());
                -(((b - a) as f64) / total).log2() + ESCAPE_RAW_BITS as f64
            }
        }
    }
}
