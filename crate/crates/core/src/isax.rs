//! PAA and iSAX summaries over standard-normal breakpoints.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Highest per-segment cardinality, in bits (256 regions).
pub const MAX_CARD_BITS: u8 = 8;

/// Default number of PAA segments.
pub const DEFAULT_SEGMENTS: usize = 16;

/// Widest word supported; root keys and Gray ranks are packed into a `u32`.
pub const MAX_SEGMENTS: usize = 16;

const MAX_REGIONS: usize = 1 << MAX_CARD_BITS;

/// Standard-normal quantiles `Phi^-1(i / 256)` for `i = 1..=255`.
///
/// Coarser cardinalities reuse every `2^(8-b)`-th entry so breakpoints are
/// nested exactly and a `b`-bit symbol is the 8-bit symbol shifted right.
pub fn breakpoints() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let normal = Normal::standard();
        let half = MAX_REGIONS / 2;
        let upper: Vec<f64> = (half + 1..MAX_REGIONS)
            .map(|i| normal.inverse_cdf(i as f64 / MAX_REGIONS as f64))
            .collect();
        // mirrored so the table is exactly symmetric around an exact zero
        let mut table: Vec<f64> = upper.iter().rev().map(|v| -v).collect();
        table.push(0.0);
        table.extend(upper);
        table
    })
}

/// Region index of `value` at `bits` cardinality. A value sitting exactly on
/// a breakpoint belongs to the region above it.
pub fn symbol_for(value: f64, bits: u8) -> u16 {
    debug_assert!((1..=MAX_CARD_BITS).contains(&bits));
    let full = breakpoints().partition_point(|&bp| bp <= value) as u16;
    full >> (MAX_CARD_BITS - bits)
}

/// `[lower, upper)` bounds of region `symbol` at `bits` cardinality; the
/// outermost regions are unbounded.
pub fn region_bounds(symbol: u16, bits: u8) -> (f64, f64) {
    let table = breakpoints();
    let shift = MAX_CARD_BITS - bits;
    let regions = 1u32 << bits;
    let lower = if symbol == 0 {
        f64::NEG_INFINITY
    } else {
        table[((symbol as usize) << shift) - 1]
    };
    let upper = if symbol as u32 + 1 >= regions {
        f64::INFINITY
    } else {
        table[((symbol as usize + 1) << shift) - 1]
    };
    (lower, upper)
}

/// Per-segment means of a series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaaSummary {
    pub means: Vec<f64>,
    /// Length of the summarized series; each segment spans
    /// `series_len / means.len()` points.
    pub series_len: usize,
}

impl PaaSummary {
    pub fn segments(&self) -> usize {
        self.means.len()
    }

    pub fn segment_len(&self) -> usize {
        self.series_len / self.means.len()
    }
}

pub fn paa(series: &[f64], segments: usize) -> Result<PaaSummary> {
    if segments == 0 || series.is_empty() || !series.len().is_multiple_of(segments) {
        return Err(Error::invalid(format!(
            "{segments} segments do not divide a series of length {}",
            series.len()
        )));
    }
    let width = series.len() / segments;
    let means = series
        .chunks_exact(width)
        .map(|seg| seg.iter().sum::<f64>() / width as f64)
        .collect();
    Ok(PaaSummary {
        means,
        series_len: series.len(),
    })
}

/// Full-cardinality symbols of a PAA, one byte per segment.
pub fn max_card_symbols(paa: &PaaSummary) -> Vec<u8> {
    paa.means
        .iter()
        .map(|&m| symbol_for(m, MAX_CARD_BITS) as u8)
        .collect()
}

/// iSAX word with a per-segment cardinality.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ISaxWord {
    pub symbols: Vec<u16>,
    pub card_bits: Vec<u8>,
}

impl ISaxWord {
    /// One-bit-per-segment word read from a packed root key (segment 0 is the
    /// most significant bit).
    pub fn from_root_key(key: u32, segments: usize) -> Self {
        let symbols = (0..segments)
            .map(|i| ((key >> (segments - 1 - i)) & 1) as u16)
            .collect();
        Self {
            symbols,
            card_bits: vec![1; segments],
        }
    }

    /// Word at the given uniform cardinality, from full-cardinality symbols.
    pub fn from_max_card(symbols: &[u8], bits: u8) -> Self {
        Self {
            symbols: symbols
                .iter()
                .map(|&s| (s >> (MAX_CARD_BITS - bits)) as u16)
                .collect(),
            card_bits: vec![bits; symbols.len()],
        }
    }

    pub fn segments(&self) -> usize {
        self.symbols.len()
    }

    /// Packs a one-bit-per-segment word; `None` if any segment has a
    /// different cardinality.
    pub fn root_key(&self) -> Option<u32> {
        if self.card_bits.iter().any(|&b| b != 1) {
            return None;
        }
        Some(
            self.symbols
                .iter()
                .fold(0u32, |acc, &s| (acc << 1) | u32::from(s & 1)),
        )
    }

    pub fn bounds(&self, segment: usize) -> (f64, f64) {
        region_bounds(self.symbols[segment], self.card_bits[segment])
    }

    /// Whether a series with these full-cardinality symbols lies inside the
    /// word's region.
    pub fn covers(&self, max_symbols: &[u8]) -> bool {
        self.symbols
            .iter()
            .zip(&self.card_bits)
            .zip(max_symbols)
            .all(|((&s, &b), &full)| u16::from(full >> (MAX_CARD_BITS - b)) == s)
    }

    /// Children of a split on `segment`: the region halves at one more bit.
    pub fn promote(&self, segment: usize) -> (ISaxWord, ISaxWord) {
        let mut low = self.clone();
        low.card_bits[segment] += 1;
        low.symbols[segment] <<= 1;
        let mut high = low.clone();
        high.symbols[segment] |= 1;
        (low, high)
    }
}

pub fn isax_from_paa(paa: &PaaSummary, card_bits: u8) -> Result<ISaxWord> {
    if !(1..=MAX_CARD_BITS).contains(&card_bits) {
        return Err(Error::invalid(format!(
            "cardinality of {card_bits} bits outside 1..={MAX_CARD_BITS}"
        )));
    }
    Ok(ISaxWord {
        symbols: paa.means.iter().map(|&m| symbol_for(m, card_bits)).collect(),
        card_bits: vec![card_bits; paa.segments()],
    })
}
