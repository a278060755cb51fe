use serde::{Deserialize, Serialize};

use crate::distance::{dtw_bounded, keogh_envelope, lb_keogh_sq, region_gap_sq, squared_euclidean_bounded, Envelope};
use crate::error::{Error, Result};
use crate::isax::{paa, symbol_for, ISaxWord, PaaSummary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Metric {
    Euclidean,
    /// Sakoe-Chiba band of `window` points.
    Dtw { window: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchMode {
    pub k: usize,
    pub metric: Metric,
}

impl SearchMode {
    pub fn nn() -> Self {
        Self::knn(1)
    }

    pub fn knn(k: usize) -> Self {
        Self {
            k,
            metric: Metric::Euclidean,
        }
    }

    pub fn dtw(window: usize) -> Self {
        Self {
            k: 1,
            metric: Metric::Dtw { window },
        }
    }
}

impl Default for SearchMode {
    fn default() -> Self {
        Self::nn()
    }
}

/// A query prepared for one index: PAA, envelope bounds and metric.
#[derive(Debug, Clone)]
pub struct QueryContext {
    values: Vec<f64>,
    paa: PaaSummary,
    upper: Vec<f64>,
    lower: Vec<f64>,
    envelope: Option<Envelope>,
    mode: SearchMode,
    root_key: u32,
}

impl QueryContext {
    pub fn new(values: &[f64], segments: usize, mode: SearchMode) -> Result<Self> {
        if mode.k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        let summary = paa(values, segments)?;
        let (upper, lower, envelope) = match mode.metric {
            Metric::Euclidean => (summary.means.clone(), summary.means.clone(), None),
            Metric::Dtw { window } => {
                let env = keogh_envelope(values, window)?;
                let up = paa(&env.upper, segments)?.means;
                let lo = paa(&env.lower, segments)?.means;
                (up, lo, Some(env))
            }
        };
        let root_key = summary
            .means
            .iter()
            .fold(0u32, |key, &m| (key << 1) | u32::from(symbol_for(m, 1)));
        Ok(Self {
            values: values.to_vec(),
            paa: summary,
            upper,
            lower,
            envelope,
            mode,
            root_key,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn paa(&self) -> &PaaSummary {
        &self.paa
    }

    pub fn mode(&self) -> SearchMode {
        self.mode
    }

    pub fn root_key(&self) -> u32 {
        self.root_key
    }

    /// Lower bound of the active metric for every series under `word`.
    pub fn node_lower_bound(&self, word: &ISaxWord) -> f64 {
        region_gap_sq(
            &self.upper,
            &self.lower,
            &word.symbols,
            &word.card_bits,
            self.paa.segment_len(),
        )
        .sqrt()
    }

    /// Squared gap of one segment to a region, used to steer descent.
    pub(crate) fn segment_gap(&self, segment: usize, word: &ISaxWord) -> f64 {
        let (lo, hi) = word.bounds(segment);
        if lo > self.upper[segment] {
            lo - self.upper[segment]
        } else if hi < self.lower[segment] {
            self.lower[segment] - hi
        } else {
            0.0
        }
    }

    /// Squared distance of the active metric, abandoned above `limit_sq`.
    /// Also returns the number of point operations spent.
    pub(crate) fn distance_sq_bounded(&self, series: &[f64], limit_sq: f64) -> (Option<f64>, usize) {
        match (&self.envelope, self.mode.metric) {
            (Some(env), Metric::Dtw { window }) => {
                let lb = lb_keogh_sq(env, series);
                if lb > limit_sq {
                    return (None, series.len());
                }
                let (d, cells) = dtw_bounded(&self.values, series, window, limit_sq);
                (d, cells + series.len())
            }
            _ => squared_euclidean_bounded(&self.values, series, limit_sq),
        }
    }
}
