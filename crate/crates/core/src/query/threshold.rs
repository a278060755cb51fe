use serde::{Deserialize, Serialize};

use crate::predictor::SigmoidParams;

/// Smallest queue capacity produced by the sigmoid model.
pub const TH_FLOOR: usize = 32;

/// Divisor applied to the predicted median queue size.
pub const DEFAULT_TH_DIVISOR: f64 = 16.0;

/// `max(TH_FLOOR, round(f(initial_bsf) / divisor))`.
pub fn threshold_for_query(initial_bsf: f64, sigmoid: &SigmoidParams, divisor: f64) -> usize {
    let v = (sigmoid.eval(initial_bsf) / divisor.max(1.0)).round();
    if v.is_finite() && v > TH_FLOOR as f64 {
        if v >= usize::MAX as f64 {
            usize::MAX
        } else {
            v as usize
        }
    } else {
        TH_FLOOR
    }
}

/// How each query picks its queue capacity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ThresholdModel {
    /// Same capacity for every query; not floored, so tests can use 1.
    Fixed { th: usize },
    Sigmoid { params: SigmoidParams, divisor: f64 },
}

impl ThresholdModel {
    /// One queue per batch; used while calibrating.
    pub fn unbounded() -> Self {
        Self::Fixed { th: usize::MAX }
    }

    pub fn threshold(&self, initial_bsf: f64) -> usize {
        match self {
            Self::Fixed { th } => (*th).max(1),
            Self::Sigmoid { params, divisor } => threshold_for_query(initial_bsf, params, *divisor),
        }
    }
}

impl Default for ThresholdModel {
    fn default() -> Self {
        Self::Fixed { th: TH_FLOOR }
    }
}
