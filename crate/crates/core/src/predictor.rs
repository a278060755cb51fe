//! Execution-cost estimation from the initial BSF and the sigmoid model of
//! priority-queue sizes.
//!
//! Estimates are unitless scores: schedulers only compare and add them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::{NodeIndex, RsBatch};
use crate::query::{initial_state, ExecParams, QueryContext, QueryExecution, ThresholdModel, WorkerCursor, DEFAULT_HELP_TH};
use crate::rng::PortableRng;

/// `y = slope * x + intercept`, clamped at zero when predicting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

impl LinearModel {
    /// Estimate equal to the input; used when no fit is available.
    pub fn identity() -> Self {
        Self {
            slope: 1.0,
            intercept: 0.0,
            r2: 0.0,
        }
    }
}

/// Ordinary least squares of `ys` on `xs`.
pub fn fit_linear(xs: &[f64], ys: &[f64]) -> Result<LinearModel> {
    if xs.len() != ys.len() {
        return Err(Error::invalid("xs and ys differ in length"));
    }
    if xs.len() < 2 {
        return Err(Error::DegenerateFit("need at least two samples".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    if !(sxx > f64::EPSILON * n * (1.0 + mx * mx)) {
        return Err(Error::DegenerateFit("no variance in the predictor".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy > 0.0 { (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0) } else { 1.0 };
    Ok(LinearModel { slope, intercept, r2 })
}

pub fn predict_time(model: &LinearModel, initial_bsf: f64) -> f64 {
    let y = model.slope * initial_bsf + model.intercept;
    if y.is_nan() {
        0.0
    } else {
        y.max(0.0)
    }
}

/// `f(z) = m + (M - m) / (1 + b * exp(-c * (z - d)))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmoidParams {
    pub m: f64,
    #[serde(rename = "M")]
    pub big_m: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl SigmoidParams {
    pub fn flat(value: f64) -> Self {
        Self {
            m: value,
            big_m: value,
            b: 1.0,
            c: 1.0,
            d: 0.0,
        }
    }

    pub fn eval(&self, z: f64) -> f64 {
        if self.m == self.big_m {
            return self.m;
        }
        let e = self.b * (-self.c * (z - self.d)).exp();
        let v = self.m + (self.big_m - self.m) / (1.0 + e);
        if v.is_nan() {
            // z infinite with c = 0 style corner cases
            self.m
        } else {
            v
        }
    }
}

/// Least-squares sigmoid fit by multi-start Nelder-Mead in normalized
/// coordinates.
///
/// `b` is kept at 1 (it only shifts `d`); starts combine `m = min y`,
/// `M = max y`, `d` at sample quantiles and several signed slopes, with
/// small seeded jitter. Constant `ys` give a flat curve.
pub fn fit_sigmoid(xs: &[f64], ys: &[f64], seed: u64) -> Result<SigmoidParams> {
    if xs.len() != ys.len() {
        return Err(Error::invalid("xs and ys differ in length"));
    }
    if xs.len() < 5 {
        return Err(Error::DegenerateFit("need at least five samples".into()));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::DegenerateFit("non-finite sample".into()));
    }
    let y_min = ys.iter().copied().fold(f64::INFINITY, f64::min);
    let y_max = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if y_max - y_min <= 1e-12 * y_max.abs().max(1.0) {
        return Ok(SigmoidParams::flat(median(ys)));
    }
    let x_mid = median(xs);
    let x_scale = {
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
    };
    if !(x_scale > 0.0) {
        return Err(Error::DegenerateFit("no variance in the predictor".into()));
    }
    let y_range = y_max - y_min;
    let nx: Vec<f64> = xs.iter().map(|x| (x - x_mid) / x_scale).collect();
    let ny: Vec<f64> = ys.iter().map(|y| (y - y_min) / y_range).collect();

    let rss = |p: &[f64; 4]| -> f64 {
        let curve = SigmoidParams { m: p[0], big_m: p[1], b: 1.0, c: p[2], d: p[3] };
        nx.iter()
            .zip(&ny)
            .map(|(&x, &y)| {
                let r = curve.eval(x) - y;
                r * r
            })
            .sum::<f64>()
    };

    let mut sorted_x = nx.clone();
    sorted_x.sort_by(f64::total_cmp);
    let q = |f: f64| sorted_x[((sorted_x.len() - 1) as f64 * f).round() as usize];
    let mut rng = PortableRng::new(seed, 0x5167);
    let mut best: Option<([f64; 4], f64)> = None;
    for &d0 in &[q(0.5), q(0.25), q(0.75), 0.0] {
        for &c0 in &[1.0, -1.0, 4.0, -4.0, 12.0, -12.0] {
            let start = [
                0.0 + 0.01 * (rng.next_f64() - 0.5),
                1.0 + 0.01 * (rng.next_f64() - 0.5),
                c0 * (1.0 + 0.05 * (rng.next_f64() - 0.5)),
                d0,
            ];
            let (p, v) = nelder_mead(&rss, start, 4000, 1e-14);
            if best.as_ref().is_none_or(|(_, bv)| v < *bv) {
                best = Some((p, v));
            }
        }
    }
    let (p, v) = best.expect("at least one start");
    if !v.is_finite() || p.iter().any(|x| !x.is_finite()) {
        return Err(Error::DegenerateFit("optimizer did not converge".into()));
    }
    let (mut m, mut big_m, mut c) = (p[0], p[1], p[2]);
    if m > big_m {
        // same curve with the asymptotes swapped and the slope mirrored
        std::mem::swap(&mut m, &mut big_m);
        c = -c;
    }
    Ok(SigmoidParams {
        m: y_min + m * y_range,
        big_m: y_min + big_m * y_range,
        b: 1.0,
        c: c / x_scale,
        d: x_mid + p[3] * x_scale,
    })
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Plain Nelder-Mead with the standard coefficients (1, 2, 0.5, 0.5).
fn nelder_mead<F: Fn(&[f64; 4]) -> f64>(f: &F, start: [f64; 4], max_iter: usize, tol: f64) -> ([f64; 4], f64) {
    const N: usize = 4;
    let mut simplex: Vec<([f64; N], f64)> = Vec::with_capacity(N + 1);
    simplex.push((start, f(&start)));
    for i in 0..N {
        let mut p = start;
        p[i] += if p[i].abs() > 1e-3 { 0.1 * p[i] } else { 0.05 };
        simplex.push((p, f(&p)));
    }
    for _ in 0..max_iter {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        if (simplex[N].1 - simplex[0].1).abs() <= tol * (simplex[0].1.abs() + tol) {
            break;
        }
        let mut centroid = [0.0; N];
        for (p, _) in &simplex[..N] {
            for i in 0..N {
                centroid[i] += p[i] / N as f64;
            }
        }
        let toward = |t: f64| -> [f64; N] {
            let mut p = [0.0; N];
            for i in 0..N {
                p[i] = centroid[i] + t * (simplex[N].0[i] - centroid[i]);
            }
            p
        };
        let reflected = toward(-1.0);
        let fr = f(&reflected);
        if fr < simplex[0].1 {
            let expanded = toward(-2.0);
            let fe = f(&expanded);
            simplex[N] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < simplex[N - 1].1 {
            simplex[N] = (reflected, fr);
        } else {
            let contracted = if fr < simplex[N].1 { toward(-0.5) } else { toward(0.5) };
            let fc = f(&contracted);
            if fc < simplex[N].1.min(fr) {
                simplex[N] = (contracted, fc);
            } else {
                let best = simplex[0].0;
                for entry in simplex.iter_mut().skip(1) {
                    for i in 0..N {
                        entry.0[i] = best[i] + 0.5 * (entry.0[i] - best[i]);
                    }
                    entry.1 = f(&entry.0);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    simplex[0]
}

/// One warm-up query's measurements.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSample {
    pub initial_bsf: f64,
    /// Cost of answering, in abstract work units or microseconds.
    pub exec_time: f64,
    pub median_pq_size: f64,
}

/// Fitted models as stored between the calibrate and run steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictorModels {
    pub time: LinearModel,
    pub pq_size: SigmoidParams,
    /// Whether each model came from a successful fit or a fallback.
    pub time_fitted: bool,
    pub pq_size_fitted: bool,
}

impl PredictorModels {
    /// Fits both models, falling back to the identity estimate and a flat
    /// curve at the median queue size when a fit is degenerate.
    pub fn calibrate(samples: &[CalibrationSample], seed: u64) -> Self {
        let xs: Vec<f64> = samples.iter().map(|s| s.initial_bsf).collect();
        let times: Vec<f64> = samples.iter().map(|s| s.exec_time).collect();
        let sizes: Vec<f64> = samples.iter().map(|s| s.median_pq_size).collect();
        let (time, time_fitted) = match fit_linear(&xs, &times) {
            Ok(m) => (m, true),
            Err(_) => (LinearModel::identity(), false),
        };
        let (pq_size, pq_size_fitted) = match fit_sigmoid(&xs, &sizes, seed) {
            Ok(p) => (p, true),
            Err(_) => (SigmoidParams::flat(if sizes.is_empty() { 0.0 } else { median(&sizes) }), false),
        };
        Self {
            time,
            pq_size,
            time_fitted,
            pq_size_fitted,
        }
    }
}

/// Answers each warm-up query on one index with a single worker and
/// unbounded queues, recording work units spent and the median queue size.
pub fn collect_samples(index: &NodeIndex, batches: &[RsBatch], queries: &[QueryContext]) -> Vec<CalibrationSample> {
    queries
        .iter()
        .map(|query| {
            let (candidates, initial, approx_cost) = initial_state(query, index, None);
            let exec = QueryExecution::new(
                index,
                query,
                batches,
                candidates,
                ExecParams {
                    th: usize::MAX,
                    help_th: DEFAULT_HELP_TH,
                    traversal_bound: initial,
                    early_cutoff: true,
                },
            );
            let mut cur = WorkerCursor::default();
            let mut cost = approx_cost;
            while let Some(c) = exec.traversal_step(&mut cur) {
                cost += c;
            }
            cost += exec.preprocess();
            while let Some(c) = exec.processing_step(&mut cur) {
                cost += c;
            }
            CalibrationSample {
                initial_bsf: initial,
                exec_time: cost as f64,
                median_pq_size: exec.counters().median_queue_size(),
            }
        })
        .collect()
}

impl PredictorModels {
    pub fn threshold_model(&self, divisor: f64) -> ThresholdModel {
        ThresholdModel::Sigmoid {
            params: self.pq_size,
            divisor,
        }
    }
}
