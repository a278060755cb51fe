//! Distance kernels and the lower bounds used for pruning.
//!
//! Real distances accumulate squared differences left to right; the
//! early-abandoning variants perform the identical additions and only stop
//! once the running sum exceeds the limit, so a completed bounded call returns
//! bit-for-bit the same value as the unbounded one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::isax::{region_bounds, ISaxWord, PaaSummary};

fn check_lengths(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

pub fn euclidean_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    check_lengths(a, b)?;
    Ok(squared_euclidean(a, b).sqrt())
}

pub(crate) fn squared_euclidean(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

/// Squared Euclidean distance, abandoned once the partial sum exceeds
/// `limit_sq`. Returns the sum and the number of points examined.
pub(crate) fn squared_euclidean_bounded(a: &[f64], b: &[f64], limit_sq: f64) -> (Option<f64>, usize) {
    let mut acc = 0.0;
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        let d = x - y;
        acc += d * d;
        if acc > limit_sq {
            return (None, i + 1);
        }
    }
    (Some(acc), a.len())
}

/// Squared gap between `[lower_mean, upper_mean]` and the word's regions,
/// summed over segments and scaled by the segment length.
///
/// With `upper == lower == query PAA` this is the classic iSAX MINDIST; with
/// the PAA of a warping envelope it bounds DTW instead.
pub(crate) fn region_gap_sq(upper: &[f64], lower: &[f64], symbols: &[u16], bits: &[u8], segment_len: usize) -> f64 {
    let mut acc = 0.0;
    for i in 0..symbols.len() {
        let (lo, hi) = region_bounds(symbols[i], bits[i]);
        let gap = if lo > upper[i] {
            lo - upper[i]
        } else if hi < lower[i] {
            lower[i] - hi
        } else {
            0.0
        };
        acc += gap * gap;
    }
    acc * segment_len as f64
}

/// Lower bound on the Euclidean distance between the query and any series
/// whose summary falls inside `word`.
pub fn lower_bound_distance(query_paa: &PaaSummary, word: &ISaxWord) -> Result<f64> {
    if query_paa.segments() != word.segments() {
        return Err(Error::invalid(format!(
            "segment count mismatch: {} vs {}",
            query_paa.segments(),
            word.segments()
        )));
    }
    Ok(region_gap_sq(
        &query_paa.means,
        &query_paa.means,
        &word.symbols,
        &word.card_bits,
        query_paa.segment_len(),
    )
    .sqrt())
}

/// Constrained DTW with a Sakoe-Chiba band of `window` points, squared point
/// costs and a final square root; `window = 0` is exactly Euclidean.
pub fn dtw_distance(a: &[f64], b: &[f64], window: usize) -> Result<f64> {
    check_lengths(a, b)?;
    if !a.is_empty() && window >= a.len() {
        return Err(Error::invalid(format!(
            "warping window {window} must be below the series length {}",
            a.len()
        )));
    }
    Ok(dtw_bounded(a, b, window, f64::INFINITY).0.unwrap_or(0.0).sqrt())
}

/// Squared DTW, abandoned once a whole band row exceeds `limit_sq`.
/// Returns the value and the number of cells evaluated.
pub(crate) fn dtw_bounded(a: &[f64], b: &[f64], window: usize, limit_sq: f64) -> (Option<f64>, usize) {
    let n = a.len();
    if n == 0 {
        return (Some(0.0), 0);
    }
    let mut prev = vec![f64::INFINITY; n];
    let mut cur = vec![f64::INFINITY; n];
    let mut cells = 0;
    for i in 0..n {
        let lo = i.saturating_sub(window);
        let hi = (i + window).min(n - 1);
        let mut row_min = f64::INFINITY;
        for j in lo..=hi {
            let d = a[i] - b[j];
            let cost = d * d;
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let diag = if i > 0 && j > 0 { prev[j - 1] } else { f64::INFINITY };
                let up = if i > 0 { prev[j] } else { f64::INFINITY };
                let left = if j > lo { cur[j - 1] } else { f64::INFINITY };
                diag.min(up).min(left)
            };
            cur[j] = best + cost;
            row_min = row_min.min(cur[j]);
        }
        cells += hi - lo + 1;
        if row_min > limit_sq {
            return (None, cells);
        }
        // stale cells left in `cur` lie outside every band position read later
        std::mem::swap(&mut prev, &mut cur);
    }
    (Some(prev[n - 1]), cells)
}

/// Running max/min of a query over a `[i - window, i + window]` neighbourhood.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub upper: Vec<f64>,
    pub lower: Vec<f64>,
    pub window: usize,
}

impl Envelope {
    pub fn len(&self) -> usize {
        self.upper.len()
    }

    pub fn is_empty(&self) -> bool {
        self.upper.is_empty()
    }
}

pub fn keogh_envelope(query: &[f64], window: usize) -> Result<Envelope> {
    let n = query.len();
    if window >= n.max(1) {
        return Err(Error::invalid(format!(
            "warping window {window} must be below the series length {n}"
        )));
    }
    let mut upper = Vec::with_capacity(n);
    let mut lower = Vec::with_capacity(n);
    for i in 0..n {
        let span = &query[i.saturating_sub(window)..=(i + window).min(n - 1)];
        upper.push(span.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        lower.push(span.iter().copied().fold(f64::INFINITY, f64::min));
    }
    Ok(Envelope { upper, lower, window })
}

pub fn lb_keogh(env: &Envelope, candidate: &[f64]) -> Result<f64> {
    if env.len() != candidate.len() {
        return Err(Error::invalid(format!(
            "length mismatch: envelope {} vs series {}",
            env.len(),
            candidate.len()
        )));
    }
    Ok(lb_keogh_sq(env, candidate).sqrt())
}

pub(crate) fn lb_keogh_sq(env: &Envelope, candidate: &[f64]) -> f64 {
    let mut acc = 0.0;
    for ((&c, &u), &l) in candidate.iter().zip(&env.upper).zip(&env.lower) {
        let d = if c > u {
            c - u
        } else if c < l {
            l - c
        } else {
            0.0
        };
        acc += d * d;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isax::{isax_from_paa, paa};
    use crate::rng::PortableRng;

    fn random_series(rng: &mut PortableRng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.next_normal()).collect()
    }

    /// Full (n+1)x(n+1) table, no band tricks.
    fn dtw_oracle(a: &[f64], b: &[f64], r: usize) -> f64 {
        let n = a.len();
        let mut d = vec![vec![f64::INFINITY; n + 1]; n + 1];
        d[0][0] = 0.0;
        for i in 1..=n {
            for j in 1..=n {
                if i.abs_diff(j) > r {
                    continue;
                }
                let c = (a[i - 1] - b[j - 1]).powi(2);
                d[i][j] = c + d[i - 1][j - 1].min(d[i - 1][j]).min(d[i][j - 1]);
            }
        }
        d[n][n].sqrt()
    }

    #[test]
    fn euclidean_basics() {
        let t = vec![1.0, 2.0, 3.0];
        assert_eq!(euclidean_distance(&t, &t).unwrap(), 0.0);
        assert_eq!(euclidean_distance(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        assert!(euclidean_distance(&[0.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn euclidean_matches_naive_loop() {
        let mut rng = PortableRng::new(4, 4);
        for _ in 0..100 {
            let a = random_series(&mut rng, 64);
            let b = random_series(&mut rng, 64);
            let mut s = 0.0f64;
            for i in 0..64 {
                s += (a[i] - b[i]) * (a[i] - b[i]);
            }
            let d = euclidean_distance(&a, &b).unwrap();
            assert!((d - s.sqrt()).abs() <= 1e-9 * s.sqrt());
            assert_eq!(d, euclidean_distance(&b, &a).unwrap());
        }
    }

    #[test]
    fn bounded_euclidean_is_exact_when_not_abandoned() {
        let mut rng = PortableRng::new(8, 1);
        let a = random_series(&mut rng, 32);
        let b = random_series(&mut rng, 32);
        let full = squared_euclidean(&a, &b);
        assert_eq!(squared_euclidean_bounded(&a, &b, full).0, Some(full));
        assert_eq!(squared_euclidean_bounded(&a, &b, full * 0.5).0, None);
    }

    #[test]
    fn lower_bound_zero_when_query_inside_word() {
        let mut rng = PortableRng::new(2, 2);
        let q = random_series(&mut rng, 64);
        let p = paa(&q, 8).unwrap();
        for bits in 1..=8 {
            let w = isax_from_paa(&p, bits).unwrap();
            assert_eq!(lower_bound_distance(&p, &w).unwrap(), 0.0);
        }
        let other = paa(&q, 4).unwrap();
        assert!(lower_bound_distance(&other, &isax_from_paa(&p, 2).unwrap()).is_err());
    }

    #[test]
    fn lower_bound_is_sound_and_monotone_in_cardinality() {
        let mut rng = PortableRng::new(5, 7);
        for _ in 0..2000 {
            let s = random_series(&mut rng, 64);
            let q = random_series(&mut rng, 64);
            let ed = euclidean_distance(&q, &s).unwrap();
            let sp = paa(&s, 16).unwrap();
            let qp = paa(&q, 16).unwrap();
            let mut last = 0.0;
            for bits in 1..=8 {
                let lb = lower_bound_distance(&qp, &isax_from_paa(&sp, bits).unwrap()).unwrap();
                assert!(lb <= ed + 1e-12);
                assert!(lb >= last - 1e-12);
                last = lb;
            }
        }
    }

    #[test]
    fn dtw_identity_and_window_zero() {
        let mut rng = PortableRng::new(6, 6);
        let a = random_series(&mut rng, 40);
        let b = random_series(&mut rng, 40);
        for r in [0, 1, 5, 39] {
            assert_eq!(dtw_distance(&a, &a, r).unwrap(), 0.0);
        }
        assert_eq!(dtw_distance(&a, &b, 0).unwrap(), euclidean_distance(&a, &b).unwrap());
        assert!(dtw_distance(&a, &b, 40).is_err());
        assert!(dtw_distance(&a, &b[..39], 1).is_err());
    }

    #[test]
    fn dtw_matches_dp_oracle() {
        let mut rng = PortableRng::new(10, 3);
        for r in [0usize, 1, 3, 7, 31] {
            for _ in 0..20 {
                let a = random_series(&mut rng, 32);
                let b = random_series(&mut rng, 32);
                let got = dtw_distance(&a, &b, r).unwrap();
                let want = dtw_oracle(&a, &b, r);
                assert!((got - want).abs() <= 1e-9 * want.max(1.0), "r={r} {got} vs {want}");
                assert!((got - dtw_distance(&b, &a, r).unwrap()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn bounded_dtw_abandons_only_above_limit() {
        let mut rng = PortableRng::new(12, 3);
        let a = random_series(&mut rng, 32);
        let b = random_series(&mut rng, 32);
        let full = dtw_bounded(&a, &b, 3, f64::INFINITY).0.unwrap();
        assert_eq!(dtw_bounded(&a, &b, 3, full).0, Some(full));
        assert_eq!(dtw_bounded(&a, &b, 3, full * 0.25).0, None);
    }

    #[test]
    fn envelope_contains_query_and_degenerates_to_global_band() {
        let q = vec![1.0, -2.0, 3.0, 0.5, 2.0];
        let env = keogh_envelope(&q, 1).unwrap();
        assert_eq!(env.upper, vec![1.0, 3.0, 3.0, 3.0, 2.0]);
        assert_eq!(env.lower, vec![-2.0, -2.0, -2.0, 0.5, 0.5]);
        let wide = keogh_envelope(&q, 4).unwrap();
        assert!(wide.upper.iter().all(|&u| u == 3.0));
        assert!(wide.lower.iter().all(|&l| l == -2.0));
        assert!(keogh_envelope(&q, 5).is_err());
        assert_eq!(lb_keogh(&wide, &[0.0, 1.0, 2.0, -1.0, 3.0]).unwrap(), 0.0);
        assert!(lb_keogh(&wide, &[0.0]).is_err());
    }

    #[test]
    fn lb_keogh_is_sound() {
        let mut rng = PortableRng::new(13, 0);
        for _ in 0..2000 {
            let n = 16 + rng.below(32) as usize;
            let r = rng.below(n as u64) as usize;
            let q = random_series(&mut rng, n);
            let c = random_series(&mut rng, n);
            let env = keogh_envelope(&q, r).unwrap();
            assert!(lb_keogh(&env, &c).unwrap() <= dtw_distance(&q, &c, r).unwrap() + 1e-9);
        }
    }
}
