//! Synthetic workloads: Gaussian random walks and perturbed copies.

use crate::rng::PortableRng;
use crate::series::{z_normalize, Dataset};

/// Cumulative sum of `len` N(0,1) steps drawn from stream `index` of `seed`.
pub fn random_walk(seed: u64, index: u64, len: usize) -> Vec<f64> {
    let mut rng = PortableRng::new(seed, index);
    let mut acc = 0.0;
    (0..len)
        .map(|_| {
            acc += rng.next_normal();
            acc
        })
        .collect()
}

/// `count` random walks; series `i` only depends on `(seed, i)`.
pub fn random_walks(count: usize, len: usize, seed: u64) -> Dataset {
    let mut values = Vec::with_capacity(count * len);
    for i in 0..count {
        values.extend(random_walk(seed, i as u64, len));
    }
    Dataset::new(len, values).expect("random walks are finite")
}

/// Random walks, each z-normalized.
pub fn normalized_random_walks(count: usize, len: usize, seed: u64) -> Dataset {
    random_walks(count, len, seed)
        .z_normalized()
        .expect("series length of at least 2")
}

/// Copies of randomly picked series from `source` with N(0, noise^2) added
/// to every point.
pub fn perturbed_copies(source: &Dataset, count: usize, noise: f64, seed: u64) -> Dataset {
    let mut rng = PortableRng::new(seed, u64::MAX >> 1);
    let mut out = Dataset::empty(source.series_len()).expect("positive length");
    for _ in 0..count {
        let base = source.get(rng.below(source.len() as u64) as usize);
        let s: Vec<f64> = base.iter().map(|v| v + noise * rng.next_normal()).collect();
        out.push(&s).expect("same length");
    }
    out
}

/// Warm-up queries of mixed difficulty: perturbed copies of `source`
/// series at noise levels from near-duplicate to unrelated.
pub fn warmup_queries(source: &Dataset, count: usize, seed: u64) -> Dataset {
    const NOISE: [f64; 5] = [0.05, 0.2, 0.5, 1.0, 2.0];
    let mut out = Dataset::empty(source.series_len()).expect("positive length");
    if source.is_empty() {
        return out;
    }
    for i in 0..count {
        let one = perturbed_copies(source, 1, NOISE[i % NOISE.len()], seed.wrapping_add(i as u64));
        out.push(one.get(0)).expect("same length");
    }
    out
}

/// A tight group of `count` series around `center`, each point perturbed by
/// N(0, noise^2) and the result z-normalized.
pub fn dense_cluster(center: &[f64], count: usize, noise: f64, seed: u64) -> Dataset {
    let mut out = Dataset::empty(center.len()).expect("positive length");
    for i in 0..count {
        let mut rng = PortableRng::new(seed, i as u64);
        let s: Vec<f64> = center.iter().map(|v| v + noise * rng.next_normal()).collect();
        out.push(&z_normalize(&s).expect("series length of at least 2"))
            .expect("same length");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn length_one_walk_is_a_single_step() {
        let mut rng = PortableRng::new(4, 0);
        assert_eq!(random_walk(4, 0, 1), vec![rng.next_normal()]);
    }

    #[test]
    fn walks_depend_only_on_seed_and_index() {
        let a = random_walks(5, 16, 99);
        let b = random_walks(3, 16, 99);
        for i in 0..3 {
            assert_eq!(a.get(i), b.get(i));
        }
        assert_ne!(a.get(0), random_walks(1, 16, 100).get(0));
    }

    #[test]
    fn steps_look_standard_normal() {
        let d = random_walks(100, 100, 1);
        let mut steps = Vec::new();
        for s in d.iter() {
            steps.push(s[0]);
            steps.extend(s.windows(2).map(|w| w[1] - w[0]));
        }
        assert_eq!(steps.len(), 10_000);
        let n = steps.len() as f64;
        let mean = steps.iter().sum::<f64>() / n;
        let var = steps.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((var - 1.0).abs() < 0.1, "var {var}");
    }
}
