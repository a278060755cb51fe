use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub distance: f64,
    /// Global series id.
    pub id: u64,
}

/// The k best candidates found so far, ascending by distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bsf {
    pub k: usize,
    pub neighbors: Vec<Neighbor>,
}

impl Bsf {
    pub fn new(k: usize) -> Self {
        Self {
            k: k.max(1),
            neighbors: Vec::with_capacity(k.max(1)),
        }
    }

    /// Distance of the current k-th best, `+inf` while fewer than k are known.
    pub fn value(&self) -> f64 {
        if self.neighbors.len() < self.k {
            f64::INFINITY
        } else {
            self.neighbors[self.k - 1].distance
        }
    }

    pub fn best(&self) -> Option<Neighbor> {
        self.neighbors.first().copied()
    }

    /// Inserts when strictly better than the k-th best and not already
    /// present. Equal distances keep the earlier entry first.
    pub fn offer(&mut self, distance: f64, id: u64) -> bool {
        if !(distance < self.value()) || self.neighbors.iter().any(|n| n.id == id) {
            return false;
        }
        let pos = self.neighbors.partition_point(|n| n.distance <= distance);
        self.neighbors.insert(pos, Neighbor { distance, id });
        self.neighbors.truncate(self.k);
        true
    }

    /// Top-k of the union, duplicates by id removed.
    pub fn merge(&mut self, other: &Bsf) {
        for n in &other.neighbors {
            self.offer(n.distance, n.id);
        }
    }
}

/// Bsf shared by the workers of one query, plus a pruning threshold that
/// also absorbs values learned from other nodes.
///
/// Non-negative doubles order like their bit patterns, so the threshold is a
/// plain atomic minimum over bits.
pub(crate) struct BsfCell {
    candidates: Mutex<Bsf>,
    threshold: AtomicU64,
    trace: Mutex<Vec<f64>>,
}

impl BsfCell {
    pub(crate) fn new(initial: Bsf) -> Self {
        let v = initial.value();
        Self {
            candidates: Mutex::new(initial),
            threshold: AtomicU64::new(v.to_bits()),
            trace: Mutex::new(vec![v]),
        }
    }

    pub(crate) fn threshold(&self) -> f64 {
        f64::from_bits(self.threshold.load(Ordering::Acquire))
    }

    /// Lowers the threshold; returns whether it moved.
    pub(crate) fn tighten(&self, value: f64) -> bool {
        if !(value >= 0.0) {
            return false;
        }
        let prev = self.threshold.fetch_min(value.to_bits(), Ordering::AcqRel);
        let moved = value.to_bits() < prev;
        if moved {
            self.trace.lock().unwrap().push(self.threshold());
        }
        moved
    }

    /// Offers a candidate; returns the new threshold when it moved.
    pub(crate) fn offer(&self, distance: f64, id: u64) -> Option<f64> {
        let mut c = self.candidates.lock().unwrap();
        if !c.offer(distance, id) {
            return None;
        }
        let v = c.value();
        drop(c);
        self.tighten(v).then_some(v)
    }

    pub(crate) fn snapshot(&self) -> Bsf {
        self.candidates.lock().unwrap().clone()
    }

    pub(crate) fn trace(&self) -> Vec<f64> {
        self.trace.lock().unwrap().clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keeps_k_smallest_without_duplicates() {
        let mut b = Bsf::new(3);
        assert_eq!(b.value(), f64::INFINITY);
        for (d, id) in [(5.0, 1), (3.0, 2), (4.0, 3), (3.0, 2), (1.0, 4), (4.5, 5)] {
            b.offer(d, id);
        }
        let ds: Vec<f64> = b.neighbors.iter().map(|n| n.distance).collect();
        assert_eq!(ds, vec![1.0, 3.0, 4.0]);
        assert_eq!(b.value(), 4.0);
        assert!(!b.offer(4.0, 9));
    }

    #[test]
    fn ties_keep_first_found() {
        let mut b = Bsf::new(1);
        b.offer(2.0, 7);
        assert!(!b.offer(2.0, 3));
        assert_eq!(b.best().unwrap().id, 7);
    }

    #[test]
    fn cell_threshold_is_monotone() {
        let cell = BsfCell::new(Bsf::new(1));
        assert_eq!(cell.threshold(), f64::INFINITY);
        assert_eq!(cell.offer(3.0, 1), Some(3.0));
        assert!(cell.tighten(2.0));
        assert!(!cell.tighten(2.5));
        assert_eq!(cell.offer(2.7, 2), None);
        assert_eq!(cell.snapshot().best().unwrap().distance, 2.7);
        assert_eq!(cell.threshold(), 2.0);
        assert!(cell.tighten(0.0));
        assert_eq!(cell.trace(), vec![f64::INFINITY, 3.0, 2.0, 0.0]);
    }
}
