//! Assignment of a query batch to the nodes of one replication group.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchedulerPolicy {
    Static,
    Dynamic,
    PredictStUnsorted,
    PredictSt,
    PredictDn,
}

impl SchedulerPolicy {
    pub const ALL: [SchedulerPolicy; 5] = [
        SchedulerPolicy::Static,
        SchedulerPolicy::Dynamic,
        SchedulerPolicy::PredictStUnsorted,
        SchedulerPolicy::PredictSt,
        SchedulerPolicy::PredictDn,
    ];

    pub fn is_dynamic(self) -> bool {
        matches!(self, Self::Dynamic | Self::PredictDn)
    }

    pub fn uses_estimates(self) -> bool {
        matches!(self, Self::PredictStUnsorted | Self::PredictSt | Self::PredictDn)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Static => "static",
            Self::Dynamic => "dynamic",
            Self::PredictStUnsorted => "predict-st-unsorted",
            Self::PredictSt => "predict-st",
            Self::PredictDn => "predict-dn",
        }
    }
}

impl fmt::Display for SchedulerPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchedulerPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown scheduler '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    /// Per-node ordered query lists.
    Static(Vec<Vec<u64>>),
    /// Global pull order.
    Dynamic(VecDeque<u64>),
}

impl Schedule {
    /// Every query id in the schedule, in no particular order.
    pub fn all_ids(&self) -> Vec<u64> {
        match self {
            Self::Static(lists) => lists.iter().flatten().copied().collect(),
            Self::Dynamic(q) => q.iter().copied().collect(),
        }
    }
}

/// Contiguous runs whose sizes differ by at most one, longer runs first.
pub fn schedule_static(query_ids: &[u64], n_nodes: usize) -> Result<Vec<Vec<u64>>> {
    if n_nodes == 0 {
        return Err(Error::invalid("n_nodes must be at least 1"));
    }
    let base = query_ids.len() / n_nodes;
    let extra = query_ids.len() % n_nodes;
    let mut out = Vec::with_capacity(n_nodes);
    let mut start = 0;
    for i in 0..n_nodes {
        let len = base + usize::from(i < extra);
        out.push(query_ids[start..start + len].to_vec());
        start += len;
    }
    Ok(out)
}

fn check_estimates(query_ids: &[u64], estimates: &[f64]) -> Result<()> {
    if query_ids.len() != estimates.len() {
        return Err(Error::invalid("estimates not aligned with query ids"));
    }
    if estimates.iter().any(|e| !e.is_finite()) {
        return Err(Error::invalid("non-finite estimate"));
    }
    Ok(())
}

/// Positions ordered by descending estimate, ties by lower query id.
fn descending(query_ids: &[u64], estimates: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..query_ids.len()).collect();
    order.sort_by(|&a, &b| estimates[b].total_cmp(&estimates[a]).then(query_ids[a].cmp(&query_ids[b])));
    order
}

/// Greedy assignment to the least-loaded node, ties to the lower node id.
pub fn schedule_predict_static(query_ids: &[u64], estimates: &[f64], sorted: bool, n_nodes: usize) -> Result<Vec<Vec<u64>>> {
    if n_nodes == 0 {
        return Err(Error::invalid("n_nodes must be at least 1"));
    }
    check_estimates(query_ids, estimates)?;
    let order: Vec<usize> = if sorted {
        descending(query_ids, estimates)
    } else {
        (0..query_ids.len()).collect()
    };
    let mut loads = vec![0.0f64; n_nodes];
    let mut out = vec![Vec::new(); n_nodes];
    for i in order {
        let node = (0..n_nodes)
            .min_by(|&a, &b| loads[a].total_cmp(&loads[b]).then(a.cmp(&b)))
            .expect("n_nodes > 0");
        loads[node] += estimates[i];
        out[node].push(query_ids[i]);
    }
    Ok(out)
}

/// Pull order for predict-dn: descending estimate, ties by lower id.
pub fn schedule_predict_dynamic(query_ids: &[u64], estimates: &[f64]) -> Result<VecDeque<u64>> {
    check_estimates(query_ids, estimates)?;
    Ok(descending(query_ids, estimates).into_iter().map(|i| query_ids[i]).collect())
}

/// Schedule for one replication group of `n_nodes`. `estimates` is needed
/// only by the predicting policies.
pub fn build_schedule(policy: SchedulerPolicy, query_ids: &[u64], estimates: Option<&[f64]>, n_nodes: usize) -> Result<Schedule> {
    let need = || estimates.ok_or_else(|| Error::invalid(format!("{policy} needs estimates")));
    Ok(match policy {
        SchedulerPolicy::Static => Schedule::Static(schedule_static(query_ids, n_nodes)?),
        SchedulerPolicy::Dynamic => Schedule::Dynamic(query_ids.iter().copied().collect()),
        SchedulerPolicy::PredictStUnsorted => Schedule::Static(schedule_predict_static(query_ids, need()?, false, n_nodes)?),
        SchedulerPolicy::PredictSt => Schedule::Static(schedule_predict_static(query_ids, need()?, true, n_nodes)?),
        SchedulerPolicy::PredictDn => Schedule::Dynamic(schedule_predict_dynamic(query_ids, need()?)?),
    })
}

/// Shared pull queue of a dynamic schedule.
#[derive(Debug, Default)]
pub struct DispatchQueue(Mutex<VecDeque<u64>>);

impl DispatchQueue {
    pub fn new(order: VecDeque<u64>) -> Self {
        Self(Mutex::new(order))
    }

    pub fn dispatch_next(&self) -> Option<u64> {
        self.0.lock().unwrap().pop_front()
    }

    pub fn remaining(&self) -> usize {
        self.0.lock().unwrap().len()
    }
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use proptest::prelude::*;

    use super::*;

    const ES: [f64; 5] = [100.0, 50.0, 200.0, 250.0, 80.0];
    const IDS: [u64; 5] = [1, 2, 3, 4, 5];

    #[test]
    fn static_split_sizes() {
        assert_eq!(schedule_static(&[1, 2, 3, 4], 2).unwrap(), vec![vec![1, 2], vec![3, 4]]);
        assert_eq!(schedule_static(&[1, 2, 3, 4, 5], 2).unwrap(), vec![vec![1, 2, 3], vec![4, 5]]);
        let ids: Vec<u64> = (1..=101).collect();
        let sizes: Vec<usize> = schedule_static(&ids, 8).unwrap().iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![13, 13, 13, 13, 13, 12, 12, 12]);
        assert_eq!(schedule_static(&[], 3).unwrap(), vec![Vec::<u64>::new(); 3]);
        assert!(schedule_static(&[1], 0).is_err());
    }

    #[test]
    fn worked_example_assignments() {
        let unsorted = schedule_predict_static(&IDS, &ES, false, 2).unwrap();
        assert_eq!(unsorted, vec![vec![1, 4], vec![2, 3, 5]]);
        let sorted = schedule_predict_static(&IDS, &ES, true, 2).unwrap();
        assert_eq!(sorted, vec![vec![4, 5], vec![3, 1, 2]]);
        let order = schedule_predict_dynamic(&IDS, &ES).unwrap();
        assert_eq!(order, VecDeque::from(vec![4, 3, 1, 5, 2]));
        let q = DispatchQueue::new(order);
        assert_eq!(q.dispatch_next(), Some(4));
        assert_eq!(q.dispatch_next(), Some(3));
    }

    #[test]
    fn equal_estimates() {
        let ids: Vec<u64> = (0..7).collect();
        let es = vec![1.0; 7];
        let rr = schedule_predict_static(&ids, &es, false, 3).unwrap();
        assert_eq!(rr, vec![vec![0, 3, 6], vec![1, 4], vec![2, 5]]);
        let order = schedule_predict_dynamic(&ids, &es).unwrap();
        assert_eq!(order.into_iter().collect::<Vec<_>>(), ids);
        assert_eq!(schedule_predict_dynamic(&[9], &[3.0]).unwrap(), VecDeque::from(vec![9]));
    }

    #[test]
    fn policy_names_round_trip() {
        for p in SchedulerPolicy::ALL {
            assert_eq!(p.name().parse::<SchedulerPolicy>().unwrap(), p);
        }
        assert!("lpt".parse::<SchedulerPolicy>().is_err());
        assert!(build_schedule(SchedulerPolicy::PredictSt, &IDS, None, 2).is_err());
    }

    #[test]
    fn racing_pullers_each_query_once() {
        let q = DispatchQueue::new((0..1000).collect());
        let got: Vec<Vec<u64>> = std::thread::scope(|s| {
            let hs: Vec<_> = (0..4)
                .map(|_| {
                    s.spawn(|| {
                        let mut mine = Vec::new();
                        while let Some(id) = q.dispatch_next() {
                            mine.push(id);
                        }
                        mine
                    })
                })
                .collect();
            hs.into_iter().map(|h| h.join().unwrap()).collect()
        });
        let all: Vec<u64> = got.into_iter().flatten().collect();
        assert_eq!(all.len(), 1000);
        assert_eq!(all.iter().collect::<HashSet<_>>().len(), 1000);
        assert_eq!(q.dispatch_next(), None);
    }

    fn loads(lists: &[Vec<u64>], est: &[f64]) -> Vec<f64> {
        lists.iter().map(|l| l.iter().map(|&id| est[id as usize]).sum()).collect()
    }

    fn optimal_makespan(est: &[f64], n: usize) -> f64 {
        fn go(i: usize, est: &[f64], loads: &mut Vec<f64>, best: &mut f64) {
            let cur = loads.iter().copied().fold(0.0, f64::max);
            if cur >= *best {
                return;
            }
            if i == est.len() {
                *best = cur;
                return;
            }
            for k in 0..loads.len() {
                loads[k] += est[i];
                go(i + 1, est, loads, best);
                loads[k] -= est[i];
            }
        }
        let mut best = f64::INFINITY;
        go(0, est, &mut vec![0.0; n], &mut best);
        best
    }

    proptest! {
        #[test]
        fn greedy_gap_bounded_by_largest_estimate(
            est in prop::collection::vec(0.0f64..1000.0, 0..60),
            n in 1usize..9,
            sorted in any::<bool>(),
        ) {
            let ids: Vec<u64> = (0..est.len() as u64).collect();
            let lists = schedule_predict_static(&ids, &est, sorted, n).unwrap();
            let mut seen: Vec<u64> = lists.iter().flatten().copied().collect();
            seen.sort_unstable();
            prop_assert_eq!(&seen, &ids);
            let l = loads(&lists, &est);
            let max = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let min = l.iter().copied().fold(f64::INFINITY, f64::min);
            let biggest = est.iter().copied().fold(0.0, f64::max);
            prop_assert!(max - min <= biggest + 1e-9);
        }

        #[test]
        fn sorted_greedy_within_lpt_bound(
            est in prop::collection::vec(1.0f64..100.0, 1..9),
            n in 2usize..4,
        ) {
            let ids: Vec<u64> = (0..est.len() as u64).collect();
            let lists = schedule_predict_static(&ids, &est, true, n).unwrap();
            let makespan = loads(&lists, &est).into_iter().fold(0.0, f64::max);
            let bound = (4.0 / 3.0 - 1.0 / (3.0 * n as f64)) * optimal_makespan(&est, n);
            prop_assert!(makespan <= bound + 1e-9);
        }
    }
}
