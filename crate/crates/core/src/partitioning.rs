//! Replication topologies and the split of a dataset into chunks.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::SummarizationBuffer;
use crate::isax::ISaxWord;
use crate::rng::PortableRng;

/// Balance tolerance of the density-aware plan, relative to the mean chunk.
pub const DEFAULT_BALANCE_TOLERANCE: f64 = 0.05;

/// Buffers split across all chunks before whole-buffer assignment.
pub const DEFAULT_LAMBDA: usize = 400;

/// `n_nodes / k` clusters of `k` nodes; `k` replication groups of
/// `n_nodes / k` nodes holding the same chunk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterTopology {
    pub n_nodes: usize,
    pub k: usize,
    pub groups: Vec<Vec<usize>>,
    pub clusters: Vec<Vec<usize>>,
    pub group_coordinators: Vec<usize>,
}

impl ClusterTopology {
    pub fn group_of(&self, node: usize) -> usize {
        node % self.k
    }

    pub fn cluster_of(&self, node: usize) -> usize {
        node / self.k
    }

    pub fn replication_degree(&self) -> usize {
        self.n_nodes / self.k
    }
}

pub fn make_topology(n_nodes: usize, k: usize) -> Result<ClusterTopology> {
    let mut problems = Vec::new();
    if !n_nodes.is_power_of_two() {
        problems.push(format!("node count {n_nodes} is not a power of two"));
    }
    if !k.is_power_of_two() {
        problems.push(format!("group count {k} is not a power of two"));
    }
    if k > n_nodes {
        problems.push(format!("group count {k} exceeds node count {n_nodes}"));
    }
    if !problems.is_empty() {
        return Err(Error::InvalidConfig(problems));
    }
    let groups: Vec<Vec<usize>> = (0..k).map(|g| (g..n_nodes).step_by(k).collect()).collect();
    let clusters = (0..n_nodes / k).map(|c| (c * k..(c + 1) * k).collect()).collect();
    let group_coordinators = groups.iter().map(|g| g[0]).collect();
    Ok(ClusterTopology {
        n_nodes,
        k,
        groups,
        clusters,
        group_coordinators,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionMethod {
    EquallySplit,
    EquallySplitShuffled,
    DensityAware,
}

impl PartitionMethod {
    pub fn name(self) -> &'static str {
        match self {
            Self::EquallySplit => "equally-split",
            Self::EquallySplitShuffled => "equally-split-shuffled",
            Self::DensityAware => "density-aware",
        }
    }
}

impl fmt::Display for PartitionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PartitionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Self::EquallySplit, Self::EquallySplitShuffled, Self::DensityAware]
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown partition method '{s}'")))
    }
}

/// One chunk per replication group; each chunk lists global series ids in
/// ascending order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub method: PartitionMethod,
    pub seed: Option<u64>,
    pub lambda: Option<usize>,
    pub chunks: Vec<Vec<u64>>,
}

impl PartitionPlan {
    pub fn chunk_of<'a>(&'a self, topology: &ClusterTopology, node: usize) -> &'a [u64] {
        &self.chunks[topology.group_of(node)]
    }

    pub fn chunk_sizes(&self) -> Vec<usize> {
        self.chunks.iter().map(Vec::len).collect()
    }
}

/// Contiguous ranges of a (possibly shuffled) id sequence, sizes differing
/// by at most one with the longer ranges first.
pub fn equally_split(n_series: usize, n_chunks: usize, shuffle_seed: Option<u64>) -> Result<PartitionPlan> {
    if n_chunks == 0 {
        return Err(Error::invalid("n_chunks must be at least 1"));
    }
    let mut ids: Vec<u64> = (0..n_series as u64).collect();
    if let Some(seed) = shuffle_seed {
        PortableRng::new(seed, 0x5348).shuffle(&mut ids);
    }
    let base = n_series / n_chunks;
    let extra = n_series % n_chunks;
    let mut chunks = Vec::with_capacity(n_chunks);
    let mut start = 0;
    for i in 0..n_chunks {
        let len = base + usize::from(i < extra);
        let mut c = ids[start..start + len].to_vec();
        c.sort_unstable();
        chunks.push(c);
        start += len;
    }
    Ok(PartitionPlan {
        method: if shuffle_seed.is_some() {
            PartitionMethod::EquallySplitShuffled
        } else {
            PartitionMethod::EquallySplit
        },
        seed: shuffle_seed,
        lambda: None,
        chunks,
    })
}

/// Position of `v` in binary-reflected Gray code order.
pub fn gray_rank(v: u32) -> u32 {
    let mut r = v;
    let mut s = v >> 1;
    while s != 0 {
        r ^= s;
        s >>= 1;
    }
    r
}

/// Gray rank of a one-bit-per-segment word read segment-major.
pub fn gray_key(word: &ISaxWord) -> Result<u32> {
    word.root_key()
        .map(gray_rank)
        .ok_or_else(|| Error::invalid("gray key needs one bit in every segment"))
}

/// Splits large buffers across all chunks and deals the rest out whole in
/// Gray order, then splits more buffers until chunk sizes are balanced.
/// `buffers` must cover the full dataset; entry positions are the ids.
pub fn density_aware_partition(
    buffers: &[SummarizationBuffer],
    n_chunks: usize,
    lambda: usize,
    balance_tolerance: f64,
) -> Result<PartitionPlan> {
    if n_chunks == 0 {
        return Err(Error::invalid("n_chunks must be at least 1"));
    }
    if !(balance_tolerance >= 0.0) {
        return Err(Error::invalid("balance tolerance must be non-negative"));
    }
    let total: usize = buffers.iter().map(|b| b.entries.len()).sum();
    let mut order: Vec<usize> = (0..buffers.len()).collect();
    order.sort_by(|&a, &b| {
        buffers[b].entries.len().cmp(&buffers[a].entries.len()).then(gray_rank(buffers[a].key).cmp(&gray_rank(buffers[b].key)))
    });

    let mut chunks: Vec<Vec<u64>> = vec![Vec::new(); n_chunks];
    // whole buffers held by each chunk
    let mut whole: Vec<Vec<usize>> = vec![Vec::new(); n_chunks];
    let mut cursor = 0usize;
    let mut split = |b: usize, chunks: &mut Vec<Vec<u64>>| {
        for e in &buffers[b].entries {
            chunks[cursor % n_chunks].push(u64::from(e.series));
            cursor += 1;
        }
    };
    for &b in order.iter().take(lambda) {
        split(b, &mut chunks);
    }
    let mut rest: Vec<usize> = order.iter().skip(lambda).copied().collect();
    rest.sort_by_key(|&b| gray_rank(buffers[b].key));
    for (i, b) in rest.into_iter().enumerate() {
        let c = i % n_chunks;
        chunks[c].extend(buffers[b].entries.iter().map(|e| u64::from(e.series)));
        whole[c].push(b);
    }

    let allowed = balance_tolerance * total as f64 / n_chunks as f64;
    loop {
        let (largest, max) = chunks
            .iter()
            .enumerate()
            .map(|(i, c)| (i, c.len()))
            .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
            .expect("n_chunks > 0");
        let min = chunks.iter().map(Vec::len).min().expect("n_chunks > 0");
        if ((max - min) as f64) <= allowed {
            break;
        }
        let Some(pos) = (0..whole[largest].len()).max_by(|&a, &b| {
            let (ba, bb) = (whole[largest][a], whole[largest][b]);
            buffers[ba].entries.len().cmp(&buffers[bb].entries.len()).then(gray_rank(buffers[bb].key).cmp(&gray_rank(buffers[ba].key)))
        }) else {
            break;
        };
        let b = whole[largest].remove(pos);
        let ids: HashSet<u64> = buffers[b].entries.iter().map(|e| u64::from(e.series)).collect();
        chunks[largest].retain(|id| !ids.contains(id));
        split(b, &mut chunks);
    }
    for c in &mut chunks {
        c.sort_unstable();
    }
    Ok(PartitionPlan {
        method: PartitionMethod::DensityAware,
        seed: None,
        lambda: Some(lambda),
        chunks,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::generate::normalized_random_walks;
    use crate::index::{build_summarization_buffers, BufferEntry};

    #[test]
    fn topology_layouts() {
        let t = make_topology(8, 8).unwrap();
        assert_eq!(t.clusters, vec![(0..8).collect::<Vec<_>>()]);
        assert!(t.groups.iter().all(|g| g.len() == 1));
        let t = make_topology(8, 1).unwrap();
        assert_eq!(t.groups, vec![(0..8).collect::<Vec<_>>()]);
        assert_eq!(t.clusters.len(), 8);
        let t = make_topology(8, 4).unwrap();
        assert_eq!(t.groups, vec![vec![0, 4], vec![1, 5], vec![2, 6], vec![3, 7]]);
        assert_eq!(t.clusters, vec![vec![0, 1, 2, 3], vec![4, 5, 6, 7]]);
        assert_eq!(t.group_coordinators, vec![0, 1, 2, 3]);
        assert_eq!(t.replication_degree(), 2);
        match make_topology(6, 4) {
            Err(Error::InvalidConfig(p)) => assert_eq!(p.len(), 1),
            other => panic!("{other:?}"),
        }
        assert!(make_topology(4, 8).is_err());
    }

    #[test]
    fn equal_split_examples() {
        let p = equally_split(10, 2, None).unwrap();
        assert_eq!(p.chunks, vec![(0..5).collect::<Vec<_>>(), (5..10).collect()]);
        assert_eq!(equally_split(10, 3, None).unwrap().chunk_sizes(), vec![4, 3, 3]);
        let a = equally_split(1000, 4, Some(9)).unwrap();
        assert_eq!(a, equally_split(1000, 4, Some(9)).unwrap());
        assert_ne!(a.chunks, equally_split(1000, 4, None).unwrap().chunks);
        let mut all: Vec<u64> = a.chunks.concat();
        all.sort_unstable();
        assert_eq!(all, (0..1000).collect::<Vec<_>>());
    }

    #[test]
    fn gray_adjacency_exhaustive() {
        for w in 1..=10u32 {
            let mut by_rank = vec![0u32; 1 << w];
            for v in 0..(1u32 << w) {
                by_rank[gray_rank(v) as usize] = v;
            }
            for r in 1..by_rank.len() {
                assert_eq!((by_rank[r] ^ by_rank[r - 1]).count_ones(), 1);
            }
        }
        assert_eq!(gray_key(&ISaxWord::from_root_key(0, 3)).unwrap(), 0);
        assert!(gray_key(&ISaxWord::from_max_card(&[0, 200], 2)).is_err());
    }

    #[test]
    fn gray_round_robin_separates_figure_pair() {
        // binary order: word v lands on node v mod 4
        assert_eq!(0b000, 0b100 % 4);
        assert_ne!(gray_rank(0b000) % 4, gray_rank(0b100) % 4);
    }

    fn buffers_of(sizes: &[usize]) -> Vec<SummarizationBuffer> {
        let mut next = 0u32;
        sizes
            .iter()
            .enumerate()
            .map(|(key, &n)| SummarizationBuffer {
                key: key as u32,
                entries: (0..n)
                    .map(|_| {
                        next += 1;
                        BufferEntry {
                            series: next - 1,
                            symbols: [0; 16],
                        }
                    })
                    .collect(),
            })
            .collect()
    }

    fn check_cover(plan: &PartitionPlan, total: usize) {
        let mut all: Vec<u64> = plan.chunks.concat();
        all.sort_unstable();
        assert_eq!(all, (0..total as u64).collect::<Vec<_>>());
    }

    #[test]
    fn singleton_buffers_deal_round_robin() {
        let b = buffers_of(&[1; 37]);
        let p = density_aware_partition(&b, 4, 0, 0.0).unwrap();
        let sizes = p.chunk_sizes();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        check_cover(&p, 37);
    }

    #[test]
    fn skewed_buffer_is_split() {
        let mut sizes = vec![9000];
        sizes.extend(std::iter::repeat_n(10, 100));
        let b = buffers_of(&sizes);
        for lambda in [0, 1] {
            let p = density_aware_partition(&b, 4, lambda, 0.05).unwrap();
            check_cover(&p, 10_000);
            let s = p.chunk_sizes();
            let (max, min) = (*s.iter().max().unwrap() as f64, *s.iter().min().unwrap() as f64);
            assert!(max / min <= 1.05, "{s:?}");
            let big: HashSet<u64> = (0..9000).collect();
            for c in &p.chunks {
                assert!(c.iter().filter(|id| big.contains(id)).count() <= 2250);
            }
        }
    }

    #[test]
    fn random_walk_plan_is_balanced() {
        let data = normalized_random_walks(10_000, 64, 41);
        let buffers = build_summarization_buffers(&data, 16, 1).unwrap();
        let p = density_aware_partition(&buffers, 8, DEFAULT_LAMBDA, DEFAULT_BALANCE_TOLERANCE).unwrap();
        check_cover(&p, 10_000);
        let s = p.chunk_sizes();
        let spread = s.iter().max().unwrap() - s.iter().min().unwrap();
        assert!(spread as f64 <= 0.05 * 10_000.0 / 8.0, "{s:?}");
    }

    proptest! {
        #[test]
        fn plans_cover_every_cluster(
            sizes in prop::collection::vec(1usize..60, 1..80),
            log_n in 0u32..4,
            log_k in 0u32..4,
            lambda in 0usize..10,
            tol in 0.0f64..0.3,
        ) {
            let n = 1usize << log_n;
            let k = 1usize << log_k.min(log_n);
            let topo = make_topology(n, k).unwrap();
            let b = buffers_of(&sizes);
            let total: usize = sizes.iter().sum();
            let plan = density_aware_partition(&b, k, lambda, tol).unwrap();
            for cluster in &topo.clusters {
                let mut all: Vec<u64> = cluster.iter().flat_map(|&node| plan.chunk_of(&topo, node).to_vec()).collect();
                all.sort_unstable();
                prop_assert_eq!(all, (0..total as u64).collect::<Vec<_>>());
            }
            let stored: usize = (0..n).map(|node| plan.chunk_of(&topo, node).len()).sum();
            prop_assert_eq!(stored, total * n / k);
        }
    }
}
