//! Per-node index: summarization buffers, the iSAX tree and its RS-batches.

pub mod buffers;
pub mod tree;

use std::ops::Range;

use serde::{Deserialize, Serialize};

pub use buffers::{build_summarization_buffers, root_key_of, summarize, BufferEntry, SummarizationBuffer, SymbolWord};
pub use tree::{build_index_tree, IndexStats, IndexTree, LeafRef, NodeKind, RootSubtree, TreeNode, DEFAULT_LEAF_CAPACITY};

use crate::error::{Error, Result};
use crate::isax::DEFAULT_SEGMENTS;
use crate::series::Dataset;

/// A run of consecutive root subtrees (positions into `IndexTree::roots`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RsBatch {
    pub id: usize,
    pub roots: Range<usize>,
}

/// Splits the roots into `n_sb` consecutive ranges whose sizes differ by at
/// most one, larger ranges first.
pub fn partition_rs_batches(tree: &IndexTree, n_sb: usize) -> Result<Vec<RsBatch>> {
    if n_sb == 0 {
        return Err(Error::invalid("need at least one RS-batch"));
    }
    if tree.roots.is_empty() {
        return Err(Error::invalid("tree has no roots"));
    }
    let n = tree.roots.len();
    let (base, extra) = (n / n_sb, n % n_sb);
    let mut start = 0;
    Ok((0..n_sb)
        .map(|id| {
            let len = base + usize::from(id < extra);
            let batch = RsBatch {
                id,
                roots: start..start + len,
            };
            start += len;
            batch
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexConfig {
    pub segments: usize,
    pub leaf_capacity: usize,
    pub n_workers: usize,
}

impl Default for IndexConfig {
    fn default() -> Self {
        Self {
            segments: DEFAULT_SEGMENTS,
            leaf_capacity: DEFAULT_LEAF_CAPACITY,
            n_workers: 1,
        }
    }
}

/// Wall-clock and abstract-work measurements of one build.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildStats {
    pub buffer_secs: f64,
    pub tree_secs: f64,
    /// Points summarized (series count times series length).
    pub buffer_work: u64,
    /// Entry moves while inserting into the tree.
    pub tree_work: u64,
}

// wasm32-unknown-unknown has no clock; builds there report zero seconds
#[cfg(not(target_arch = "wasm32"))]
fn stopwatch() -> impl FnOnce() -> f64 {
    let started = std::time::Instant::now();
    move || started.elapsed().as_secs_f64()
}

#[cfg(target_arch = "wasm32")]
fn stopwatch() -> impl FnOnce() -> f64 {
    || 0.0
}

/// A node's chunk together with the index built over it.
#[derive(Debug, Clone)]
pub struct NodeIndex {
    pub data: Dataset,
    /// Global series id of every chunk position.
    pub ids: Vec<u64>,
    pub tree: IndexTree,
    pub build: BuildStats,
}

impl NodeIndex {
    pub fn build(data: Dataset, ids: Vec<u64>, config: &IndexConfig) -> Result<Self> {
        if ids.len() != data.len() {
            return Err(Error::invalid(format!(
                "{} ids for {} series",
                ids.len(),
                data.len()
            )));
        }
        let lap = stopwatch();
        let buffers = build_summarization_buffers(&data, config.segments, config.n_workers)?;
        let buffer_secs = lap();
        let lap = stopwatch();
        let tree = build_index_tree(&buffers, config.segments, config.leaf_capacity, config.n_workers)?;
        let tree_secs = lap();
        let build = BuildStats {
            buffer_secs,
            tree_secs,
            buffer_work: (data.len() * data.series_len()) as u64,
            tree_work: tree.insert_work,
        };
        Ok(Self { data, ids, tree, build })
    }

    /// Index over a whole dataset whose ids are its positions.
    pub fn build_full(data: Dataset, config: &IndexConfig) -> Result<Self> {
        let ids = (0..data.len() as u64).collect();
        Self::build(data, ids, config)
    }

    pub fn series_len(&self) -> usize {
        self.data.series_len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate::normalized_random_walks;

    fn tree_with_roots(n: usize) -> IndexTree {
        IndexTree {
            segments: 4,
            leaf_capacity: 1,
            roots: (0..n as u32).map(|key| RootSubtree { key, nodes: Vec::new() }).collect(),
            node_count: 0,
            leaf_count: 0,
            insert_work: 0,
        }
    }

    fn sizes(batches: &[RsBatch]) -> Vec<usize> {
        batches.iter().map(|b| b.roots.len()).collect()
    }

    #[test]
    fn even_and_remainder_partitions() {
        assert_eq!(sizes(&partition_rs_batches(&tree_with_roots(8), 4).unwrap()), vec![2, 2, 2, 2]);
        assert_eq!(sizes(&partition_rs_batches(&tree_with_roots(5), 4).unwrap()), vec![2, 1, 1, 1]);
        assert_eq!(sizes(&partition_rs_batches(&tree_with_roots(2), 3).unwrap()), vec![1, 1, 0]);
        assert!(partition_rs_batches(&tree_with_roots(0), 2).is_err());
        assert!(partition_rs_batches(&tree_with_roots(3), 0).is_err());
    }

    #[test]
    fn batches_concatenate_to_sorted_roots() {
        let d = normalized_random_walks(3_000, 64, 8);
        let idx = NodeIndex::build_full(d, &IndexConfig { leaf_capacity: 25, ..Default::default() }).unwrap();
        for n_sb in [1, 3, 7, 16] {
            let batches = partition_rs_batches(&idx.tree, n_sb).unwrap();
            let mut keys = Vec::new();
            let mut next = 0;
            for (i, b) in batches.iter().enumerate() {
                assert_eq!(b.id, i);
                assert_eq!(b.roots.start, next);
                next = b.roots.end;
                keys.extend(idx.tree.roots[b.roots.clone()].iter().map(|r| r.key));
            }
            assert_eq!(next, idx.tree.roots.len());
            assert!(keys.windows(2).all(|w| w[0] < w[1]));
            let lens = sizes(&batches);
            assert!(lens.iter().max().unwrap() - lens.iter().min().unwrap() <= 1);
        }
    }
}
