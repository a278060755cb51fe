//! iSAX index tree built root by root from summarization buffers.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use serde::{Deserialize, Serialize};

use super::buffers::{BufferEntry, SummarizationBuffer};
use crate::error::{Error, Result};
use crate::isax::{ISaxWord, MAX_CARD_BITS};

/// Default number of series a leaf holds before it splits.
pub const DEFAULT_LEAF_CAPACITY: usize = 2000;

#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    Internal {
        split_segment: usize,
        /// Lower-half child then upper-half child of the promoted segment.
        children: [u32; 2],
    },
    Leaf {
        /// Dense ordinal across the whole tree.
        leaf_id: u32,
        /// Chunk positions, ascending.
        series: Vec<u32>,
        /// Set when every segment is at full cardinality and the leaf can no
        /// longer split; it may then exceed the capacity.
        overflow: bool,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    pub word: ISaxWord,
    pub depth: u32,
    pub kind: NodeKind,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        matches!(self.kind, NodeKind::Leaf { .. })
    }
}

/// One root subtree; `nodes[0]` is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct RootSubtree {
    pub key: u32,
    pub nodes: Vec<TreeNode>,
}

/// Address of a leaf: root position and node position inside that root.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LeafRef {
    pub root: u32,
    pub node: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexTree {
    pub segments: usize,
    pub leaf_capacity: usize,
    /// Non-empty roots in ascending key order.
    pub roots: Vec<RootSubtree>,
    pub node_count: usize,
    pub leaf_count: usize,
    /// Entry moves performed while inserting and splitting.
    pub insert_work: u64,
}

impl IndexTree {
    pub fn node(&self, leaf: LeafRef) -> &TreeNode {
        &self.roots[leaf.root as usize].nodes[leaf.node as usize]
    }

    /// Series positions held by a leaf.
    pub fn leaf_series(&self, leaf: LeafRef) -> &[u32] {
        match &self.node(leaf).kind {
            NodeKind::Leaf { series, .. } => series,
            NodeKind::Internal { .. } => &[],
        }
    }

    pub fn leaf_id(&self, leaf: LeafRef) -> u32 {
        match &self.node(leaf).kind {
            NodeKind::Leaf { leaf_id, .. } => *leaf_id,
            NodeKind::Internal { .. } => u32::MAX,
        }
    }

    pub fn root_leaf_count(&self, root: usize) -> usize {
        self.roots[root].nodes.iter().filter(|n| n.is_leaf()).count()
    }

    /// All leaves, in root order then depth-first (lower child first).
    pub fn leaves(&self) -> Vec<LeafRef> {
        let mut out = Vec::with_capacity(self.leaf_count);
        for r in 0..self.roots.len() {
            self.collect_leaves(r, 0, &mut out);
        }
        out
    }

    pub(crate) fn collect_leaves(&self, root: usize, node: u32, out: &mut Vec<LeafRef>) {
        let nodes = &self.roots[root].nodes;
        let mut stack = vec![node];
        while let Some(n) = stack.pop() {
            match &nodes[n as usize].kind {
                NodeKind::Leaf { .. } => out.push(LeafRef {
                    root: root as u32,
                    node: n,
                }),
                NodeKind::Internal { children, .. } => {
                    stack.push(children[1]);
                    stack.push(children[0]);
                }
            }
        }
    }

    pub fn stats(&self) -> IndexStats {
        let mut fills = Vec::with_capacity(self.leaf_count);
        let mut max_depth = 0;
        let mut overflow_leaves = 0;
        for root in &self.roots {
            for node in &root.nodes {
                max_depth = max_depth.max(node.depth);
                if let NodeKind::Leaf { series, overflow, .. } = &node.kind {
                    fills.push(series.len());
                    overflow_leaves += usize::from(*overflow);
                }
            }
        }
        fills.sort_unstable();
        let series: usize = fills.iter().sum();
        let quantile = |q: f64| -> usize {
            if fills.is_empty() {
                0
            } else {
                fills[((fills.len() - 1) as f64 * q).round() as usize]
            }
        };
        IndexStats {
            series,
            roots: self.roots.len(),
            nodes: self.node_count,
            leaves: self.leaf_count,
            max_depth,
            overflow_leaves,
            leaf_capacity: self.leaf_capacity,
            fill_min: fills.first().copied().unwrap_or(0),
            fill_median: quantile(0.5),
            fill_p90: quantile(0.9),
            fill_max: fills.last().copied().unwrap_or(0),
            fill_mean: if fills.is_empty() {
                0.0
            } else {
                series as f64 / fills.len() as f64
            },
        }
    }
}

/// Node and leaf counts plus the leaf fill distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexStats {
    pub series: usize,
    pub roots: usize,
    pub nodes: usize,
    pub leaves: usize,
    pub max_depth: u32,
    pub overflow_leaves: usize,
    pub leaf_capacity: usize,
    pub fill_min: usize,
    pub fill_median: usize,
    pub fill_p90: usize,
    pub fill_max: usize,
    pub fill_mean: f64,
}

struct SubtreeBuilder<'a> {
    segments: usize,
    capacity: usize,
    entries: &'a [BufferEntry],
    nodes: Vec<TreeNode>,
    /// Series held by each leaf while building, as indices into `entries`.
    pending: Vec<Vec<u32>>,
    work: u64,
}

impl SubtreeBuilder<'_> {
    fn child_bit(&self, entry: u32, segment: usize, parent_bits: u8) -> usize {
        let full = self.entries[entry as usize].symbols[segment];
        usize::from((full >> (MAX_CARD_BITS - parent_bits - 1)) & 1)
    }

    fn insert(&mut self, entry: u32) {
        let mut at = 0usize;
        loop {
            self.work += 1;
            match &self.nodes[at].kind {
                NodeKind::Internal { split_segment, children } => {
                    let bits = self.nodes[at].word.card_bits[*split_segment];
                    at = children[self.child_bit(entry, *split_segment, bits)] as usize;
                }
                NodeKind::Leaf { overflow, .. } => {
                    let overflow = *overflow;
                    self.pending[at].push(entry);
                    if !overflow && self.pending[at].len() > self.capacity {
                        self.split(at);
                    }
                    return;
                }
            }
        }
    }

    /// Round-robin by depth over the segments still below full cardinality.
    fn split_segment(&self, node: usize) -> Option<usize> {
        let n = &self.nodes[node];
        let start = n.depth as usize % self.segments;
        (0..self.segments)
            .map(|i| (start + i) % self.segments)
            .find(|&s| n.word.card_bits[s] < MAX_CARD_BITS)
    }

    fn split(&mut self, node: usize) {
        let Some(segment) = self.split_segment(node) else {
            if let NodeKind::Leaf { overflow, .. } = &mut self.nodes[node].kind {
                *overflow = true;
            }
            return;
        };
        let parent_bits = self.nodes[node].word.card_bits[segment];
        let (low, high) = self.nodes[node].word.promote(segment);
        let depth = self.nodes[node].depth + 1;
        let first = self.nodes.len() as u32;
        for word in [low, high] {
            self.nodes.push(TreeNode {
                word,
                depth,
                kind: NodeKind::Leaf {
                    leaf_id: 0,
                    series: Vec::new(),
                    overflow: false,
                },
            });
            self.pending.push(Vec::new());
        }
        self.nodes[node].kind = NodeKind::Internal {
            split_segment: segment,
            children: [first, first + 1],
        };
        let moved = std::mem::take(&mut self.pending[node]);
        for &e in &moved {
            let child = first as usize + self.child_bit(e, segment, parent_bits);
            self.pending[child].push(e);
        }
        self.work += moved.len() as u64;
        for child in [first as usize, first as usize + 1] {
            if self.pending[child].len() > self.capacity {
                self.split(child);
            }
        }
    }

    fn finish(mut self) -> (Vec<TreeNode>, u64) {
        for (node, held) in self.nodes.iter_mut().zip(self.pending) {
            if let NodeKind::Leaf { series, .. } = &mut node.kind {
                let mut ids: Vec<u32> = held.iter().map(|&e| self.entries[e as usize].series).collect();
                ids.sort_unstable();
                *series = ids;
            }
        }
        (self.nodes, self.work)
    }
}

fn build_subtree(buffer: &SummarizationBuffer, segments: usize, capacity: usize) -> (Vec<TreeNode>, u64) {
    let mut builder = SubtreeBuilder {
        segments,
        capacity,
        entries: &buffer.entries,
        nodes: vec![TreeNode {
            word: buffer.word(segments),
            depth: 0,
            kind: NodeKind::Leaf {
                leaf_id: 0,
                series: Vec::new(),
                overflow: false,
            },
        }],
        pending: vec![Vec::new()],
        work: 0,
    };
    for e in 0..buffer.entries.len() as u32 {
        builder.insert(e);
    }
    builder.finish()
}

/// Builds one subtree per buffer; workers claim buffers through a shared
/// counter and never touch another root.
pub fn build_index_tree(buffers: &[SummarizationBuffer], segments: usize, leaf_capacity: usize, n_workers: usize) -> Result<IndexTree> {
    if leaf_capacity == 0 {
        return Err(Error::invalid("leaf capacity must be positive"));
    }
    super::buffers::check_segments(segments, segments)?;
    if buffers.windows(2).any(|w| w[0].key >= w[1].key) {
        return Err(Error::invalid("buffers must be sorted by distinct root keys"));
    }
    type Built = Mutex<Option<(Vec<TreeNode>, u64)>>;
    let built: Vec<Built> = buffers.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let work = || loop {
        let i = next.fetch_add(1, Ordering::Relaxed);
        if i >= buffers.len() {
            return;
        }
        let subtree = build_subtree(&buffers[i], segments, leaf_capacity);
        *built[i].lock().unwrap() = Some(subtree);
    };
    let n_workers = n_workers.max(1);
    if n_workers == 1 {
        work();
    } else {
        thread::scope(|s| {
            for _ in 0..n_workers {
                s.spawn(work);
            }
        });
    }

    let mut roots = Vec::with_capacity(buffers.len());
    let mut node_count = 0;
    let mut leaf_count = 0u32;
    let mut insert_work = 0;
    for (buffer, slot) in buffers.iter().zip(built) {
        let (mut nodes, w) = slot.into_inner().unwrap().expect("every buffer built");
        insert_work += w;
        node_count += nodes.len();
        roots.push(RootSubtree { key: buffer.key, nodes: Vec::new() });
        let r = roots.len() - 1;
        // number leaves in the same depth-first order as `leaves()`
        let mut stack = vec![0u32];
        while let Some(n) = stack.pop() {
            match &mut nodes[n as usize].kind {
                NodeKind::Leaf { leaf_id, .. } => {
                    *leaf_id = leaf_count;
                    leaf_count += 1;
                }
                NodeKind::Internal { children, .. } => {
                    stack.push(children[1]);
                    stack.push(children[0]);
                }
            }
        }
        roots[r].nodes = nodes;
    }
    Ok(IndexTree {
        segments,
        leaf_capacity,
        roots,
        node_count,
        leaf_count: leaf_count as usize,
        insert_work,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate::normalized_random_walks;
    use crate::index::buffers::build_summarization_buffers;
    use crate::series::Dataset;

    #[test]
    fn large_capacity_gives_single_leaf_root() {
        let d = Dataset::from_series(&[vec![1.0, 2.0, 3.0, 4.0], vec![1.5, 2.0, 3.0, 4.5]]).unwrap();
        let b = build_summarization_buffers(&d, 2, 1).unwrap();
        assert_eq!(b.len(), 1);
        let t = build_index_tree(&b, 2, 10, 1).unwrap();
        assert_eq!(t.roots.len(), 1);
        assert_eq!(t.node_count, 1);
        assert_eq!(t.leaf_series(LeafRef { root: 0, node: 0 }), &[0, 1]);
    }

    #[test]
    fn identical_words_split_to_full_cardinality_then_overflow() {
        let s = vec![0.3, 0.3, -0.7, -0.7];
        let d = Dataset::from_series(&[s.clone(), s]).unwrap();
        let b = build_summarization_buffers(&d, 2, 1).unwrap();
        let t = build_index_tree(&b, 2, 1, 1).unwrap();
        let leaves = t.leaves();
        let full: Vec<_> = leaves.iter().filter(|l| t.leaf_series(**l).len() == 2).collect();
        assert_eq!(full.len(), 1);
        let node = t.node(*full[0]);
        assert_eq!(node.word.card_bits, vec![8, 8]);
        assert!(matches!(node.kind, NodeKind::Leaf { overflow: true, .. }));
        // 14 promotions from (1,1) to (8,8), each adding two children
        assert_eq!(t.node_count, 1 + 2 * 14);
    }

    #[test]
    fn zero_capacity_rejected() {
        let d = Dataset::from_series(&[vec![1.0, 2.0]]).unwrap();
        let b = build_summarization_buffers(&d, 2, 1).unwrap();
        assert!(build_index_tree(&b, 2, 0, 1).is_err());
    }

    #[test]
    fn full_tree_audit() {
        let d = normalized_random_walks(20_000, 64, 17);
        let b = build_summarization_buffers(&d, 16, 1).unwrap();
        let t = build_index_tree(&b, 16, 50, 1).unwrap();
        let mut seen = vec![0u32; d.len()];
        let mut ids = Vec::new();
        for leaf in t.leaves() {
            let node = t.node(leaf);
            ids.push(t.leaf_id(leaf));
            let series = t.leaf_series(leaf);
            if let NodeKind::Leaf { overflow, .. } = node.kind {
                assert!(overflow || series.len() <= 50);
            }
            for &s in series {
                seen[s as usize] += 1;
                let sym = crate::index::buffers::summarize(d.get(s as usize), 16).unwrap();
                assert!(node.word.covers(&sym[..16]));
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
        assert_eq!(ids, (0..t.leaf_count as u32).collect::<Vec<_>>());
        // internal nodes halve their region on exactly one segment
        for root in &t.roots {
            for node in &root.nodes {
                if let NodeKind::Internal { split_segment, children } = &node.kind {
                    for &c in children {
                        let child = &root.nodes[c as usize];
                        for s in 0..16 {
                            let expected = node.word.card_bits[s] + u8::from(s == *split_segment);
                            assert_eq!(child.word.card_bits[s], expected);
                            assert_eq!(child.word.symbols[s] >> (child.word.card_bits[s] - node.word.card_bits[s]), node.word.symbols[s]);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn worker_count_does_not_change_the_tree() {
        let d = normalized_random_walks(5_000, 64, 5);
        let b = build_summarization_buffers(&d, 16, 1).unwrap();
        let one = build_index_tree(&b, 16, 20, 1).unwrap();
        let many = build_index_tree(&b, 16, 20, 8).unwrap();
        assert_eq!(one, many);
        let stats = one.stats();
        assert_eq!(stats.series, 5_000);
        assert_eq!(stats.leaves, one.leaf_count);
    }
}
