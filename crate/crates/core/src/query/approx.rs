use crate::index::{LeafRef, NodeIndex, NodeKind};

use super::bsf::Bsf;
use super::context::QueryContext;

#[derive(Debug, Clone)]
pub struct ApproxResult {
    pub bsf: Bsf,
    /// Leaf whose series were evaluated, `None` for an empty index.
    pub leaf: Option<LeafRef>,
    /// Lower-bound evaluations plus distance point operations.
    pub cost: u64,
}

/// Descends to the leaf matching the query summary and evaluates its series.
///
/// Falls back to the root with the smallest lower bound when the query's own
/// root word holds no series.
pub fn approx_search(query: &QueryContext, index: &NodeIndex) -> ApproxResult {
    let tree = &index.tree;
    let segments = tree.segments as u64;
    let mut bsf = Bsf::new(query.mode().k);
    let mut cost = 0u64;
    if tree.roots.is_empty() {
        return ApproxResult { bsf, leaf: None, cost };
    }
    let root = match tree.roots.binary_search_by_key(&query.root_key(), |r| r.key) {
        Ok(pos) => pos,
        Err(_) => {
            cost += segments * tree.roots.len() as u64;
            let mut best = (f64::INFINITY, 0);
            for (i, r) in tree.roots.iter().enumerate() {
                let lb = query.node_lower_bound(&r.nodes[0].word);
                if lb < best.0 {
                    best = (lb, i);
                }
            }
            best.1
        }
    };
    let nodes = &tree.roots[root].nodes;
    let mut node = 0u32;
    while let NodeKind::Internal { split_segment, children } = &nodes[node as usize].kind {
        cost += 2;
        let lo = query.segment_gap(*split_segment, &nodes[children[0] as usize].word);
        let hi = query.segment_gap(*split_segment, &nodes[children[1] as usize].word);
        node = if hi < lo { children[1] } else { children[0] };
    }
    let leaf = LeafRef {
        root: root as u32,
        node,
    };
    for &pos in tree.leaf_series(leaf) {
        let limit = bsf.value();
        let (d, points) = query.distance_sq_bounded(index.data.get(pos as usize), limit * limit);
        cost += points as u64;
        if let Some(sq) = d {
            bsf.offer(sq.sqrt(), index.ids[pos as usize]);
        }
    }
    ApproxResult {
        bsf,
        leaf: Some(leaf),
        cost,
    }
}
