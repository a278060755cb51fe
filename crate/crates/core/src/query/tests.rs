use std::collections::HashSet;

use super::*;
use crate::distance::euclidean_distance;
use crate::generate::{normalized_random_walks, perturbed_copies};
use crate::index::{partition_rs_batches, IndexConfig, NodeIndex, RsBatch};
use crate::oracle::brute_force;
use crate::series::Dataset;

fn build(data: Dataset, capacity: usize) -> NodeIndex {
    let cfg = IndexConfig {
        leaf_capacity: capacity,
        ..IndexConfig::default()
    };
    NodeIndex::build_full(data, &cfg).unwrap()
}

fn fixed(th: usize, n_threads: usize, help_th: usize) -> QueryParams {
    QueryParams {
        n_threads,
        help_th,
        threshold: ThresholdModel::Fixed { th },
        early_cutoff: true,
    }
}

fn close(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= 1e-9 * a.abs().max(b.abs())
}

fn exec_params(th: usize, bound: f64) -> ExecParams {
    ExecParams {
        th,
        help_th: 2,
        traversal_bound: bound,
        early_cutoff: true,
    }
}

#[test]
fn exact_across_threads_and_queue_sizes() {
    let idx = build(normalized_random_walks(10_000, 64, 11), 100);
    let queries = normalized_random_walks(12, 64, 12);
    for n_sb in [1, 4] {
        let batches = partition_rs_batches(&idx.tree, n_sb).unwrap();
        for q in queries.iter() {
            let truth = brute_force(&idx.data, q, SearchMode::nn()).unwrap().value();
            let ctx = QueryContext::new(q, 16, SearchMode::nn()).unwrap();
            for (th, threads, help) in [(1, 1, 0), (5, 2, 2), (32, 4, 2), (usize::MAX, 8, 0), (3, 8, 7)] {
                let out = answer_query(0, &ctx, &idx, &batches, &fixed(th, threads, help), None);
                assert!(close(out.bsf.value(), truth), "th {th} threads {threads}: {} vs {truth}", out.bsf.value());
                assert!(out.bsf_trace.windows(2).all(|w| w[1] <= w[0]));
            }
        }
    }
}

#[test]
fn single_series_chunk() {
    let data = normalized_random_walks(1, 64, 13);
    let idx = build(data, 10);
    let batches = partition_rs_batches(&idx.tree, 2).unwrap();
    let q = normalized_random_walks(1, 64, 14);
    let ctx = QueryContext::new(q.get(0), 16, SearchMode::nn()).unwrap();
    let out = answer_query(0, &ctx, &idx, &batches, &QueryParams::default(), None);
    assert_eq!(out.bsf.best().unwrap().id, 0);
    assert_eq!(out.bsf.value(), euclidean_distance(q.get(0), idx.data.get(0)).unwrap());
}

#[test]
fn zero_override_prunes_everything() {
    let idx = build(normalized_random_walks(3000, 64, 15), 50);
    let batches = partition_rs_batches(&idx.tree, 4).unwrap();
    let dup = QueryContext::new(idx.data.get(42), 16, SearchMode::nn()).unwrap();
    let out = answer_query(0, &dup, &idx, &batches, &QueryParams::default(), Some(0.0));
    assert_eq!(out.bsf.value(), 0.0);
    assert_eq!(out.stats.counters.leaves_enqueued, 0);
    let fresh = normalized_random_walks(1, 64, 16);
    let ctx = QueryContext::new(fresh.get(0), 16, SearchMode::nn()).unwrap();
    let out = answer_query(0, &ctx, &idx, &batches, &QueryParams::default(), Some(0.0));
    assert!(out.bsf.value() > 0.0);
    assert_eq!(out.stats.counters.series_checked, 0);
}

fn traversed(idx: &NodeIndex, ctx: &QueryContext, batches: &[RsBatch], th: usize, bound: f64) -> Vec<(usize, usize, Vec<LeafEntry>)> {
    let exec = QueryExecution::new(idx, ctx, batches, Bsf::new(1), exec_params(th, bound));
    let mut cur = WorkerCursor::default();
    while exec.traversal_step(&mut cur).is_some() {}
    exec.preprocess();
    exec.queues()
        .unwrap()
        .iter()
        .map(|q| (q.batch, q.ordinal, q.entries.clone()))
        .collect()
}

#[test]
fn traversal_enqueues_exactly_the_unpruned_leaves() {
    let idx = build(normalized_random_walks(5000, 64, 17), 40);
    let batches = partition_rs_batches(&idx.tree, 4).unwrap();
    let q = normalized_random_walks(3, 64, 18);
    for qv in q.iter() {
        let ctx = QueryContext::new(qv, 16, SearchMode::nn()).unwrap();
        let all = traversed(&idx, &ctx, &batches, 32, f64::INFINITY);
        let count: usize = all.iter().map(|(_, _, e)| e.len()).sum();
        assert_eq!(count, idx.tree.leaf_count);

        let one = traversed(&idx, &ctx, &batches, 1, f64::INFINITY);
        assert_eq!(one.len(), idx.tree.leaf_count);

        let bound = approx_search(&ctx, &idx).bsf.value();
        let got: HashSet<_> = traversed(&idx, &ctx, &batches, 32, bound)
            .into_iter()
            .flat_map(|(_, _, e)| e.into_iter().map(|x| x.leaf))
            .collect();
        let want: HashSet<_> = idx
            .tree
            .leaves()
            .into_iter()
            .filter(|&l| ctx.node_lower_bound(&idx.tree.node(l).word) < bound)
            .collect();
        assert_eq!(got, want);
    }
}

#[test]
fn queue_discipline_and_sorting() {
    let idx = build(normalized_random_walks(5000, 64, 19), 20);
    let batches = partition_rs_batches(&idx.tree, 3).unwrap();
    let q = normalized_random_walks(1, 64, 20);
    let ctx = QueryContext::new(q.get(0), 16, SearchMode::nn()).unwrap();
    let th = 7;
    let queues = traversed(&idx, &ctx, &batches, th, f64::INFINITY);
    for w in queues.windows(2) {
        assert!(w[0].2[0].lb <= w[1].2[0].lb);
    }
    for b in &batches {
        let mine: Vec<_> = queues.iter().filter(|(batch, _, _)| *batch == b.id).collect();
        let short = mine.iter().filter(|(_, _, e)| e.len() < th).count();
        assert!(short <= 1);
        assert!(mine.iter().all(|(_, _, e)| e.len() <= th && !e.is_empty()));
        for (_, _, e) in &mine {
            assert!(e.windows(2).all(|w| w[0].lb <= w[1].lb));
            assert!(e.iter().all(|x| b.roots.contains(&(x.leaf.root as usize))));
        }
    }
}

#[test]
fn no_queues_when_everything_pruned() {
    let idx = build(normalized_random_walks(100, 64, 21), 10);
    let batches = partition_rs_batches(&idx.tree, 2).unwrap();
    let ctx = QueryContext::new(idx.data.get(0), 16, SearchMode::nn()).unwrap();
    assert!(traversed(&idx, &ctx, &batches, 4, 0.0).is_empty());
}

#[test]
fn early_cutoff_does_not_change_answers() {
    let idx = build(normalized_random_walks(4000, 64, 22), 30);
    let batches = partition_rs_batches(&idx.tree, 4).unwrap();
    let q = normalized_random_walks(10, 64, 23);
    for qv in q.iter() {
        let ctx = QueryContext::new(qv, 16, SearchMode::knn(3)).unwrap();
        let mut p = fixed(8, 2, 2);
        let a = answer_query(0, &ctx, &idx, &batches, &p, None);
        p.early_cutoff = false;
        let b = answer_query(0, &ctx, &idx, &batches, &p, None);
        let da: Vec<f64> = a.bsf.neighbors.iter().map(|n| n.distance).collect();
        let db: Vec<f64> = b.bsf.neighbors.iter().map(|n| n.distance).collect();
        assert_eq!(da, db);
        assert!(a.stats.counters.leaves_processed <= b.stats.counters.leaves_processed);
    }
}

#[test]
fn knn_and_dtw_match_oracle() {
    let idx = build(normalized_random_walks(2000, 64, 24), 40);
    let batches = partition_rs_batches(&idx.tree, 4).unwrap();
    let q = normalized_random_walks(4, 64, 25);
    for qv in q.iter() {
        for mode in [SearchMode::knn(5), SearchMode::knn(20), SearchMode::dtw(0), SearchMode::dtw(6)] {
            let truth = brute_force(&idx.data, qv, mode).unwrap();
            let ctx = QueryContext::new(qv, 16, mode).unwrap();
            let out = answer_query(0, &ctx, &idx, &batches, &fixed(16, 3, 2), None);
            assert_eq!(out.bsf.neighbors.len(), truth.neighbors.len());
            for (a, b) in out.bsf.neighbors.iter().zip(&truth.neighbors) {
                assert!(close(a.distance, b.distance), "{mode:?}: {} vs {}", a.distance, b.distance);
            }
        }
    }
}

#[test]
fn processing_reaches_min_over_unpruned_leaves() {
    let idx = build(normalized_random_walks(3000, 64, 26), 25);
    let batches = partition_rs_batches(&idx.tree, 2).unwrap();
    let q = normalized_random_walks(1, 64, 27);
    let ctx = QueryContext::new(q.get(0), 16, SearchMode::nn()).unwrap();
    let mut params = exec_params(5, f64::INFINITY);
    params.early_cutoff = false;
    let exec = QueryExecution::new(&idx, &ctx, &batches, Bsf::new(1), params);
    let mut cur = WorkerCursor::default();
    while exec.traversal_step(&mut cur).is_some() {}
    exec.preprocess();
    while exec.processing_step(&mut cur).is_some() {}
    let truth = idx.data.iter().map(|s| euclidean_distance(q.get(0), s).unwrap()).fold(f64::INFINITY, f64::min);
    assert_eq!(exec.bsf().value(), truth);
    assert_eq!(exec.counters().leaves_processed as usize, idx.tree.leaf_count);
}

#[test]
fn grants_pick_rightmost_batches_and_cover_once() {
    let data = normalized_random_walks(6000, 64, 28);
    let idx = build(data, 20);
    let batches = partition_rs_batches(&idx.tree, 6).unwrap();
    let q = perturbed_copies(&idx.data.subset(&[5]), 1, 0.8, 29);
    let ctx = QueryContext::new(q.get(0), 16, SearchMode::nn()).unwrap();
    let truth = brute_force(&idx.data, q.get(0), SearchMode::nn()).unwrap().value();
    let (initial, bound, _) = initial_state(&ctx, &idx, None);
    let params = exec_params(4, bound);
    let owner = QueryExecution::new(&idx, &ctx, &batches, initial, params);
    let mut cur = WorkerCursor::default();
    while owner.traversal_step(&mut cur).is_some() {}
    assert!(owner.grant(4).is_empty(), "no grants before preprocessing");
    owner.preprocess();
    let queues = owner.queues().unwrap();
    let mut first: Vec<(usize, usize)> = batches
        .iter()
        .filter_map(|b| queues.iter().position(|q| q.batch == b.id).map(|p| (p, b.id)))
        .collect();
    first.sort_unstable_by(|a, b| b.cmp(a));
    assert!(first.len() >= 5, "need several eligible batches, got {}", first.len());

    // owner claims its leftmost queue first
    owner.processing_step(&mut cur);
    let work = owner.grant(4);
    let expected: HashSet<usize> = first.iter().filter(|(p, _)| *p > 0).take(4).map(|&(_, b)| b).collect();
    let got: HashSet<usize> = work.batches.iter().map(|(b, _)| *b).collect();
    assert_eq!(got, expected);
    let second = owner.grant(4);
    assert!(second.batches.iter().all(|(b, _)| !got.contains(b)));

    let mut merged = owner.bsf();
    let mut seen: Vec<(usize, usize)> = Vec::new();
    for w in [&work, &second] {
        let thief = QueryExecution::stolen(&idx, &ctx, &batches, w, owner.threshold(), params);
        let mut tc = WorkerCursor::default();
        while thief.traversal_step(&mut tc).is_some() {}
        thief.preprocess();
        assert_eq!(thief.queues().unwrap().len(), w.queue_count());
        while thief.processing_step(&mut tc).is_some() {}
        owner.tighten(thief.threshold());
        merged.merge(&thief.bsf());
        seen.extend(thief.claimed_queues());
    }
    while owner.processing_step(&mut cur).is_some() {}
    merged.merge(&owner.bsf());
    seen.extend(owner.claimed_queues());

    let unique: HashSet<_> = seen.iter().copied().collect();
    assert_eq!(unique.len(), seen.len(), "a queue was processed twice");
    let all: HashSet<_> = queues.iter().map(|q| (q.batch, q.ordinal)).collect();
    assert_eq!(unique, all);
    assert!(close(merged.value(), truth));
}
