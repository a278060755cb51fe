//! Tree traversal, queue preprocessing and queue processing for one query on
//! one node.
//!
//! Work is exposed as small steps on a [`WorkerCursor`] so the same state can
//! be driven by real threads or by the cluster simulator.

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicU8, AtomicUsize, Ordering};
use std::sync::{Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::index::{LeafRef, NodeIndex, NodeKind, RsBatch};

use super::bsf::{Bsf, BsfCell};
use super::context::QueryContext;

/// Idle workers allowed to help one batch.
pub const DEFAULT_HELP_TH: usize = 2;

const PENDING: u8 = 0;
const CLAIMED: u8 = 1;
const STOLEN: u8 = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeafEntry {
    pub lb: f64,
    pub leaf: LeafRef,
}

/// At most TH leaves of one batch, ascending by lower bound.
#[derive(Debug)]
pub struct LeafQueue {
    pub batch: usize,
    /// Position among the batch's queues in creation order.
    pub ordinal: usize,
    pub entries: Vec<LeafEntry>,
    state: AtomicU8,
}

impl LeafQueue {
    pub fn top(&self) -> f64 {
        self.entries.first().map_or(f64::INFINITY, |e| e.lb)
    }

    pub fn is_stolen(&self) -> bool {
        self.state.load(Ordering::Acquire) == STOLEN
    }
}

/// Queues granted to another node: batch id with the ordinals of its queues.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StolenWork {
    pub batches: Vec<(usize, Vec<usize>)>,
}

impl StolenWork {
    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }

    pub fn queue_count(&self) -> usize {
        self.batches.iter().map(|(_, q)| q.len()).sum()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ExecParams {
    pub th: usize,
    pub help_th: usize,
    /// Pruning bound used during traversal; fixed for the whole phase so a
    /// thief can rebuild identical queues.
    pub traversal_bound: f64,
    /// Stop a queue at the first entry whose bound reaches the BSF.
    pub early_cutoff: bool,
}

struct BatchRun {
    batch: RsBatch,
    next_root: AtomicUsize,
    helpers: AtomicUsize,
    complete: AtomicBool,
    granted: AtomicBool,
    leaves: Vec<OnceLock<Vec<LeafEntry>>>,
}

struct Prepared {
    queues: Vec<LeafQueue>,
    /// Queue positions of each run, ascending.
    by_run: Vec<Vec<usize>>,
}

#[derive(Default)]
struct Counters {
    lb_evals: AtomicU64,
    leaves_enqueued: AtomicU64,
    leaves_processed: AtomicU64,
    leaves_cut: AtomicU64,
    series_checked: AtomicU64,
    points: AtomicU64,
}

/// Counters of one execution.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExecCounters {
    pub lb_evals: u64,
    pub leaves_in_scope: u64,
    pub leaves_enqueued: u64,
    pub leaves_processed: u64,
    /// Enqueued leaves skipped because their bound reached the BSF.
    pub leaves_cut: u64,
    pub series_checked: u64,
    pub distance_points: u64,
    pub queues: usize,
    pub queue_sizes: Vec<usize>,
    pub queues_stolen: usize,
}

impl ExecCounters {
    pub fn leaves_pruned(&self) -> u64 {
        self.leaves_in_scope - self.leaves_enqueued + self.leaves_cut
    }

    pub fn median_queue_size(&self) -> f64 {
        let mut s = self.queue_sizes.clone();
        if s.is_empty() {
            return 0.0;
        }
        s.sort_unstable();
        let n = s.len();
        if n % 2 == 1 {
            s[n / 2] as f64
        } else {
            (s[n / 2 - 1] + s[n / 2]) as f64 / 2.0
        }
    }
}

/// Per-worker position in the phases.
#[derive(Debug, Default, Clone)]
pub struct WorkerCursor {
    batch: Option<usize>,
    own_done: bool,
    help_next: usize,
    queue: Option<(usize, usize)>,
}

type ShareHook<'a> = Box<dyn Fn(f64) + Send + Sync + 'a>;

pub struct QueryExecution<'a> {
    index: &'a NodeIndex,
    query: &'a QueryContext,
    runs: Vec<BatchRun>,
    keep: Option<HashMap<usize, Vec<usize>>>,
    params: ExecParams,
    bcnt: AtomicUsize,
    prepared: OnceLock<Prepared>,
    pqcnt: AtomicUsize,
    bsf: BsfCell,
    counters: Counters,
    hook: Option<ShareHook<'a>>,
}

impl<'a> QueryExecution<'a> {
    /// Execution over all `batches`, starting from `initial` candidates.
    pub fn new(
        index: &'a NodeIndex,
        query: &'a QueryContext,
        batches: &[RsBatch],
        initial: Bsf,
        params: ExecParams,
    ) -> Self {
        Self::build(index, query, batches.to_vec(), None, initial, params)
    }

    /// Execution restricted to queues granted by another node. Traversal
    /// rebuilds the named batches with the owner's bound and TH, then keeps
    /// only the granted queue ordinals.
    pub fn stolen(
        index: &'a NodeIndex,
        query: &'a QueryContext,
        batches: &[RsBatch],
        work: &StolenWork,
        bsf_value: f64,
        params: ExecParams,
    ) -> Self {
        let selected = work
            .batches
            .iter()
            .filter_map(|(b, _)| batches.iter().find(|x| x.id == *b).cloned())
            .collect();
        let keep = work.batches.iter().cloned().collect();
        let exec = Self::build(index, query, selected, Some(keep), Bsf::new(query.mode().k), params);
        exec.bsf.tighten(bsf_value);
        exec
    }

    fn build(
        index: &'a NodeIndex,
        query: &'a QueryContext,
        batches: Vec<RsBatch>,
        keep: Option<HashMap<usize, Vec<usize>>>,
        initial: Bsf,
        params: ExecParams,
    ) -> Self {
        let runs = batches
            .into_iter()
            .map(|batch| BatchRun {
                leaves: (0..batch.roots.len()).map(|_| OnceLock::new()).collect(),
                batch,
                next_root: AtomicUsize::new(0),
                helpers: AtomicUsize::new(0),
                complete: AtomicBool::new(false),
                granted: AtomicBool::new(false),
            })
            .collect();
        let bsf = BsfCell::new(initial);
        bsf.tighten(params.traversal_bound);
        Self {
            index,
            query,
            runs,
            keep,
            params,
            bcnt: AtomicUsize::new(0),
            prepared: OnceLock::new(),
            pqcnt: AtomicUsize::new(0),
            bsf,
            counters: Counters::default(),
            hook: None,
        }
    }

    /// Called with the new threshold after every local improvement.
    pub fn with_share_hook(mut self, hook: impl Fn(f64) + Send + Sync + 'a) -> Self {
        self.hook = Some(Box::new(hook));
        self
    }

    pub fn params(&self) -> ExecParams {
        self.params
    }

    pub fn threshold(&self) -> f64 {
        self.bsf.threshold()
    }

    /// Folds a value learned elsewhere into the pruning threshold.
    pub fn tighten(&self, value: f64) {
        self.bsf.tighten(value);
    }

    pub fn bsf(&self) -> Bsf {
        self.bsf.snapshot()
    }

    /// Every value the pruning threshold took, in order.
    pub fn bsf_trace(&self) -> Vec<f64> {
        self.bsf.trace()
    }

    /// One root subtree of traversal work; `None` once this worker has
    /// nothing left to traverse or help with. Returns the cost in point
    /// operations.
    pub fn traversal_step(&self, cur: &mut WorkerCursor) -> Option<u64> {
        loop {
            if let Some(b) = cur.batch {
                let run = &self.runs[b];
                let r = run.next_root.fetch_add(1, Ordering::AcqRel);
                if r < run.leaves.len() {
                    return Some(self.traverse_root(run, r));
                }
                run.complete.store(true, Ordering::Release);
                cur.batch = None;
                continue;
            }
            if !cur.own_done {
                let b = self.bcnt.fetch_add(1, Ordering::AcqRel);
                if b < self.runs.len() {
                    cur.batch = Some(b);
                } else {
                    cur.own_done = true;
                }
                continue;
            }
            while cur.help_next < self.runs.len() {
                let run = &self.runs[cur.help_next];
                cur.help_next += 1;
                if !run.complete.load(Ordering::Acquire)
                    && run.helpers.fetch_add(1, Ordering::AcqRel) < self.params.help_th
                {
                    cur.batch = Some(cur.help_next - 1);
                    break;
                }
            }
            cur.batch?;
        }
    }

    fn traverse_root(&self, run: &BatchRun, r: usize) -> u64 {
        let root = run.batch.roots.start + r;
        let nodes = &self.index.tree.roots[root].nodes;
        let bound = self.params.traversal_bound;
        let mut out = Vec::new();
        let mut evals = 0u64;
        let mut stack = vec![0u32];
        while let Some(n) = stack.pop() {
            let node = &nodes[n as usize];
            evals += 1;
            let lb = self.query.node_lower_bound(&node.word);
            if lb >= bound {
                continue;
            }
            match &node.kind {
                NodeKind::Leaf { .. } => out.push(LeafEntry {
                    lb,
                    leaf: LeafRef {
                        root: root as u32,
                        node: n,
                    },
                }),
                NodeKind::Internal { children, .. } => {
                    stack.push(children[1]);
                    stack.push(children[0]);
                }
            }
        }
        self.counters.lb_evals.fetch_add(evals, Ordering::Relaxed);
        self.counters.leaves_enqueued.fetch_add(out.len() as u64, Ordering::Relaxed);
        run.leaves[r].set(out).expect("root traversed twice");
        evals * self.index.tree.segments as u64
    }

    /// Builds and sorts the queue array. Call once, after every worker's
    /// traversal returned `None`. Returns the cost.
    pub fn preprocess(&self) -> u64 {
        let th = self.params.th.max(1);
        let mut queues = Vec::new();
        let mut entries_total = 0u64;
        for run in &self.runs {
            let all: Vec<LeafEntry> = run
                .leaves
                .iter()
                .flat_map(|l| l.get().expect("traversal incomplete").iter().copied())
                .collect();
            entries_total += all.len() as u64;
            let kept = self.keep.as_ref().map(|k| &k[&run.batch.id]);
            for (ordinal, chunk) in all.chunks(th).enumerate() {
                if kept.is_some_and(|k| !k.contains(&ordinal)) {
                    continue;
                }
                let mut entries = chunk.to_vec();
                entries.sort_by(|a, b| a.lb.total_cmp(&b.lb).then(a.leaf.cmp(&b.leaf)));
                queues.push(LeafQueue {
                    batch: run.batch.id,
                    ordinal,
                    entries,
                    state: AtomicU8::new(PENDING),
                });
            }
        }
        queues.sort_by(|a, b| a.top().total_cmp(&b.top()).then(a.batch.cmp(&b.batch)).then(a.ordinal.cmp(&b.ordinal)));
        let mut by_run = vec![Vec::new(); self.runs.len()];
        for (i, q) in queues.iter().enumerate() {
            let run = self.runs.iter().position(|r| r.batch.id == q.batch).unwrap();
            by_run[run].push(i);
        }
        let n = queues.len() as u64;
        let cost = entries_total + n * (64 - n.leading_zeros() as u64);
        if self.prepared.set(Prepared { queues, by_run }).is_err() {
            panic!("preprocess called twice");
        }
        cost
    }

    /// The sorted queue array, once preprocessing ran.
    pub fn queues(&self) -> Option<&[LeafQueue]> {
        self.prepared.get().map(|p| p.queues.as_slice())
    }

    /// One leaf of processing work; `None` when no queue is left.
    pub fn processing_step(&self, cur: &mut WorkerCursor) -> Option<u64> {
        let queues = &self.prepared.get().expect("preprocess not run").queues;
        loop {
            if let Some((qi, pos)) = cur.queue {
                let q = &queues[qi];
                if pos >= q.entries.len() {
                    cur.queue = None;
                    continue;
                }
                let e = q.entries[pos];
                if self.params.early_cutoff && e.lb >= self.bsf.threshold() {
                    let rest = (q.entries.len() - pos) as u64;
                    self.counters.leaves_cut.fetch_add(rest, Ordering::Relaxed);
                    cur.queue = None;
                    return Some(1);
                }
                cur.queue = Some((qi, pos + 1));
                return Some(self.process_leaf(e.leaf) + 1);
            }
            let i = self.pqcnt.fetch_add(1, Ordering::AcqRel);
            if i >= queues.len() {
                return None;
            }
            if queues[i]
                .state
                .compare_exchange(PENDING, CLAIMED, Ordering::AcqRel, Ordering::Acquire)
                .is_ok()
            {
                cur.queue = Some((i, 0));
            }
        }
    }

    fn process_leaf(&self, leaf: LeafRef) -> u64 {
        let series = self.index.tree.leaf_series(leaf);
        let mut cost = 0u64;
        for &pos in series {
            let limit = self.bsf.threshold();
            let (d, points) = self
                .query
                .distance_sq_bounded(self.index.data.get(pos as usize), limit * limit);
            cost += points as u64;
            if let Some(sq) = d {
                if let Some(v) = self.bsf.offer(sq.sqrt(), self.index.ids[pos as usize]) {
                    if let Some(hook) = &self.hook {
                        hook(v);
                    }
                }
            }
        }
        self.counters.leaves_processed.fetch_add(1, Ordering::Relaxed);
        self.counters.series_checked.fetch_add(series.len() as u64, Ordering::Relaxed);
        self.counters.points.fetch_add(cost, Ordering::Relaxed);
        cost
    }

    /// Picks up to `n_send` batches not granted before whose first queue is
    /// still unclaimed, rightmost first queue first, and marks their pending
    /// queues stolen. Empty before preprocessing.
    pub fn grant(&self, n_send: usize) -> StolenWork {
        let Some(prep) = self.prepared.get() else {
            return StolenWork { batches: Vec::new() };
        };
        let mut eligible: Vec<(usize, usize)> = prep
            .by_run
            .iter()
            .enumerate()
            .filter(|(r, qs)| {
                !qs.is_empty()
                    && !self.runs[*r].granted.load(Ordering::Acquire)
                    && prep.queues[qs[0]].state.load(Ordering::Acquire) == PENDING
            })
            .map(|(r, qs)| (qs[0], r))
            .collect();
        eligible.sort_unstable_by(|a, b| b.cmp(a));
        let mut batches = Vec::new();
        for &(_, r) in eligible.iter().take(n_send) {
            if self.runs[r].granted.swap(true, Ordering::AcqRel) {
                continue;
            }
            let mut ordinals: Vec<usize> = prep.by_run[r]
                .iter()
                .filter(|&&qi| {
                    prep.queues[qi]
                        .state
                        .compare_exchange(PENDING, STOLEN, Ordering::AcqRel, Ordering::Acquire)
                        .is_ok()
                })
                .map(|&qi| prep.queues[qi].ordinal)
                .collect();
            if !ordinals.is_empty() {
                ordinals.sort_unstable();
                batches.push((self.runs[r].batch.id, ordinals));
            }
        }
        StolenWork { batches }
    }

    /// `(batch, ordinal)` of every queue this execution claimed.
    pub fn claimed_queues(&self) -> Vec<(usize, usize)> {
        self.prepared.get().map_or_else(Vec::new, |p| {
            p.queues
                .iter()
                .filter(|q| q.state.load(Ordering::Acquire) == CLAIMED)
                .map(|q| (q.batch, q.ordinal))
                .collect()
        })
    }

    pub fn counters(&self) -> ExecCounters {
        let c = &self.counters;
        let leaves_in_scope = self
            .runs
            .iter()
            .flat_map(|r| r.batch.roots.clone())
            .map(|root| self.index.tree.root_leaf_count(root) as u64)
            .sum();
        let (queues, queue_sizes, queues_stolen) = match self.prepared.get() {
            Some(p) => (
                p.queues.len(),
                p.queues.iter().map(|q| q.entries.len()).collect(),
                p.queues.iter().filter(|q| q.is_stolen()).count(),
            ),
            None => (0, Vec::new(), 0),
        };
        ExecCounters {
            lb_evals: c.lb_evals.load(Ordering::Relaxed),
            leaves_in_scope,
            leaves_enqueued: c.leaves_enqueued.load(Ordering::Relaxed),
            leaves_processed: c.leaves_processed.load(Ordering::Relaxed),
            leaves_cut: c.leaves_cut.load(Ordering::Relaxed),
            series_checked: c.series_checked.load(Ordering::Relaxed),
            distance_points: c.points.load(Ordering::Relaxed),
            queues,
            queue_sizes,
            queues_stolen,
        }
    }
}

/// Collects improvements for a driver that forwards them later.
#[derive(Debug, Default)]
pub struct ShareLog(Mutex<Vec<f64>>);

impl ShareLog {
    pub fn push(&self, v: f64) {
        self.0.lock().unwrap().push(v);
    }

    pub fn drain(&self) -> Vec<f64> {
        std::mem::take(&mut *self.0.lock().unwrap())
    }
}
