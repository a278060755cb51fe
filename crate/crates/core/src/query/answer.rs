use std::sync::Barrier;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::index::{NodeIndex, RsBatch};

use super::approx::approx_search;
use super::bsf::Bsf;
use super::context::QueryContext;
use super::exec::{ExecCounters, ExecParams, QueryExecution, WorkerCursor, DEFAULT_HELP_TH};
use super::threshold::ThresholdModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryParams {
    pub n_threads: usize,
    pub help_th: usize,
    pub threshold: ThresholdModel,
    pub early_cutoff: bool,
}

impl Default for QueryParams {
    fn default() -> Self {
        Self {
            n_threads: 1,
            help_th: DEFAULT_HELP_TH,
            threshold: ThresholdModel::default(),
            early_cutoff: true,
        }
    }
}

/// Durations of the four stages of one query. Microseconds for threaded
/// runs, work units under simulation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimes {
    pub approx: f64,
    pub traversal: f64,
    pub preprocess: f64,
    pub processing: f64,
}

impl PhaseTimes {
    pub fn total(&self) -> f64 {
        self.approx + self.traversal + self.preprocess + self.processing
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryStats {
    pub query_id: u64,
    pub initial_bsf: f64,
    pub distance: f64,
    pub th: usize,
    pub time_unit: String,
    pub times: PhaseTimes,
    pub median_queue_size: f64,
    pub leaves_pruned: u64,
    #[serde(flatten)]
    pub counters: ExecCounters,
}

impl QueryStats {
    pub fn new(query_id: u64, initial_bsf: f64, bsf: &Bsf, th: usize, time_unit: &str, times: PhaseTimes, counters: ExecCounters) -> Self {
        Self {
            query_id,
            initial_bsf,
            distance: bsf.value(),
            th,
            time_unit: time_unit.to_string(),
            times,
            median_queue_size: counters.median_queue_size(),
            leaves_pruned: counters.leaves_pruned(),
            counters,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QueryOutcome {
    pub bsf: Bsf,
    pub stats: QueryStats,
    /// Every value the pruning threshold took.
    pub bsf_trace: Vec<f64>,
}

/// Starting candidates and threshold: the approximate answer, tightened by
/// an external value when one is known.
pub fn initial_state(query: &QueryContext, index: &NodeIndex, override_bsf: Option<f64>) -> (Bsf, f64, u64) {
    let approx = approx_search(query, index);
    let initial = override_bsf.map_or(approx.bsf.value(), |o| o.min(approx.bsf.value()));
    (approx.bsf, initial, approx.cost)
}

/// Runs the three phases with `n_threads` workers. Returns microseconds
/// spent in traversal, preprocessing and processing.
pub fn run_phases(exec: &QueryExecution<'_>, n_threads: usize) -> (f64, f64, f64) {
    let n = n_threads.max(1);
    if n == 1 {
        let mut cur = WorkerCursor::default();
        let t0 = Instant::now();
        while exec.traversal_step(&mut cur).is_some() {}
        let t1 = Instant::now();
        exec.preprocess();
        let t2 = Instant::now();
        while exec.processing_step(&mut cur).is_some() {}
        let t3 = Instant::now();
        return (us(t1 - t0), us(t2 - t1), us(t3 - t2));
    }
    let barrier = Barrier::new(n);
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..n)
            .map(|t| {
                let barrier = &barrier;
                s.spawn(move || {
                    let mut cur = WorkerCursor::default();
                    let t0 = Instant::now();
                    while exec.traversal_step(&mut cur).is_some() {}
                    barrier.wait();
                    let t1 = Instant::now();
                    if t == 0 {
                        exec.preprocess();
                    }
                    barrier.wait();
                    let t2 = Instant::now();
                    while exec.processing_step(&mut cur).is_some() {}
                    barrier.wait();
                    (us(t1 - t0), us(t2 - t1), us(Instant::now() - t2))
                })
            })
            .collect();
        let times: Vec<_> = handles.into_iter().map(|h| h.join().expect("worker panicked")).collect();
        times[0]
    })
}

fn us(d: std::time::Duration) -> f64 {
    d.as_secs_f64() * 1e6
}

/// Exact answer over one node's chunk.
pub fn answer_query(
    query_id: u64,
    query: &QueryContext,
    index: &NodeIndex,
    batches: &[RsBatch],
    params: &QueryParams,
    initial_bsf_override: Option<f64>,
) -> QueryOutcome {
    let t0 = Instant::now();
    let (candidates, initial, _) = initial_state(query, index, initial_bsf_override);
    let approx_us = us(t0.elapsed());
    let th = params.threshold.threshold(initial);
    let exec = QueryExecution::new(
        index,
        query,
        batches,
        candidates,
        ExecParams {
            th,
            help_th: params.help_th,
            traversal_bound: initial,
            early_cutoff: params.early_cutoff,
        },
    );
    let (traversal, preprocess, processing) = run_phases(&exec, params.n_threads);
    let bsf = exec.bsf();
    let times = PhaseTimes {
        approx: approx_us,
        traversal,
        preprocess,
        processing,
    };
    QueryOutcome {
        stats: QueryStats::new(query_id, initial, &bsf, th, "us", times, exec.counters()),
        bsf_trace: exec.bsf_trace(),
        bsf,
    }
}
