//! Deterministic discrete-event execution of the cluster protocol.
//!
//! Every node runs `workers_per_node` virtual workers. A worker step takes
//! effect when it starts and occupies the worker for its cost in point
//! operations; messages take `CostModel::latency` units. Ties are broken by
//! insertion order, so a run is a pure function of its inputs.

use std::cmp::Ordering as CmpOrdering;
use std::collections::{BTreeMap, BinaryHeap, HashMap, VecDeque};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::query::{
    initial_state, Bsf, ExecParams, PhaseTimes, QueryContext, QueryExecution, QueryStats, ShareLog, StolenWork, WorkerCursor,
};
use crate::rng::PortableRng;
use crate::scheduler::{build_schedule, Schedule};
use crate::series::Dataset;

use super::message::{Message, TraceEntry};
use super::{estimate, query_contexts, ClusterConfig, ClusterOutcome, CoverageAudit, NodeMetrics, PreparedCluster, RunMetrics};

const COLLECTOR: usize = 0;

enum Ev {
    Deliver { from: usize, to: usize, msg: Message },
    IndexBuilt { node: usize },
    EstimatesReady { node: usize, estimates: Vec<f64> },
    Phase { node: usize, job: u64 },
    Work { node: usize, job: u64, worker: usize },
    StealRetry { node: usize },
}

struct Event {
    time: u64,
    seq: u64,
    ev: Ev,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<CmpOrdering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // reversed: BinaryHeap pops the earliest event
    fn cmp(&self, other: &Self) -> CmpOrdering {
        (other.time, other.seq).cmp(&(self.time, self.seq))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Approx,
    Traversal,
    Preprocess,
    Processing,
}

struct Job<'a> {
    id: u64,
    query: u64,
    stolen: bool,
    exec: QueryExecution<'a>,
    phase: Phase,
    cursors: Vec<WorkerCursor>,
    arrived: usize,
    shares: Arc<ShareLog>,
    initial: f64,
    th: usize,
    phase_started: u64,
    times: PhaseTimes,
}

#[derive(Default)]
struct NodeState<'a> {
    group: usize,
    is_group_coordinator: bool,
    index_ready: bool,
    batch: Option<Vec<u64>>,
    schedule_started: bool,
    dispatch: Option<VecDeque<u64>>,
    pending_requests: Vec<usize>,
    own_queue: VecDeque<u64>,
    assigned: bool,
    awaiting_assign: bool,
    own_finished: bool,
    job: Option<Job<'a>>,
    next_job: u64,
    done_nodes: Vec<bool>,
    bookkeeping: Vec<f64>,
    outstanding: u32,
    retry_pending: bool,
    quiescent_sent: bool,
    shutdown: bool,
    grants: HashMap<u64, u32>,
    rng: Option<PortableRng>,
    m: NodeMetrics,
    query_start: Option<u64>,
    query_end: u64,
}

#[derive(Default)]
struct Collector {
    answers: Vec<Bsf>,
    owner_answers: Vec<usize>,
    expected_partials: Vec<u64>,
    partials: Vec<u64>,
    quiescent: usize,
    shutdown_sent: bool,
}

#[derive(Default)]
struct AuditRecord {
    all: Vec<(usize, usize)>,
    claimed: Vec<(usize, usize)>,
}

struct Sim<'a> {
    cfg: &'a ClusterConfig,
    prep: &'a PreparedCluster,
    ctxs: &'a [QueryContext],
    now: u64,
    seq: u64,
    heap: BinaryHeap<Event>,
    nodes: Vec<NodeState<'a>>,
    collector: Collector,
    trace: Vec<TraceEntry>,
    messages: BTreeMap<String, u64>,
    audit: HashMap<(usize, u64), AuditRecord>,
    stats: Vec<QueryStats>,
}

/// Runs the whole protocol in virtual time over a prepared cluster.
pub fn simulate(config: &ClusterConfig, prepared: &PreparedCluster, queries: &Dataset) -> Result<ClusterOutcome> {
    let ctxs = query_contexts(config, queries)?;
    let mut sim = Sim::new(config, prepared, &ctxs);
    sim.run()?;
    Ok(sim.outcome())
}

impl<'a> Sim<'a> {
    fn new(cfg: &'a ClusterConfig, prep: &'a PreparedCluster, ctxs: &'a [QueryContext]) -> Self {
        let n = cfg.n_nodes;
        let q = ctxs.len();
        let nodes = (0..n)
            .map(|id| {
                let group = prep.topology.group_of(id);
                NodeState {
                    group,
                    is_group_coordinator: prep.topology.group_coordinators[group] == id,
                    done_nodes: vec![false; n],
                    bookkeeping: vec![f64::INFINITY; q],
                    rng: Some(PortableRng::new(cfg.seed, id as u64)),
                    m: NodeMetrics {
                        node: id,
                        group,
                        ..NodeMetrics::default()
                    },
                    ..NodeState::default()
                }
            })
            .collect();
        let k = cfg.mode.k;
        Self {
            cfg,
            prep,
            ctxs,
            now: 0,
            seq: 0,
            heap: BinaryHeap::new(),
            nodes,
            collector: Collector {
                answers: vec![Bsf::new(k); q],
                owner_answers: vec![0; q],
                expected_partials: vec![0; q],
                partials: vec![0; q],
                ..Collector::default()
            },
            trace: Vec::new(),
            messages: BTreeMap::new(),
            audit: HashMap::new(),
            stats: Vec::new(),
        }
    }

    fn at(&mut self, time: u64, ev: Ev) {
        self.seq += 1;
        self.heap.push(Event { time, seq: self.seq, ev });
    }

    fn send(&mut self, from: usize, to: usize, msg: Message) {
        if self.nodes[from].shutdown {
            self.nodes[from].m.late_messages += 1;
        }
        let delay = if from == to {
            0
        } else {
            *self.messages.entry(msg.kind().name().to_string()).or_default() += 1;
            self.trace.push(TraceEntry::of(self.now, from, to, &msg));
            self.cfg.costs.latency
        };
        self.at(self.now + delay, Ev::Deliver { from, to, msg });
    }

    fn broadcast(&mut self, from: usize, msg: Message) {
        for to in 0..self.cfg.n_nodes {
            if to != from {
                self.send(from, to, msg.clone());
            }
        }
    }

    fn run(&mut self) -> Result<()> {
        let k = self.cfg.k;
        for node in 0..self.cfg.n_nodes {
            let ids = Arc::new(self.prep.plan.chunks[self.prep.topology.group_of(node)].clone());
            self.send(COLLECTOR, node, Message::AssignChunk { ids });
        }
        let all: Vec<u64> = (0..self.ctxs.len() as u64).collect();
        for g in 0..k {
            let coord = self.prep.topology.group_coordinators[g];
            self.send(COLLECTOR, coord, Message::QueryBatch { queries: all.clone() });
        }
        while let Some(Event { time, ev, .. }) = self.heap.pop() {
            self.now = time;
            match ev {
                Ev::Deliver { from, to, msg } => self.deliver(from, to, msg),
                Ev::IndexBuilt { node } => self.index_built(node),
                Ev::EstimatesReady { node, estimates } => self.estimates_ready(node, &estimates)?,
                Ev::Phase { node, job } => self.phase_done(node, job),
                Ev::Work { node, job, worker } => self.work(node, job, worker),
                Ev::StealRetry { node } => {
                    self.nodes[node].retry_pending = false;
                    self.steal_loop(node);
                }
            }
        }
        if !self.collector.shutdown_sent {
            return Err(Error::Runtime("simulation stalled before every answer arrived".into()));
        }
        Ok(())
    }

    fn deliver(&mut self, from: usize, to: usize, msg: Message) {
        if self.nodes[to].shutdown {
            self.nodes[to].m.late_messages += 1;
            return;
        }
        match msg {
            Message::AssignChunk { .. } => {
                let w = self.cfg.workers_per_node as f64;
                let b = &self.prep.indexes[self.nodes[to].group].build;
                let buffer = (b.buffer_work as f64 / w).ceil();
                let tree = (b.tree_work as f64 / w).ceil();
                let m = &mut self.nodes[to].m;
                m.buffer_time = buffer;
                m.tree_time = tree;
                m.index_time = buffer + tree;
                self.at(self.now + (buffer + tree) as u64, Ev::IndexBuilt { node: to });
            }
            Message::QueryBatch { queries } => {
                self.nodes[to].batch = Some(queries);
                self.try_schedule(to);
            }
            Message::RequestQuery => self.serve_request(to, from),
            Message::AssignQuery { queries } => {
                let node = &mut self.nodes[to];
                if self.cfg.scheduler.is_dynamic() {
                    node.awaiting_assign = false;
                    if queries.is_empty() {
                        self.finish_own(to);
                        return;
                    }
                }
                node.assigned = true;
                node.own_queue.extend(queries);
                self.start_next(to);
            }
            Message::BsfShare { query, value } => {
                let node = &mut self.nodes[to];
                let slot = &mut node.bookkeeping[query as usize];
                *slot = slot.min(value);
                if let Some(job) = &node.job {
                    if job.query == query {
                        job.exec.tighten(value);
                    }
                }
            }
            Message::Done => {
                self.nodes[to].done_nodes[from] = true;
                self.check_quiescent(to);
            }
            Message::StealRequest => self.handle_steal_request(to, from),
            Message::StealGrant {
                query,
                bsf,
                traversal_bound,
                th,
                work,
            } => self.handle_grant(to, query, bsf, traversal_bound, th, work),
            Message::LocalAnswer {
                query,
                answer,
                stolen,
                grants,
            } => {
                let c = &mut self.collector;
                let q = query as usize;
                c.answers[q].merge(&answer);
                if stolen {
                    c.partials[q] += 1;
                } else {
                    c.owner_answers[q] += 1;
                    c.expected_partials[q] += u64::from(grants);
                }
                self.check_complete();
            }
            Message::Quiescent => {
                self.collector.quiescent += 1;
                self.check_complete();
            }
            Message::Shutdown => {
                let node = &mut self.nodes[to];
                node.shutdown = true;
                node.m.total_time = self.now as f64;
            }
        }
    }

    fn index_built(&mut self, node: usize) {
        self.nodes[node].index_ready = true;
        if self.nodes[node].is_group_coordinator {
            self.try_schedule(node);
        } else if self.cfg.scheduler.is_dynamic() || self.nodes[node].assigned {
            self.start_next(node);
        }
    }

    fn try_schedule(&mut self, node: usize) {
        let n = &self.nodes[node];
        if !n.index_ready || n.batch.is_none() || n.schedule_started {
            return;
        }
        self.nodes[node].schedule_started = true;
        let index = &self.prep.indexes[self.nodes[node].group];
        let (estimates, cost) = if self.cfg.scheduler.uses_estimates() {
            let mut cost = 0u64;
            let est = self
                .ctxs
                .iter()
                .map(|ctx| {
                    let (_, initial, c) = initial_state(ctx, index, None);
                    cost += c;
                    estimate(self.cfg, initial)
                })
                .collect();
            (est, cost / self.cfg.workers_per_node as u64)
        } else {
            (Vec::new(), 0)
        };
        self.at(self.now + cost, Ev::EstimatesReady { node, estimates });
    }

    fn estimates_ready(&mut self, node: usize, estimates: &[f64]) -> Result<()> {
        let group = self.nodes[node].group;
        let members = self.prep.topology.groups[group].clone();
        let ids = self.nodes[node].batch.clone().unwrap_or_default();
        let est = self.cfg.scheduler.uses_estimates().then_some(estimates);
        match build_schedule(self.cfg.scheduler, &ids, est, members.len())? {
            Schedule::Static(lists) => {
                for (member, list) in members.into_iter().zip(lists) {
                    self.send(node, member, Message::AssignQuery { queries: list });
                }
            }
            Schedule::Dynamic(order) => {
                self.nodes[node].dispatch = Some(order);
                for requester in std::mem::take(&mut self.nodes[node].pending_requests) {
                    self.serve_request(node, requester);
                }
                self.start_next(node);
            }
        }
        Ok(())
    }

    fn serve_request(&mut self, coord: usize, requester: usize) {
        match &mut self.nodes[coord].dispatch {
            Some(queue) => {
                let queries = queue.pop_front().into_iter().collect();
                self.send(coord, requester, Message::AssignQuery { queries });
            }
            None => self.nodes[coord].pending_requests.push(requester),
        }
    }

    fn start_next(&mut self, node: usize) {
        let n = &mut self.nodes[node];
        if n.job.is_some() || n.own_finished || !n.index_ready {
            return;
        }
        if let Some(q) = n.own_queue.pop_front() {
            self.start_query(node, q);
            return;
        }
        if !self.cfg.scheduler.is_dynamic() {
            if n.assigned {
                self.finish_own(node);
            }
            return;
        }
        if n.is_group_coordinator {
            let Some(queue) = &mut n.dispatch else { return };
            match queue.pop_front() {
                Some(q) => self.start_query(node, q),
                None => self.finish_own(node),
            }
        } else if !n.awaiting_assign {
            n.awaiting_assign = true;
            let coord = self.prep.topology.group_coordinators[n.group];
            self.send(node, coord, Message::RequestQuery);
        }
    }

    fn exec_params(&self, th: usize, bound: f64) -> ExecParams {
        ExecParams {
            th,
            help_th: self.cfg.help_th,
            traversal_bound: bound,
            early_cutoff: true,
        }
    }

    fn start_query(&mut self, node: usize, query: u64) {
        let group = self.nodes[node].group;
        let index: &'a crate::index::NodeIndex = &self.prep.indexes[group];
        let ctx: &'a QueryContext = &self.ctxs[query as usize];
        let known = self.nodes[node].bookkeeping[query as usize];
        let override_bsf = (self.cfg.bsf_sharing && known.is_finite()).then_some(known);
        let (candidates, initial, approx_cost) = initial_state(ctx, index, override_bsf);
        let th = self.cfg.threshold.threshold(initial);
        let shares = Arc::new(ShareLog::default());
        let hook = shares.clone();
        let exec = QueryExecution::new(index, ctx, &self.prep.batches[group], candidates, self.exec_params(th, initial))
            .with_share_hook(move |v| hook.push(v));
        let local = exec.bsf().value();
        if local < known {
            // the approximate answer itself is an improvement worth sharing
            shares.push(local);
        }
        let n = &mut self.nodes[node];
        n.query_start.get_or_insert(self.now);
        n.next_job += 1;
        let id = n.next_job;
        n.job = Some(Job {
            id,
            query,
            stolen: false,
            exec,
            phase: Phase::Approx,
            cursors: vec![WorkerCursor::default(); self.cfg.workers_per_node],
            arrived: 0,
            shares,
            initial,
            th,
            phase_started: self.now,
            times: PhaseTimes {
                approx: approx_cost as f64,
                ..PhaseTimes::default()
            },
        });
        self.forward_shares(node);
        self.at(self.now + approx_cost, Ev::Phase { node, job: id });
    }

    fn phase_done(&mut self, node: usize, job_id: u64) {
        let now = self.now;
        let Some(job) = self.nodes[node].job.as_mut().filter(|j| j.id == job_id) else {
            return;
        };
        match job.phase {
            Phase::Approx => job.phase = Phase::Traversal,
            Phase::Preprocess => job.phase = Phase::Processing,
            _ => unreachable!("phase event outside a barrier"),
        }
        job.phase_started = now;
        for worker in 0..self.cfg.workers_per_node {
            self.at(now, Ev::Work { node, job: job_id, worker });
        }
    }

    fn work(&mut self, node: usize, job_id: u64, worker: usize) {
        let now = self.now;
        let workers = self.cfg.workers_per_node;
        let group = self.nodes[node].group;
        let Some(job) = self.nodes[node].job.as_mut().filter(|j| j.id == job_id) else {
            return;
        };
        match job.phase {
            Phase::Traversal => match job.exec.traversal_step(&mut job.cursors[worker]) {
                Some(cost) => self.at(now + cost, Ev::Work { node, job: job_id, worker }),
                None => {
                    job.arrived += 1;
                    if job.arrived == workers {
                        job.arrived = 0;
                        job.times.traversal = (now - job.phase_started) as f64;
                        job.phase = Phase::Preprocess;
                        job.phase_started = now;
                        let cost = job.exec.preprocess();
                        job.times.preprocess = cost as f64;
                        if self.cfg.audit && !job.stolen {
                            let all = job.exec.queues().unwrap().iter().map(|q| (q.batch, q.ordinal)).collect();
                            let key = (group, job.query);
                            self.audit.entry(key).or_default().all = all;
                        }
                        self.at(now + cost, Ev::Phase { node, job: job_id });
                    }
                }
            },
            Phase::Processing => {
                let step = job.exec.processing_step(&mut job.cursors[worker]);
                self.forward_shares(node);
                match step {
                    Some(cost) => self.at(now + cost, Ev::Work { node, job: job_id, worker }),
                    None => {
                        let job = self.nodes[node].job.as_mut().unwrap();
                        job.arrived += 1;
                        if job.arrived == workers {
                            job.times.processing = (now - job.phase_started) as f64;
                            self.finish_job(node);
                        }
                    }
                }
            }
            Phase::Approx | Phase::Preprocess => unreachable!("worker step during a barrier"),
        }
    }

    fn forward_shares(&mut self, node: usize) {
        let Some(job) = &self.nodes[node].job else { return };
        let values = job.shares.drain();
        let query = job.query;
        for v in values {
            let slot = &mut self.nodes[node].bookkeeping[query as usize];
            *slot = slot.min(v);
            if self.cfg.bsf_sharing {
                self.broadcast(node, Message::BsfShare { query, value: v });
            }
        }
    }

    fn finish_job(&mut self, node: usize) {
        let job = self.nodes[node].job.take().expect("finishing without a job");
        let group = self.nodes[node].group;
        let answer = job.exec.bsf();
        if self.cfg.audit {
            self.audit.entry((group, job.query)).or_default().claimed.extend(job.exec.claimed_queues());
        }
        let n = &mut self.nodes[node];
        n.query_end = self.now;
        if job.stolen {
            n.m.stolen_queues_processed += job.exec.claimed_queues().len() as u64;
            self.send(
                node,
                COLLECTOR,
                Message::LocalAnswer {
                    query: job.query,
                    answer,
                    stolen: true,
                    grants: 0,
                },
            );
            self.steal_loop(node);
        } else {
            n.m.queries_answered += 1;
            let grants = n.grants.get(&job.query).copied().unwrap_or(0);
            self.stats.push(QueryStats::new(
                job.query,
                job.initial,
                &answer,
                job.th,
                "work",
                job.times,
                job.exec.counters(),
            ));
            self.send(
                node,
                COLLECTOR,
                Message::LocalAnswer {
                    query: job.query,
                    answer,
                    stolen: false,
                    grants,
                },
            );
            self.start_next(node);
        }
    }

    fn finish_own(&mut self, node: usize) {
        let n = &mut self.nodes[node];
        if n.own_finished {
            return;
        }
        n.own_finished = true;
        n.done_nodes[node] = true;
        n.m.sent_done += 1;
        if n.query_start.is_none() {
            n.query_start = Some(self.now);
            n.query_end = self.now;
        }
        self.broadcast(node, Message::Done);
        self.steal_loop(node);
    }

    fn victims(&self, node: usize) -> Vec<usize> {
        let n = &self.nodes[node];
        self.prep.topology.groups[n.group]
            .iter()
            .copied()
            .filter(|&m| m != node && !n.done_nodes[m])
            .collect()
    }

    fn steal_loop(&mut self, node: usize) {
        let n = &self.nodes[node];
        if !self.cfg.stealing || n.shutdown || n.job.is_some() || n.outstanding > 0 || n.retry_pending || !n.own_finished {
            self.check_quiescent(node);
            return;
        }
        let victims = self.victims(node);
        if victims.is_empty() {
            self.check_quiescent(node);
            return;
        }
        let n = &mut self.nodes[node];
        let pick = n.rng.as_mut().unwrap().below(victims.len() as u64) as usize;
        n.outstanding += 1;
        n.m.steal_requests_sent += 1;
        n.m.max_outstanding_steal_requests = n.m.max_outstanding_steal_requests.max(n.outstanding);
        self.send(node, victims[pick], Message::StealRequest);
    }

    fn handle_steal_request(&mut self, victim: usize, thief: usize) {
        let n_send = self.cfg.n_send;
        let n = &mut self.nodes[victim];
        let grant = match &n.job {
            Some(job) if !job.stolen && job.phase == Phase::Processing => {
                let work = job.exec.grant(n_send);
                if !work.is_empty() {
                    *n.grants.entry(job.query).or_default() += 1;
                    n.m.grants_issued += 1;
                }
                Message::StealGrant {
                    query: job.query,
                    bsf: job.exec.threshold(),
                    traversal_bound: job.exec.params().traversal_bound,
                    th: job.th,
                    work,
                }
            }
            _ => Message::StealGrant {
                query: u64::MAX,
                bsf: f64::INFINITY,
                traversal_bound: f64::INFINITY,
                th: 1,
                work: StolenWork { batches: Vec::new() },
            },
        };
        self.send(victim, thief, grant);
    }

    fn handle_grant(&mut self, node: usize, query: u64, bsf: f64, traversal_bound: f64, th: usize, work: StolenWork) {
        self.nodes[node].outstanding -= 1;
        if work.is_empty() {
            self.nodes[node].retry_pending = true;
            self.at(self.now + self.cfg.costs.steal_backoff, Ev::StealRetry { node });
            return;
        }
        let group = self.nodes[node].group;
        let index: &'a crate::index::NodeIndex = &self.prep.indexes[group];
        let ctx: &'a QueryContext = &self.ctxs[query as usize];
        let known = self.nodes[node].bookkeeping[query as usize];
        let start = if self.cfg.bsf_sharing { bsf.min(known) } else { bsf };
        let shares = Arc::new(ShareLog::default());
        let hook = shares.clone();
        let exec = QueryExecution::stolen(index, ctx, &self.prep.batches[group], &work, start, self.exec_params(th, traversal_bound))
            .with_share_hook(move |v| hook.push(v));
        let n = &mut self.nodes[node];
        n.m.grants_received += 1;
        n.next_job += 1;
        let id = n.next_job;
        n.job = Some(Job {
            id,
            query,
            stolen: true,
            exec,
            phase: Phase::Traversal,
            cursors: vec![WorkerCursor::default(); self.cfg.workers_per_node],
            arrived: 0,
            shares,
            initial: start,
            th,
            phase_started: self.now,
            times: PhaseTimes::default(),
        });
        for worker in 0..self.cfg.workers_per_node {
            self.at(self.now, Ev::Work { node, job: id, worker });
        }
    }

    fn check_quiescent(&mut self, node: usize) {
        let n = &self.nodes[node];
        if n.quiescent_sent || !n.own_finished || n.job.is_some() || n.outstanding > 0 || n.shutdown {
            return;
        }
        if self.cfg.stealing && !self.victims(node).is_empty() {
            return;
        }
        self.nodes[node].quiescent_sent = true;
        self.send(node, COLLECTOR, Message::Quiescent);
    }

    fn check_complete(&mut self) {
        let c = &self.collector;
        if c.shutdown_sent || c.quiescent < self.cfg.n_nodes {
            return;
        }
        let complete = (0..c.answers.len())
            .all(|q| c.owner_answers[q] == self.cfg.k && c.partials[q] == c.expected_partials[q]);
        if !complete {
            return;
        }
        self.collector.shutdown_sent = true;
        self.broadcast(COLLECTOR, Message::Shutdown);
        let n = &mut self.nodes[COLLECTOR];
        n.shutdown = true;
        n.m.total_time = self.now as f64;
    }

    fn outcome(self) -> ClusterOutcome {
        let mut metrics = RunMetrics {
            transport: "simulated".into(),
            time_unit: "work".into(),
            messages: self.messages,
            nodes_done: self.nodes.iter().filter(|n| n.own_finished).count(),
            stored_series: self
                .nodes
                .iter()
                .map(|n| self.prep.indexes[n.group].data.len())
                .sum(),
            queries: self.stats,
            ..RunMetrics::default()
        };
        let first = self.nodes.iter().filter_map(|n| n.query_start).min().unwrap_or(0);
        let last = self.nodes.iter().map(|n| n.query_end).max().unwrap_or(0);
        metrics.makespan = last.saturating_sub(first) as f64;
        metrics.nodes = self
            .nodes
            .into_iter()
            .map(|n| {
                let mut m = n.m;
                m.query_time = n.query_end.saturating_sub(n.query_start.unwrap_or(n.query_end)) as f64;
                m
            })
            .collect();
        if self.cfg.audit {
            let mut audit = CoverageAudit::default();
            for rec in self.audit.values() {
                audit.executions += 1;
                audit.queues += rec.all.len();
                let mut claimed = rec.claimed.clone();
                claimed.sort_unstable();
                let before = claimed.len();
                claimed.dedup();
                audit.violations += before - claimed.len();
                let mut all = rec.all.clone();
                all.sort_unstable();
                audit.violations += all.iter().filter(|q| claimed.binary_search(q).is_err()).count();
                audit.violations += claimed.iter().filter(|q| all.binary_search(q).is_err()).count();
            }
            metrics.coverage = Some(audit);
        }
        metrics.finish();
        ClusterOutcome {
            answers: self.collector.answers,
            metrics,
            trace: self.trace,
        }
    }
}
