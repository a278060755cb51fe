//! The protocol over real threads: one manager thread and one executor per
//! node, crossbeam channels as links. Times are wall-clock seconds.

use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, Receiver, RecvTimeoutError, Sender};

use crate::error::{Error, Result};
use crate::index::{partition_rs_batches, NodeIndex, RsBatch};
use crate::partitioning::{ClusterTopology, PartitionPlan};
use crate::query::{
    initial_state, run_phases, Bsf, ExecParams, PhaseTimes, QueryContext, QueryExecution, QueryStats, StolenWork,
};
use crate::rng::PortableRng;
use crate::scheduler::{build_schedule, Schedule};
use crate::series::Dataset;

use super::message::{Message, TraceEntry};
use super::{
    estimate, index_config, plan_chunks, query_contexts, ClusterConfig, ClusterOutcome, CoverageAudit, NodeMetrics,
    RunMetrics,
};

const COLLECTOR: usize = 0;
const POLL: Duration = Duration::from_millis(20);

enum Envelope {
    Net { from: usize, msg: Message },
    Local(Local),
}

enum Local {
    IndexBuilt,
    Estimates(Vec<f64>),
    Finished(Box<Finished>),
    Failed(Error),
}

struct Finished {
    query: u64,
    stolen: bool,
    answer: Bsf,
    stats: Option<QueryStats>,
    all: Vec<(usize, usize)>,
    claimed: Vec<(usize, usize)>,
}

enum Task {
    Build(Arc<Vec<u64>>),
    Estimate(Vec<u64>),
    Own { query: u64, known: f64 },
    Stolen { query: u64, bsf: f64, traversal_bound: f64, th: usize, work: StolenWork },
}

struct Net {
    senders: Vec<Sender<Envelope>>,
    shutdown: Vec<AtomicBool>,
    late: Vec<AtomicU64>,
    counts: Mutex<std::collections::BTreeMap<String, u64>>,
    trace: Mutex<Vec<TraceEntry>>,
    abort: AtomicBool,
    start: Instant,
}

impl Net {
    fn send(&self, from: usize, to: usize, msg: Message) {
        if self.shutdown[from].load(Ordering::Acquire) {
            self.late[from].fetch_add(1, Ordering::Relaxed);
        }
        if from != to {
            let time = self.start.elapsed().as_micros() as u64;
            *self.counts.lock().unwrap().entry(msg.kind().name().to_string()).or_default() += 1;
            self.trace.lock().unwrap().push(TraceEntry::of(time, from, to, &msg));
        }
        if self.senders[to].send(Envelope::Net { from, msg }).is_err() {
            self.late[to].fetch_add(1, Ordering::Relaxed);
        }
    }

    fn broadcast(&self, from: usize, msg: &Message) {
        for to in 0..self.senders.len() {
            if to != from {
                self.send(from, to, msg.clone());
            }
        }
    }

    fn local(&self, node: usize, event: Local) {
        let _ = self.senders[node].send(Envelope::Local(event));
    }
}

struct Active<'s> {
    query: u64,
    stolen: bool,
    th: usize,
    exec: QueryExecution<'s>,
}

/// What the share hook of a running query needs.
#[derive(Clone, Copy)]
struct Sharing<'d> {
    id: usize,
    cfg: &'d ClusterConfig,
    net: &'d Net,
    bookkeeping: &'d [AtomicU64],
}

#[derive(Clone, Copy)]
struct Env<'s, 'd> {
    id: usize,
    cfg: &'d ClusterConfig,
    net: &'d Net,
    data: &'d Dataset,
    ctxs: &'d [QueryContext],
    topology: &'d ClusterTopology,
    plan: &'d PartitionPlan,
    index: &'d OnceLock<NodeIndex>,
    batches: &'d OnceLock<Vec<RsBatch>>,
    sharing: Sharing<'d>,
    slot: &'s Mutex<Option<Arc<Active<'d>>>>,
}

impl Env<'_, '_> {
    fn known(&self, query: u64) -> f64 {
        self.sharing.known(query)
    }

    fn learn(&self, query: u64, value: f64) {
        self.sharing.learn(query, value);
    }

    fn share(&self, query: u64, value: f64) {
        self.sharing.share(query, value);
    }
}

impl Sharing<'_> {
    fn known(&self, query: u64) -> f64 {
        f64::from_bits(self.bookkeeping[query as usize].load(Ordering::Acquire))
    }

    fn learn(&self, query: u64, value: f64) {
        // non-negative floats order like their bit patterns
        self.bookkeeping[query as usize].fetch_min(value.to_bits(), Ordering::AcqRel);
    }

    fn share(&self, query: u64, value: f64) {
        self.learn(query, value);
        if self.cfg.bsf_sharing {
            self.net.broadcast(self.id, &Message::BsfShare { query, value });
        }
    }
}

/// Claimed and stolen queue ranges per (group, query).
type Coverage = (Vec<(usize, usize)>, Vec<(usize, usize)>);

#[derive(Default)]
struct NodeResult {
    metrics: NodeMetrics,
    stats: Vec<QueryStats>,
    audit: Vec<((usize, u64), Coverage)>,
    answers: Option<Vec<Bsf>>,
    query_start: Option<Instant>,
    query_end: Option<Instant>,
}

/// Runs the protocol with every node on its own threads. Each node builds
/// its own index from the chunk it is sent.
pub fn run_threaded(config: &ClusterConfig, data: Arc<Dataset>, queries: &Dataset) -> Result<ClusterOutcome> {
    let ctxs = query_contexts(config, queries)?;
    let (topology, plan) = plan_chunks(config, &data)?;
    let n = config.n_nodes;
    let (senders, receivers): (Vec<_>, Vec<_>) = (0..n).map(|_| unbounded()).unzip();
    let net = Net {
        senders,
        shutdown: (0..n).map(|_| AtomicBool::new(false)).collect(),
        late: (0..n).map(|_| AtomicU64::new(0)).collect(),
        counts: Mutex::default(),
        trace: Mutex::default(),
        abort: AtomicBool::new(false),
        start: Instant::now(),
    };
    let indexes: Vec<OnceLock<NodeIndex>> = (0..n).map(|_| OnceLock::new()).collect();
    let batches: Vec<OnceLock<Vec<RsBatch>>> = (0..n).map(|_| OnceLock::new()).collect();
    let bookkeeping: Vec<Vec<AtomicU64>> = (0..n)
        .map(|_| (0..ctxs.len()).map(|_| AtomicU64::new(f64::INFINITY.to_bits())).collect())
        .collect();
    let slots: Vec<Mutex<Option<Arc<Active<'_>>>>> = (0..n).map(|_| Mutex::new(None)).collect();

    let results: Vec<Result<NodeResult>> = std::thread::scope(|s| {
        let handles: Vec<_> = receivers
            .into_iter()
            .enumerate()
            .map(|(id, inbox)| {
                let env = Env {
                    id,
                    cfg: config,
                    net: &net,
                    data: &data,
                    ctxs: &ctxs,
                    topology: &topology,
                    plan: &plan,
                    index: &indexes[id],
                    batches: &batches[id],
                    sharing: Sharing {
                        id,
                        cfg: config,
                        net: &net,
                        bookkeeping: &bookkeeping[id],
                    },
                    slot: &slots[id],
                };
                let (task_tx, task_rx) = unbounded();
                s.spawn(move || executor(env, task_rx));
                s.spawn(move || {
                    let result = Node::new(env, task_tx).run(inbox);
                    if result.is_err() {
                        env.net.abort.store(true, Ordering::Release);
                    }
                    result
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("node thread panicked")).collect()
    });
    drop(slots);

    let mut nodes = Vec::with_capacity(n);
    for r in results {
        nodes.push(r?);
    }
    let mut metrics = RunMetrics {
        transport: "threads".into(),
        time_unit: "s".into(),
        messages: net.counts.into_inner().unwrap(),
        nodes_done: nodes.iter().filter(|r| r.metrics.sent_done > 0).count(),
        stored_series: (0..n).map(|id| plan.chunks[topology.group_of(id)].len()).sum(),
        ..RunMetrics::default()
    };
    let first = nodes.iter().filter_map(|r| r.query_start).min();
    let last = nodes.iter().filter_map(|r| r.query_end).max();
    if let (Some(a), Some(b)) = (first, last) {
        metrics.makespan = b.saturating_duration_since(a).as_secs_f64();
    }
    let mut audit: HashMap<(usize, u64), Coverage> = HashMap::new();
    let mut answers = Vec::new();
    for (id, r) in nodes.into_iter().enumerate() {
        let mut m = r.metrics;
        m.late_messages += net.late[id].load(Ordering::Relaxed);
        metrics.nodes.push(m);
        metrics.queries.extend(r.stats);
        for (key, (all, claimed)) in r.audit {
            let entry = audit.entry(key).or_default();
            entry.0.extend(all);
            entry.1.extend(claimed);
        }
        if let Some(a) = r.answers {
            answers = a;
        }
    }
    if config.audit {
        let mut cov = CoverageAudit::default();
        for (mut all, mut claimed) in audit.into_values() {
            cov.executions += 1;
            cov.queues += all.len();
            all.sort_unstable();
            claimed.sort_unstable();
            let before = claimed.len();
            claimed.dedup();
            cov.violations += before - claimed.len();
            cov.violations += all.iter().filter(|q| claimed.binary_search(q).is_err()).count();
            cov.violations += claimed.iter().filter(|q| all.binary_search(q).is_err()).count();
        }
        metrics.coverage = Some(cov);
    }
    metrics.finish();
    let mut trace = net.trace.into_inner().unwrap();
    trace.sort_by_key(|t| t.time);
    Ok(ClusterOutcome { answers, metrics, trace })
}

fn executor(env: Env<'_, '_>, tasks: Receiver<Task>) {
    let w = env.cfg.workers_per_node;
    for task in tasks {
        match task {
            Task::Build(ids) => {
                let built = NodeIndex::build(env.data.subset(&ids), ids.to_vec(), &index_config(env.cfg))
                    .and_then(|index| Ok((partition_rs_batches(&index.tree, env.cfg.n_sb())?, index)));
                match built {
                    Ok((b, index)) => {
                        let _ = env.batches.set(b);
                        let _ = env.index.set(index);
                        env.net.local(env.id, Local::IndexBuilt);
                    }
                    Err(e) => env.net.local(env.id, Local::Failed(e)),
                }
            }
            Task::Estimate(queries) => {
                let index = env.index.get().expect("estimating before the index exists");
                let est = queries
                    .iter()
                    .map(|&q| estimate(env.cfg, initial_state(&env.ctxs[q as usize], index, None).1))
                    .collect();
                env.net.local(env.id, Local::Estimates(est));
            }
            Task::Own { query, known } => {
                let started = Instant::now();
                let index = env.index.get().expect("querying before the index exists");
                let ctx = &env.ctxs[query as usize];
                let override_bsf = (env.cfg.bsf_sharing && known.is_finite()).then_some(known);
                let (candidates, initial, _) = initial_state(ctx, index, override_bsf);
                let approx = started.elapsed().as_secs_f64() * 1e6;
                let th = env.cfg.threshold.threshold(initial);
                let params = ExecParams {
                    th,
                    help_th: env.cfg.help_th,
                    traversal_bound: initial,
                    early_cutoff: true,
                };
                let sharing = env.sharing;
                let exec = QueryExecution::new(index, ctx, env.batches.get().unwrap(), candidates, params)
                    .with_share_hook(move |v| sharing.share(query, v));
                let local = exec.bsf().value();
                if local < known {
                    env.share(query, local);
                }
                let active = Arc::new(Active {
                    query,
                    stolen: false,
                    th,
                    exec,
                });
                *env.slot.lock().unwrap() = Some(active.clone());
                let (traversal, preprocess, processing) = run_phases(&active.exec, w);
                env.slot.lock().unwrap().take();
                let exec = &active.exec;
                let answer = exec.bsf();
                let times = PhaseTimes {
                    approx,
                    traversal,
                    preprocess,
                    processing,
                };
                let finished = Finished {
                    query,
                    stolen: false,
                    stats: Some(QueryStats::new(query, initial, &answer, th, "us", times, exec.counters())),
                    answer,
                    all: exec.queues().unwrap_or_default().iter().map(|q| (q.batch, q.ordinal)).collect(),
                    claimed: exec.claimed_queues(),
                };
                env.net.local(env.id, Local::Finished(Box::new(finished)));
            }
            Task::Stolen {
                query,
                bsf,
                traversal_bound,
                th,
                work,
            } => {
                let index = env.index.get().expect("stealing before the index exists");
                let ctx = &env.ctxs[query as usize];
                let start = if env.cfg.bsf_sharing { bsf.min(env.known(query)) } else { bsf };
                let params = ExecParams {
                    th,
                    help_th: env.cfg.help_th,
                    traversal_bound,
                    early_cutoff: true,
                };
                let sharing = env.sharing;
                let exec = QueryExecution::stolen(index, ctx, env.batches.get().unwrap(), &work, start, params)
                    .with_share_hook(move |v| sharing.share(query, v));
                let active = Arc::new(Active {
                    query,
                    stolen: true,
                    th,
                    exec,
                });
                *env.slot.lock().unwrap() = Some(active.clone());
                run_phases(&active.exec, w);
                env.slot.lock().unwrap().take();
                let finished = Finished {
                    query,
                    stolen: true,
                    stats: None,
                    answer: active.exec.bsf(),
                    all: Vec::new(),
                    claimed: active.exec.claimed_queues(),
                };
                env.net.local(env.id, Local::Finished(Box::new(finished)));
            }
        }
    }
}

struct Collector {
    answers: Vec<Bsf>,
    owner_answers: Vec<usize>,
    expected_partials: Vec<u64>,
    partials: Vec<u64>,
    quiescent: usize,
}

struct Node<'s, 'd> {
    env: Env<'s, 'd>,
    tasks: Sender<Task>,
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
    busy: bool,
    done_nodes: Vec<bool>,
    outstanding: u32,
    retry_at: Option<Instant>,
    quiescent_sent: bool,
    shutdown: bool,
    grants: HashMap<u64, u32>,
    rng: PortableRng,
    collector: Option<Collector>,
    result: NodeResult,
}

impl<'s, 'd> Node<'s, 'd> {
    fn new(env: Env<'s, 'd>, tasks: Sender<Task>) -> Self {
        let group = env.topology.group_of(env.id);
        let q = env.ctxs.len();
        let collector = (env.id == COLLECTOR).then(|| Collector {
            answers: vec![Bsf::new(env.cfg.mode.k); q],
            owner_answers: vec![0; q],
            expected_partials: vec![0; q],
            partials: vec![0; q],
            quiescent: 0,
        });
        Self {
            env,
            tasks,
            group,
            is_group_coordinator: env.topology.group_coordinators[group] == env.id,
            index_ready: false,
            batch: None,
            schedule_started: false,
            dispatch: None,
            pending_requests: Vec::new(),
            own_queue: VecDeque::new(),
            assigned: false,
            awaiting_assign: false,
            own_finished: false,
            busy: false,
            done_nodes: vec![false; env.cfg.n_nodes],
            outstanding: 0,
            retry_at: None,
            quiescent_sent: false,
            shutdown: false,
            grants: HashMap::new(),
            rng: PortableRng::new(env.cfg.seed, env.id as u64),
            collector,
            result: NodeResult {
                metrics: NodeMetrics {
                    node: env.id,
                    group,
                    ..NodeMetrics::default()
                },
                ..NodeResult::default()
            },
        }
    }

    fn send(&self, to: usize, msg: Message) {
        self.env.net.send(self.env.id, to, msg);
    }

    fn run(mut self, inbox: Receiver<Envelope>) -> Result<NodeResult> {
        if self.env.id == COLLECTOR {
            for node in 0..self.env.cfg.n_nodes {
                let ids = Arc::new(self.env.plan.chunks[self.env.topology.group_of(node)].clone());
                self.send(node, Message::AssignChunk { ids });
            }
            let all: Vec<u64> = (0..self.env.ctxs.len() as u64).collect();
            for &coord in &self.env.topology.group_coordinators {
                self.send(coord, Message::QueryBatch { queries: all.clone() });
            }
        }
        while !self.shutdown {
            if self.env.net.abort.load(Ordering::Acquire) {
                return Err(Error::Runtime(format!("node {} stopped after a failure elsewhere", self.env.id)));
            }
            let wait = self
                .retry_at
                .map_or(POLL, |t| t.saturating_duration_since(Instant::now()).min(POLL));
            match inbox.recv_timeout(wait) {
                Ok(Envelope::Net { from, msg }) => self.deliver(from, msg),
                Ok(Envelope::Local(event)) => self.local(event)?,
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => break,
            }
            if self.retry_at.is_some_and(|t| Instant::now() >= t) {
                self.retry_at = None;
                self.steal_loop();
            }
        }
        drop(self.tasks);
        // whatever is still queued arrived after SHUTDOWN
        self.result.metrics.late_messages += inbox.try_iter().filter(|e| matches!(e, Envelope::Net { .. })).count() as u64;
        self.result.answers = self.collector.map(|c| c.answers);
        Ok(self.result)
    }

    fn local(&mut self, event: Local) -> Result<()> {
        match event {
            Local::Failed(e) => return Err(e),
            Local::IndexBuilt => {
                let build = self.env.index.get().unwrap().build;
                let m = &mut self.result.metrics;
                m.buffer_time = build.buffer_secs;
                m.tree_time = build.tree_secs;
                m.index_time = build.buffer_secs + build.tree_secs;
                self.index_ready = true;
                if self.is_group_coordinator {
                    self.try_schedule();
                } else {
                    self.start_next();
                }
            }
            Local::Estimates(est) => self.schedule(Some(&est))?,
            Local::Finished(f) => self.finished(*f),
        }
        Ok(())
    }

    fn deliver(&mut self, from: usize, msg: Message) {
        match msg {
            Message::AssignChunk { ids } => {
                let _ = self.tasks.send(Task::Build(ids));
            }
            Message::QueryBatch { queries } => {
                self.batch = Some(queries);
                self.try_schedule();
            }
            Message::RequestQuery => self.serve_request(from),
            Message::AssignQuery { queries } => {
                if self.env.cfg.scheduler.is_dynamic() {
                    self.awaiting_assign = false;
                    if queries.is_empty() {
                        self.finish_own();
                        return;
                    }
                }
                self.assigned = true;
                self.own_queue.extend(queries);
                self.start_next();
            }
            Message::BsfShare { query, value } => {
                self.env.learn(query, value);
                if let Some(a) = self.env.slot.lock().unwrap().as_ref() {
                    if a.query == query {
                        a.exec.tighten(value);
                    }
                }
            }
            Message::Done => {
                self.done_nodes[from] = true;
                self.check_quiescent();
            }
            Message::StealRequest => self.handle_steal_request(from),
            Message::StealGrant {
                query,
                bsf,
                traversal_bound,
                th,
                work,
            } => {
                self.outstanding -= 1;
                if work.is_empty() {
                    self.retry_at = Some(Instant::now() + Duration::from_micros(self.env.cfg.costs.steal_backoff));
                    return;
                }
                self.result.metrics.grants_received += 1;
                self.busy = true;
                let _ = self.tasks.send(Task::Stolen {
                    query,
                    bsf,
                    traversal_bound,
                    th,
                    work,
                });
            }
            Message::LocalAnswer {
                query,
                answer,
                stolen,
                grants,
            } => {
                let c = self.collector.as_mut().expect("answer sent to a non-collector");
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
                self.collector.as_mut().expect("quiescence sent to a non-collector").quiescent += 1;
                self.check_complete();
            }
            Message::Shutdown => self.enter_shutdown(),
        }
    }

    fn enter_shutdown(&mut self) {
        self.shutdown = true;
        self.env.net.shutdown[self.env.id].store(true, Ordering::Release);
        self.result.metrics.total_time = self.env.net.start.elapsed().as_secs_f64();
        if let (Some(a), Some(b)) = (self.result.query_start, self.result.query_end) {
            self.result.metrics.query_time = b.saturating_duration_since(a).as_secs_f64();
        }
    }

    fn try_schedule(&mut self) {
        if !self.index_ready || self.batch.is_none() || self.schedule_started {
            return;
        }
        self.schedule_started = true;
        if self.env.cfg.scheduler.uses_estimates() {
            let _ = self.tasks.send(Task::Estimate(self.batch.clone().unwrap()));
        } else {
            self.schedule(None).expect("scheduling without estimates cannot fail");
        }
    }

    fn schedule(&mut self, estimates: Option<&[f64]>) -> Result<()> {
        let members = &self.env.topology.groups[self.group];
        let ids = self.batch.clone().unwrap_or_default();
        match build_schedule(self.env.cfg.scheduler, &ids, estimates, members.len())? {
            Schedule::Static(lists) => {
                for (&member, list) in members.iter().zip(lists) {
                    self.send(member, Message::AssignQuery { queries: list });
                }
            }
            Schedule::Dynamic(order) => {
                self.dispatch = Some(order);
                for requester in std::mem::take(&mut self.pending_requests) {
                    self.serve_request(requester);
                }
                self.start_next();
            }
        }
        Ok(())
    }

    fn serve_request(&mut self, requester: usize) {
        match &mut self.dispatch {
            Some(queue) => {
                let queries = queue.pop_front().into_iter().collect();
                self.send(requester, Message::AssignQuery { queries });
            }
            None => self.pending_requests.push(requester),
        }
    }

    fn start_next(&mut self) {
        if self.busy || self.own_finished || !self.index_ready {
            return;
        }
        if let Some(q) = self.own_queue.pop_front() {
            self.start_query(q);
            return;
        }
        if !self.env.cfg.scheduler.is_dynamic() {
            if self.assigned {
                self.finish_own();
            }
            return;
        }
        if self.is_group_coordinator {
            let Some(queue) = &mut self.dispatch else { return };
            match queue.pop_front() {
                Some(q) => self.start_query(q),
                None => self.finish_own(),
            }
        } else if !self.awaiting_assign {
            self.awaiting_assign = true;
            self.send(self.env.topology.group_coordinators[self.group], Message::RequestQuery);
        }
    }

    fn start_query(&mut self, query: u64) {
        self.busy = true;
        self.result.query_start.get_or_insert_with(Instant::now);
        let _ = self.tasks.send(Task::Own {
            query,
            known: self.env.known(query),
        });
    }

    fn finished(&mut self, f: Finished) {
        self.busy = false;
        self.result.query_end = Some(Instant::now());
        if self.env.cfg.audit {
            self.result.audit.push(((self.group, f.query), (f.all, f.claimed.clone())));
        }
        if f.stolen {
            self.result.metrics.stolen_queues_processed += f.claimed.len() as u64;
            self.send(
                COLLECTOR,
                Message::LocalAnswer {
                    query: f.query,
                    answer: f.answer,
                    stolen: true,
                    grants: 0,
                },
            );
            self.steal_loop();
        } else {
            self.result.metrics.queries_answered += 1;
            self.result.stats.extend(f.stats);
            let grants = self.grants.get(&f.query).copied().unwrap_or(0);
            self.send(
                COLLECTOR,
                Message::LocalAnswer {
                    query: f.query,
                    answer: f.answer,
                    stolen: false,
                    grants,
                },
            );
            self.start_next();
        }
    }

    fn finish_own(&mut self) {
        if self.own_finished {
            return;
        }
        self.own_finished = true;
        self.done_nodes[self.env.id] = true;
        self.result.metrics.sent_done += 1;
        let now = Instant::now();
        self.result.query_start.get_or_insert(now);
        self.result.query_end.get_or_insert(now);
        self.env.net.broadcast(self.env.id, &Message::Done);
        self.steal_loop();
    }

    fn victims(&self) -> Vec<usize> {
        self.env.topology.groups[self.group]
            .iter()
            .copied()
            .filter(|&m| m != self.env.id && !self.done_nodes[m])
            .collect()
    }

    fn steal_loop(&mut self) {
        if !self.env.cfg.stealing
            || self.shutdown
            || self.busy
            || self.outstanding > 0
            || self.retry_at.is_some()
            || !self.own_finished
        {
            self.check_quiescent();
            return;
        }
        let victims = self.victims();
        if victims.is_empty() {
            self.check_quiescent();
            return;
        }
        let pick = self.rng.below(victims.len() as u64) as usize;
        self.outstanding += 1;
        let m = &mut self.result.metrics;
        m.steal_requests_sent += 1;
        m.max_outstanding_steal_requests = m.max_outstanding_steal_requests.max(self.outstanding);
        self.send(victims[pick], Message::StealRequest);
    }

    fn handle_steal_request(&mut self, thief: usize) {
        let grant = {
            let slot = self.env.slot.lock().unwrap();
            match slot.as_ref() {
                Some(a) if !a.stolen => {
                    let work = a.exec.grant(self.env.cfg.n_send);
                    if !work.is_empty() {
                        *self.grants.entry(a.query).or_default() += 1;
                        self.result.metrics.grants_issued += 1;
                    }
                    Message::StealGrant {
                        query: a.query,
                        bsf: a.exec.threshold(),
                        traversal_bound: a.exec.params().traversal_bound,
                        th: a.th,
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
            }
        };
        self.send(thief, grant);
    }

    fn check_quiescent(&mut self) {
        if self.quiescent_sent || !self.own_finished || self.busy || self.outstanding > 0 || self.shutdown {
            return;
        }
        if self.env.cfg.stealing && !self.victims().is_empty() {
            return;
        }
        self.quiescent_sent = true;
        self.send(COLLECTOR, Message::Quiescent);
    }

    fn check_complete(&mut self) {
        let Some(c) = &self.collector else { return };
        if self.shutdown || c.quiescent < self.env.cfg.n_nodes {
            return;
        }
        let k = self.env.cfg.k;
        let complete = (0..c.answers.len()).all(|q| c.owner_answers[q] == k && c.partials[q] == c.expected_partials[q]);
        if complete {
            self.env.net.broadcast(self.env.id, &Message::Shutdown);
            self.enter_shutdown();
        }
    }
}
