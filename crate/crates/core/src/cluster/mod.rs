//! Multi-node execution: chunk distribution, index build, scheduling,
//! query answering with BSF sharing and work stealing, answer merging.
//!
//! Two transports share the protocol: a deterministic discrete-event
//! simulation measured in work units, and real threads with channels.

mod message;
mod sim;
mod threaded;


use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::{build_summarization_buffers, partition_rs_batches, IndexConfig, NodeIndex, RsBatch, DEFAULT_LEAF_CAPACITY};
use crate::isax::DEFAULT_SEGMENTS;
use crate::partitioning::{
    density_aware_partition, equally_split, make_topology, ClusterTopology, PartitionMethod, PartitionPlan,
    DEFAULT_BALANCE_TOLERANCE, DEFAULT_LAMBDA,
};
use crate::predictor::{predict_time, LinearModel};
use crate::query::{Bsf, QueryContext, QueryStats, SearchMode, ThresholdModel, DEFAULT_HELP_TH};
use crate::scheduler::SchedulerPolicy;
use crate::series::Dataset;

pub use message::{Message, MessageKind, TraceEntry};
pub use sim::simulate;
pub use threaded::run_threaded;

/// Batches granted per steal request.
pub const DEFAULT_N_SEND: usize = 4;

/// Simulated costs, in the same units as point operations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub latency: u64,
    pub steal_backoff: u64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            latency: 2_000,
            steal_backoff: 5_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub n_nodes: usize,
    /// Replication groups; `n_nodes` means no replication, 1 full.
    pub k: usize,
    pub scheduler: SchedulerPolicy,
    pub partition: PartitionMethod,
    pub lambda: usize,
    pub balance_tolerance: f64,
    pub shuffle_seed: u64,
    pub workers_per_node: usize,
    /// Batches per node; defaults to the worker count.
    pub n_sb: Option<usize>,
    pub help_th: usize,
    pub n_send: usize,
    pub threshold: ThresholdModel,
    /// Maps an initial BSF to a cost estimate; the BSF itself when absent.
    pub time_model: Option<LinearModel>,
    pub bsf_sharing: bool,
    pub stealing: bool,
    pub mode: SearchMode,
    pub segments: usize,
    pub leaf_capacity: usize,
    /// Seeds the steal-victim choices.
    pub seed: u64,
    pub costs: CostModel,
    /// Record queue ownership for coverage checks.
    pub audit: bool,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            n_nodes: 1,
            k: 1,
            scheduler: SchedulerPolicy::Dynamic,
            partition: PartitionMethod::EquallySplit,
            lambda: DEFAULT_LAMBDA,
            balance_tolerance: DEFAULT_BALANCE_TOLERANCE,
            shuffle_seed: 0,
            workers_per_node: 1,
            n_sb: None,
            help_th: DEFAULT_HELP_TH,
            n_send: DEFAULT_N_SEND,
            threshold: ThresholdModel::default(),
            time_model: None,
            bsf_sharing: true,
            stealing: true,
            mode: SearchMode::nn(),
            segments: DEFAULT_SEGMENTS,
            leaf_capacity: DEFAULT_LEAF_CAPACITY,
            seed: 0,
            costs: CostModel::default(),
            audit: false,
        }
    }
}

impl ClusterConfig {
    pub fn n_sb(&self) -> usize {
        self.n_sb.unwrap_or(self.workers_per_node).max(1)
    }

    /// Reports every problem at once.
    pub fn validate(&self, series_len: usize) -> Result<()> {
        let mut problems = Vec::new();
        if let Err(Error::InvalidConfig(p)) = make_topology(self.n_nodes, self.k) {
            problems.extend(p);
        }
        if self.workers_per_node == 0 {
            problems.push("workers per node must be at least 1".into());
        }
        if self.n_send == 0 {
            problems.push("N_send must be at least 1".into());
        }
        if self.mode.k == 0 {
            problems.push("k-NN size must be at least 1".into());
        }
        if self.segments == 0 || self.segments > 16 {
            problems.push(format!("segment count {} outside 1..=16", self.segments));
        } else if !series_len.is_multiple_of(self.segments) {
            problems.push(format!("series length {series_len} not divisible by {} segments", self.segments));
        }
        if let crate::query::Metric::Dtw { window } = self.mode.metric {
            if window >= series_len {
                problems.push(format!("warping window {window} must be below the series length {series_len}"));
            }
        }
        if self.leaf_capacity == 0 {
            problems.push("leaf capacity must be at least 1".into());
        }
        if !(self.balance_tolerance >= 0.0) {
            problems.push("balance tolerance must be non-negative".into());
        }
        if let ThresholdModel::Sigmoid { divisor, .. } = self.threshold {
            if !(divisor >= 1.0) {
                problems.push("TH divisor must be at least 1".into());
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems))
        }
    }
}

/// Topology, plan and one index per distinct chunk.
#[derive(Debug)]
pub struct PreparedCluster {
    pub topology: ClusterTopology,
    pub plan: PartitionPlan,
    /// Indexed by replication group.
    pub indexes: Vec<Arc<NodeIndex>>,
    pub batches: Vec<Vec<RsBatch>>,
}

/// Plans the chunks and builds one index per replication group; nodes of a
/// group hold identical chunks and hence identical indexes.
pub fn prepare(config: &ClusterConfig, data: &Dataset) -> Result<PreparedCluster> {
    let (topology, plan) = plan_chunks(config, data)?;
    let index_config = index_config(config);
    let mut indexes = Vec::with_capacity(config.k);
    let mut batches = Vec::with_capacity(config.k);
    for chunk in &plan.chunks {
        let index = NodeIndex::build(data.subset(chunk), chunk.clone(), &index_config)?;
        batches.push(partition_rs_batches(&index.tree, config.n_sb())?);
        indexes.push(Arc::new(index));
    }
    Ok(PreparedCluster {
        topology,
        plan,
        indexes,
        batches,
    })
}

pub(crate) fn index_config(config: &ClusterConfig) -> IndexConfig {
    IndexConfig {
        segments: config.segments,
        leaf_capacity: config.leaf_capacity,
        n_workers: config.workers_per_node,
    }
}

/// Validates the configuration and decides which series each group holds.
pub fn plan_chunks(config: &ClusterConfig, data: &Dataset) -> Result<(ClusterTopology, PartitionPlan)> {
    config.validate(data.series_len())?;
    let topology = make_topology(config.n_nodes, config.k)?;
    let plan = match config.partition {
        PartitionMethod::EquallySplit => equally_split(data.len(), config.k, None)?,
        PartitionMethod::EquallySplitShuffled => equally_split(data.len(), config.k, Some(config.shuffle_seed))?,
        PartitionMethod::DensityAware => {
            let buffers = build_summarization_buffers(data, config.segments, config.workers_per_node)?;
            density_aware_partition(&buffers, config.k, config.lambda, config.balance_tolerance)?
        }
    };
    Ok((topology, plan))
}

pub(crate) fn query_contexts(config: &ClusterConfig, queries: &Dataset) -> Result<Vec<QueryContext>> {
    queries
        .iter()
        .map(|q| QueryContext::new(q, config.segments, config.mode))
        .collect()
}

pub(crate) fn estimate(config: &ClusterConfig, initial_bsf: f64) -> f64 {
    let x = if initial_bsf.is_finite() { initial_bsf } else { f64::MAX.sqrt() };
    config.time_model.as_ref().map_or(x, |m| predict_time(m, x))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NodeMetrics {
    pub node: usize,
    pub group: usize,
    pub buffer_time: f64,
    pub tree_time: f64,
    pub index_time: f64,
    pub query_time: f64,
    pub total_time: f64,
    pub queries_answered: usize,
    pub steal_requests_sent: u64,
    pub grants_received: u64,
    pub grants_issued: u64,
    pub stolen_queues_processed: u64,
    pub max_outstanding_steal_requests: u32,
    /// Messages received or sent after this node saw SHUTDOWN.
    pub late_messages: u64,
    pub sent_done: u32,
}

/// Queue ownership audit over all (group, query) executions.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CoverageAudit {
    pub executions: usize,
    pub queues: usize,
    /// Queues processed twice or never.
    pub violations: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub transport: String,
    pub time_unit: String,
    pub nodes: Vec<NodeMetrics>,
    pub buffer_time: f64,
    pub tree_time: f64,
    pub index_time: f64,
    pub query_time: f64,
    pub total_time: f64,
    /// First query start to last node finishing query work.
    pub makespan: f64,
    pub messages: BTreeMap<String, u64>,
    pub steal_requests: u64,
    pub steal_grants: u64,
    pub stolen_queues: u64,
    pub nodes_done: usize,
    pub late_messages: u64,
    pub coverage: Option<CoverageAudit>,
    pub stored_series: usize,
    pub queries: Vec<QueryStats>,
}

impl RunMetrics {
    pub(crate) fn finish(&mut self) {
        let max = |f: fn(&NodeMetrics) -> f64| self.nodes.iter().map(f).fold(0.0, f64::max);
        self.buffer_time = max(|n| n.buffer_time);
        self.tree_time = max(|n| n.tree_time);
        self.index_time = max(|n| n.index_time);
        self.query_time = max(|n| n.query_time);
        self.total_time = max(|n| n.total_time);
        self.steal_requests = self.nodes.iter().map(|n| n.steal_requests_sent).sum();
        self.steal_grants = self.nodes.iter().map(|n| n.grants_issued).sum();
        self.stolen_queues = self.nodes.iter().map(|n| n.stolen_queues_processed).sum();
        self.late_messages = self.nodes.iter().map(|n| n.late_messages).sum();
        self.queries.sort_by_key(|q| q.query_id);
    }

    pub fn message_count(&self, kind: MessageKind) -> u64 {
        self.messages.get(kind.name()).copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone)]
pub struct ClusterOutcome {
    /// Merged answer per query position.
    pub answers: Vec<Bsf>,
    pub metrics: RunMetrics,
    pub trace: Vec<TraceEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transport {
    Simulated,
    Threads,
}

/// Plans, builds and answers `queries` over `data`.
pub fn run_cluster(config: &ClusterConfig, data: &Dataset, queries: &Dataset, transport: Transport) -> Result<ClusterOutcome> {
    if queries.series_len() != data.series_len() && !queries.is_empty() {
        return Err(Error::invalid("queries and data differ in series length"));
    }
    match transport {
        Transport::Simulated => {
            let prepared = prepare(config, data)?;
            simulate(config, &prepared, queries)
        }
        Transport::Threads => {
            config.validate(data.series_len())?;
            run_threaded(config, Arc::new(data.clone()), queries)
        }
    }
}
