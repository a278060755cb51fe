//! WebAssembly bindings for the demo page in `www/`. Results cross the
//! boundary as JSON strings.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use odyssey::cluster::{prepare, simulate, ClusterConfig, PreparedCluster};
use odyssey::generate::{normalized_random_walks, perturbed_copies, warmup_queries};
use odyssey::query::{QueryStats, SearchMode};
use odyssey::scheduler::{build_schedule, Schedule, SchedulerPolicy};
use odyssey::series::Dataset;

fn text(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn js(r: Result<String, String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e))
}

#[derive(Serialize)]
struct SearchResult {
    query: Vec<f64>,
    neighbors: Vec<NeighborView>,
    stats: QueryStats,
}

#[derive(Serialize)]
struct NeighborView {
    id: u64,
    distance: f64,
    values: Vec<f64>,
}

#[derive(Serialize)]
struct ClusterView {
    makespan: f64,
    messages: std::collections::BTreeMap<String, u64>,
    steal_grants: u64,
    stolen_queues: u64,
    stored_series: usize,
    node_query_time: Vec<f64>,
    node_answered: Vec<usize>,
}

#[wasm_bindgen]
pub struct Demo {
    data: Dataset,
    single: PreparedCluster,
    single_config: ClusterConfig,
}

#[wasm_bindgen]
impl Demo {
    /// Random-walk dataset indexed on one simulated node.
    #[wasm_bindgen(constructor)]
    pub fn new(count: usize, length: usize, seed: u64) -> Result<Demo, JsError> {
        Self::build(count, length, seed).map_err(|e| JsError::new(&e))
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Exact k-NN (`window` absent) or DTW 1-NN for a noisy copy of a
    /// random series.
    pub fn search(&self, query_seed: u64, noise: f64, k: usize, window: Option<usize>) -> Result<String, JsError> {
        js(self.search_json(query_seed, noise, k, window))
    }

    /// Answers `n_queries` mixed-difficulty queries on a simulated cluster.
    pub fn cluster(&self, nodes: usize, k: usize, scheduler: &str, stealing: bool, sharing: bool, n_queries: usize) -> Result<String, JsError> {
        js(self.cluster_json(nodes, k, scheduler, stealing, sharing, n_queries))
    }
}

impl Demo {
    fn build(count: usize, length: usize, seed: u64) -> Result<Demo, String> {
        if count == 0 || length < 16 || !length.is_multiple_of(16) {
            return Err("need at least one series and a length that is a positive multiple of 16".into());
        }
        let data = normalized_random_walks(count, length, seed);
        let single_config = ClusterConfig {
            leaf_capacity: 100,
            n_sb: Some(4),
            ..ClusterConfig::default()
        };
        let single = prepare(&single_config, &data).map_err(text)?;
        Ok(Demo {
            data,
            single,
            single_config,
        })
    }

    fn search_json(&self, query_seed: u64, noise: f64, k: usize, window: Option<usize>) -> Result<String, String> {
        let mode = match window {
            Some(w) => SearchMode::dtw(w),
            None => SearchMode::knn(k.max(1)),
        };
        let config = ClusterConfig {
            mode,
            ..self.single_config.clone()
        };
        config.validate(self.data.series_len()).map_err(text)?;
        let queries = perturbed_copies(&self.data, 1, noise, query_seed).z_normalized().map_err(text)?;
        let out = simulate(&config, &self.single, &queries).map_err(text)?;
        let neighbors = out.answers[0]
            .neighbors
            .iter()
            .map(|n| NeighborView {
                id: n.id,
                distance: n.distance,
                values: self.data.get(n.id as usize).to_vec(),
            })
            .collect();
        let result = SearchResult {
            query: queries.get(0).to_vec(),
            neighbors,
            stats: out.metrics.queries[0].clone(),
        };
        serde_json::to_string(&result).map_err(text)
    }

    fn cluster_json(&self, nodes: usize, k: usize, scheduler: &str, stealing: bool, sharing: bool, n_queries: usize) -> Result<String, String> {
        let config = ClusterConfig {
            n_nodes: nodes,
            k,
            scheduler: scheduler.parse().map_err(text)?,
            stealing,
            bsf_sharing: sharing,
            n_sb: Some(16),
            leaf_capacity: 100,
            ..ClusterConfig::default()
        };
        let prepared = prepare(&config, &self.data).map_err(text)?;
        let queries = warmup_queries(&self.data, n_queries, 7).z_normalized().map_err(text)?;
        let out = simulate(&config, &prepared, &queries).map_err(text)?;
        let m = out.metrics;
        let view = ClusterView {
            makespan: m.makespan,
            steal_grants: m.steal_grants,
            stolen_queues: m.stolen_queues,
            stored_series: m.stored_series,
            node_query_time: m.nodes.iter().map(|n| n.query_time).collect(),
            node_answered: m.nodes.iter().map(|n| n.queries_answered).collect(),
            messages: m.messages,
        };
        serde_json::to_string(&view).map_err(text)
    }
}

/// Splits queries with the given cost estimates over `nodes`; dynamic
/// policies return the dispatch order.
#[wasm_bindgen]
pub fn schedule(estimates: Vec<f64>, nodes: usize, policy: &str) -> Result<String, JsError> {
    js(schedule_json(estimates, nodes, policy))
}

fn schedule_json(estimates: Vec<f64>, nodes: usize, policy: &str) -> Result<String, String> {
    let policy: SchedulerPolicy = policy.parse().map_err(text)?;
    let ids: Vec<u64> = (1..=estimates.len() as u64).collect();
    let est = policy.uses_estimates().then_some(estimates.as_slice());
    let value = match build_schedule(policy, &ids, est, nodes).map_err(text)? {
        Schedule::Static(lists) => serde_json::json!({ "kind": "static", "nodes": lists }),
        Schedule::Dynamic(order) => serde_json::json!({ "kind": "dynamic", "order": order }),
    };
    Ok(value.to_string())
}
