use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use odyssey::cluster::{plan_chunks, run_cluster, ClusterConfig, RunMetrics, Transport};
use odyssey::generate::{random_walks, warmup_queries};
use odyssey::index::{partition_rs_batches, IndexConfig, NodeIndex};
use odyssey::io::{read_dataset, write_dataset};
use odyssey::oracle::brute_force;
use odyssey::partitioning::PartitionMethod;
use odyssey::predictor::{collect_samples, PredictorModels};
use odyssey::query::{Bsf, Metric, QueryContext, SearchMode, ThresholdModel, DEFAULT_TH_DIVISOR};
use odyssey::scheduler::SchedulerPolicy;
use odyssey::series::Dataset;

mod answers;

use answers::{compare_answers, read_answers, write_answers};

#[derive(Parser)]
#[command(name = "odyssey", version, about = "Distributed exact similarity search over data series")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a random-walk dataset, or perturbed copies of an existing one.
    Generate(GenerateArgs),
    /// Fit the cost and queue-size models from warm-up queries.
    Calibrate(CalibrateArgs),
    /// Show how the data would be split across replication groups.
    BuildPlan(BuildPlanArgs),
    /// Answer a query file on a cluster and write answers and metrics.
    Run(RunArgs),
    /// Answer a query file by linear scan.
    Oracle(OracleArgs),
    /// Summarize a metrics file, optionally diffing two answer files.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    count: usize,
    /// Series length; taken from `--from` when given.
    #[arg(long, required_unless_present = "from")]
    length: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Perturb series picked from this dataset instead of generating walks.
    #[arg(long)]
    from: Option<PathBuf>,
    /// Noise level for `--from`; mixed levels when absent.
    #[arg(long)]
    noise: Option<f64>,
    /// Z-normalize every series.
    #[arg(long)]
    normalize: bool,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct IndexArgs {
    #[arg(long, default_value_t = 16)]
    segments: usize,
    #[arg(long, default_value_t = 2000)]
    leaf_capacity: usize,
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    data: PathBuf,
    /// Warm-up queries; drawn from the data when absent.
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    warmup: usize,
    #[arg(long, default_value = "1nn")]
    mode: String,
    #[command(flatten)]
    index: IndexArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct TopologyArgs {
    #[arg(long, default_value_t = 1)]
    nodes: usize,
    /// Replication groups: 1 is full replication, `nodes` is none.
    #[arg(long, default_value_t = 1)]
    k: usize,
    #[arg(long, default_value = "equally-split")]
    partition: PartitionMethod,
    #[arg(long, default_value_t = odyssey::partitioning::DEFAULT_LAMBDA)]
    lambda: usize,
}

#[derive(Args)]
struct BuildPlanArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    topology: TopologyArgs,
    #[command(flatten)]
    index: IndexArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TransportArg {
    Simulated,
    Threads,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[command(flatten)]
    topology: TopologyArgs,
    #[arg(long, default_value = "dynamic")]
    scheduler: SchedulerPolicy,
    #[arg(long, default_value_t = odyssey::cluster::DEFAULT_N_SEND)]
    n_send: usize,
    #[arg(long, default_value_t = odyssey::query::DEFAULT_HELP_TH)]
    help_th: usize,
    /// Divides the sigmoid queue-size estimate to get TH.
    #[arg(long, default_value_t = DEFAULT_TH_DIVISOR)]
    th_divisor: f64,
    /// Fixed TH; overrides the calibrated model.
    #[arg(long)]
    th: Option<usize>,
    /// Batches per node; the worker count when absent.
    #[arg(long)]
    n_sb: Option<usize>,
    #[arg(long, default_value = "1nn")]
    mode: String,
    #[command(flatten)]
    index: IndexArgs,
    /// Calibrated models; calibration runs first when absent.
    #[arg(long)]
    models: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    warmup: usize,
    #[arg(long)]
    no_stealing: bool,
    #[arg(long)]
    no_sharing: bool,
    #[arg(long, value_enum, default_value = "simulated")]
    transport: TransportArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    answers: PathBuf,
    #[arg(long)]
    metrics: PathBuf,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long, default_value = "1nn")]
    mode: String,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    metrics: Option<PathBuf>,
    #[arg(long, requires = "expected")]
    answers: Option<PathBuf>,
    #[arg(long, requires = "answers")]
    expected: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-6)]
    tolerance: f64,
}

/// What `run` writes to the metrics file.
#[derive(Serialize, Deserialize)]
struct MetricsFile {
    config: ClusterConfig,
    models: Option<PredictorModels>,
    metrics: RunMetrics,
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Generate(a) => generate(a),
        Command::Calibrate(a) => calibrate(a),
        Command::BuildPlan(a) => build_plan(a),
        Command::Run(a) => run(a),
        Command::Oracle(a) => oracle(a),
        Command::Report(a) => return report(a),
    }?;
    Ok(ExitCode::SUCCESS)
}

/// ODYSSEY_SEED replaces any seed given on the command line.
fn seed(flag: u64) -> Result<u64> {
    match std::env::var("ODYSSEY_SEED") {
        Ok(v) => v.trim().parse().with_context(|| format!("ODYSSEY_SEED={v:?} is not an unsigned integer")),
        Err(_) => Ok(flag),
    }
}

/// `1nn`, `knn:K`, `dtw:R` with R in points or `dtw:P%` of the length.
fn parse_mode(text: &str, series_len: usize) -> Result<SearchMode> {
    let text = text.trim().to_ascii_lowercase();
    if text == "1nn" {
        return Ok(SearchMode::nn());
    }
    if let Some(k) = text.strip_prefix("knn:") {
        return Ok(SearchMode::knn(k.parse().with_context(|| format!("bad k in mode {text:?}"))?));
    }
    if let Some(r) = text.strip_prefix("dtw:") {
        let window = match r.strip_suffix('%') {
            Some(p) => {
                let p: f64 = p.parse().with_context(|| format!("bad percentage in mode {text:?}"))?;
                (p / 100.0 * series_len as f64).round() as usize
            }
            None => r.parse().with_context(|| format!("bad window in mode {text:?}"))?,
        };
        return Ok(SearchMode::dtw(window));
    }
    bail!("unknown mode {text:?}; expected 1nn, knn:K or dtw:R")
}

fn load(path: &Path) -> Result<Dataset> {
    read_dataset(path).with_context(|| format!("reading {}", path.display()))
}

fn generate(a: GenerateArgs) -> Result<()> {
    if a.count == 0 || a.length == Some(0) {
        bail!("count and length must both be at least 1");
    }
    let seed = seed(a.seed)?;
    let mut data = match &a.from {
        None => random_walks(a.count, a.length.expect("required without --from"), seed),
        Some(path) => {
            let source = load(path)?;
            if a.length.is_some_and(|l| l != source.series_len()) {
                bail!("--length {} does not match the source length {}", a.length.unwrap(), source.series_len());
            }
            match a.noise {
                Some(noise) => odyssey::generate::perturbed_copies(&source, a.count, noise, seed),
                None => warmup_queries(&source, a.count, seed),
            }
        }
    };
    if a.normalize {
        data = data.z_normalized()?;
    }
    write_dataset(&data, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    println!("wrote {} series of length {} to {}", data.len(), data.series_len(), a.out.display());
    Ok(())
}

fn index_config(a: &IndexArgs) -> IndexConfig {
    IndexConfig {
        segments: a.segments,
        leaf_capacity: a.leaf_capacity,
        n_workers: a.workers,
    }
}

fn calibrate_models(data: &Dataset, warmups: &Dataset, mode: SearchMode, index: &IndexArgs, seed: u64) -> Result<PredictorModels> {
    let index_cfg = index_config(index);
    let node = NodeIndex::build_full(data.clone(), &index_cfg)?;
    let batches = partition_rs_batches(&node.tree, index.workers)?;
    let contexts = warmups
        .iter()
        .map(|q| QueryContext::new(q, index.segments, mode))
        .collect::<odyssey::error::Result<Vec<_>>>()?;
    let samples = collect_samples(&node, &batches, &contexts);
    Ok(PredictorModels::calibrate(&samples, seed))
}

fn warmup_set(data: &Dataset, path: Option<&Path>, count: usize, seed: u64) -> Result<Dataset> {
    match path {
        Some(p) => {
            let q = load(p)?;
            let ids: Vec<u64> = (0..q.len().min(count) as u64).collect();
            Ok(q.subset(&ids))
        }
        None => Ok(warmup_queries(data, count, seed)),
    }
}

fn calibrate(a: CalibrateArgs) -> Result<()> {
    let seed = seed(a.seed)?;
    let data = load(&a.data)?;
    let mode = parse_mode(&a.mode, data.series_len())?;
    let warmups = warmup_set(&data, a.queries.as_deref(), a.warmup, seed)?;
    let models = calibrate_models(&data, &warmups, mode, &a.index, seed)?;
    std::fs::write(&a.out, serde_json::to_string_pretty(&models)?)?;
    println!(
        "time model: slope {:.4} intercept {:.4} r2 {:.3}{}",
        models.time.slope,
        models.time.intercept,
        models.time.r2,
        if models.time_fitted { "" } else { " (fallback)" }
    );
    let p = models.pq_size;
    println!(
        "queue-size model: m {:.2} M {:.2} b {:.2} c {:.4} d {:.4}{}",
        p.m,
        p.big_m,
        p.b,
        p.c,
        p.d,
        if models.pq_size_fitted { "" } else { " (fallback)" }
    );
    Ok(())
}

#[derive(Serialize)]
struct PlanReport {
    nodes: usize,
    k: usize,
    method: String,
    chunk_sizes: Vec<usize>,
    groups: Vec<Vec<usize>>,
    stored_series: usize,
}

fn build_plan(a: BuildPlanArgs) -> Result<()> {
    let data = load(&a.data)?;
    let config = ClusterConfig {
        n_nodes: a.topology.nodes,
        k: a.topology.k,
        partition: a.topology.partition,
        lambda: a.topology.lambda,
        shuffle_seed: seed(a.seed)?,
        segments: a.index.segments,
        leaf_capacity: a.index.leaf_capacity,
        workers_per_node: a.index.workers,
        ..ClusterConfig::default()
    };
    let (topology, plan) = plan_chunks(&config, &data)?;
    let sizes = plan.chunk_sizes();
    let report = PlanReport {
        nodes: topology.n_nodes,
        k: topology.k,
        method: plan.method.to_string(),
        stored_series: (0..topology.n_nodes).map(|n| sizes[topology.group_of(n)]).sum(),
        chunk_sizes: sizes,
        groups: topology.groups.clone(),
    };
    for (g, (size, members)) in report.chunk_sizes.iter().zip(&report.groups).enumerate() {
        println!("group {g}: {size} series on nodes {members:?}");
    }
    println!("stored series: {}", report.stored_series);
    if let Some(out) = a.out {
        std::fs::write(&out, serde_json::to_string_pretty(&plan)?)?;
    }
    Ok(())
}

fn run(a: RunArgs) -> Result<()> {
    let seed = seed(a.seed)?;
    let data = load(&a.data)?;
    let queries = load(&a.queries)?;
    let mode = parse_mode(&a.mode, data.series_len())?;
    let mut config = ClusterConfig {
        n_nodes: a.topology.nodes,
        k: a.topology.k,
        scheduler: a.scheduler,
        partition: a.topology.partition,
        lambda: a.topology.lambda,
        shuffle_seed: seed,
        workers_per_node: a.index.workers,
        n_sb: a.n_sb,
        help_th: a.help_th,
        n_send: a.n_send,
        bsf_sharing: !a.no_sharing,
        stealing: !a.no_stealing,
        mode,
        segments: a.index.segments,
        leaf_capacity: a.index.leaf_capacity,
        seed,
        audit: true,
        ..ClusterConfig::default()
    };
    if a.th_divisor < 1.0 {
        bail!("TH divisor must be at least 1");
    }
    config.validate(data.series_len())?;
    let models = match (&a.models, a.th) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            Some(serde_json::from_str::<PredictorModels>(&text)?)
        }
        (None, Some(_)) if !a.scheduler.uses_estimates() => None,
        (None, _) => {
            let warmups = warmup_set(&data, None, a.warmup, seed)?;
            Some(calibrate_models(&data, &warmups, mode, &a.index, seed)?)
        }
    };
    if let Some(m) = &models {
        config.time_model = m.time_fitted.then_some(m.time);
        config.threshold = m.threshold_model(a.th_divisor);
    }
    if let Some(th) = a.th {
        config.threshold = ThresholdModel::Fixed { th };
    }
    let transport = match a.transport {
        TransportArg::Simulated => Transport::Simulated,
        TransportArg::Threads => Transport::Threads,
    };
    let outcome = run_cluster(&config, &data, &queries, transport)?;
    write_answers(&a.answers, &outcome.answers)?;
    let file = MetricsFile {
        config,
        models,
        metrics: outcome.metrics,
    };
    std::fs::write(&a.metrics, serde_json::to_string_pretty(&file)?)?;
    print_summary(&file.metrics);
    Ok(())
}

fn oracle(a: OracleArgs) -> Result<()> {
    let data = load(&a.data)?;
    let queries = load(&a.queries)?;
    let mode = parse_mode(&a.mode, data.series_len())?;
    if let Metric::Dtw { window } = mode.metric {
        if window >= data.series_len() {
            bail!("warping window {window} must be below the series length {}", data.series_len());
        }
    }
    let answers = queries
        .iter()
        .map(|q| brute_force(&data, q, mode))
        .collect::<odyssey::error::Result<Vec<Bsf>>>()?;
    write_answers(&a.out, &answers)?;
    println!("answered {} queries by linear scan", answers.len());
    Ok(())
}

fn print_summary(m: &RunMetrics) {
    println!("transport {} ({})", m.transport, m.time_unit);
    println!(
        "index {:.3}  query {:.3}  total {:.3}  makespan {:.3}",
        m.index_time, m.query_time, m.total_time, m.makespan
    );
    println!(
        "steal requests {}  grants {}  stolen queues {}  late messages {}",
        m.steal_requests, m.steal_grants, m.stolen_queues, m.late_messages
    );
    for (kind, count) in &m.messages {
        println!("  {kind:<14} {count}");
    }
    if let Some(c) = &m.coverage {
        println!("queue coverage: {} executions, {} queues, {} violations", c.executions, c.queues, c.violations);
    }
}

fn report(a: ReportArgs) -> Result<ExitCode> {
    if let Some(path) = &a.metrics {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let file: MetricsFile = serde_json::from_str(&text)?;
        println!(
            "{} nodes, k={}, scheduler {}, partition {}",
            file.config.n_nodes, file.config.k, file.config.scheduler, file.config.partition
        );
        print_summary(&file.metrics);
        for n in &file.metrics.nodes {
            println!(
                "  node {:>3} group {:>3}: index {:.3} query {:.3} answered {} stolen queues {}",
                n.node, n.group, n.index_time, n.query_time, n.queries_answered, n.stolen_queues_processed
            );
        }
    }
    if let (Some(got), Some(want)) = (&a.answers, &a.expected) {
        let mismatches = compare_answers(&read_answers(got)?, &read_answers(want)?, a.tolerance);
        if mismatches.is_empty() {
            println!("answers match within {}", a.tolerance);
        } else {
            for m in mismatches.iter().take(20) {
                println!("mismatch: {m}");
            }
            println!("{} mismatching rows", mismatches.len());
            return Ok(ExitCode::from(2));
        }
    }
    Ok(ExitCode::SUCCESS)
}
