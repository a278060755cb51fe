//! Exact similarity search over one node's index.

mod answer;
mod approx;
mod bsf;
mod context;
mod exec;
mod threshold;

pub use answer::{answer_query, initial_state, run_phases, PhaseTimes, QueryOutcome, QueryParams, QueryStats};
pub use approx::{approx_search, ApproxResult};
pub use bsf::{Bsf, Neighbor};
pub use context::{Metric, QueryContext, SearchMode};
pub use exec::{
    ExecCounters, ExecParams, LeafEntry, LeafQueue, QueryExecution, ShareLog, StolenWork, WorkerCursor, DEFAULT_HELP_TH,
};
pub use threshold::{threshold_for_query, ThresholdModel, DEFAULT_TH_DIVISOR, TH_FLOOR};

#[cfg(test)]
mod tests;
