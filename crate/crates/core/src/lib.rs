#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cluster;
pub mod distance;
pub mod error;
pub mod generate;
pub mod index;
pub mod io;
pub mod isax;
pub mod oracle;
pub mod partitioning;
pub mod predictor;
pub mod query;
pub mod rng;
pub mod scheduler;
pub mod series;
