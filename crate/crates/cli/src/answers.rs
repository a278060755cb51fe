use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use odyssey::query::Bsf;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerRow {
    pub query_id: u64,
    pub rank: usize,
    pub distance: f64,
    pub series_id: u64,
}

pub fn write_answers(path: &Path, answers: &[Bsf]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for (q, bsf) in answers.iter().enumerate() {
        for (rank, n) in bsf.neighbors.iter().enumerate() {
            w.serialize(AnswerRow {
                query_id: q as u64,
                rank: rank + 1,
                distance: n.distance,
                series_id: n.id,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_answers(path: &Path) -> Result<Vec<AnswerRow>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    r.deserialize().map(|row| row.map_err(Into::into)).collect()
}

/// Compares distances by (query, rank); ids may differ on ties.
pub fn compare_answers(got: &[AnswerRow], want: &[AnswerRow], tolerance: f64) -> Vec<String> {
    let mut out = Vec::new();
    if got.len() != want.len() {
        out.push(format!("{} rows against {} expected", got.len(), want.len()));
    }
    for (g, w) in got.iter().zip(want) {
        if (g.query_id, g.rank) != (w.query_id, w.rank) {
            out.push(format!("row order differs at query {} rank {}", w.query_id, w.rank));
            continue;
        }
        let scale = w.distance.abs().max(1e-12);
        if (g.distance - w.distance).abs() / scale > tolerance {
            out.push(format!("query {} rank {}: {} vs {}", w.query_id, w.rank, g.distance, w.distance));
        }
    }
    out
}
