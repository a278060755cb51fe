//! Linear-scan answers used to check the index.

use crate::distance::{dtw_distance, euclidean_distance};
use crate::error::Result;
use crate::query::{Bsf, Metric, SearchMode};
use crate::series::Dataset;

/// Exact k nearest neighbours of `query` by scanning `data` in order; ids
/// are positions. Ties keep the earliest position.
pub fn brute_force(data: &Dataset, query: &[f64], mode: SearchMode) -> Result<Bsf> {
    let mut bsf = Bsf::new(mode.k);
    for (i, s) in data.iter().enumerate() {
        let d = match mode.metric {
            Metric::Euclidean => euclidean_distance(query, s)?,
            Metric::Dtw { window } => dtw_distance(query, s, window)?,
        };
        bsf.offer(d, i as u64);
    }
    Ok(bsf)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_closest_series_and_orders_knn() {
        let data = Dataset::from_series(&[vec![0.0, 0.0], vec![3.0, 4.0], vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let nn = brute_force(&data, &[0.9, 0.0], SearchMode::nn()).unwrap();
        assert_eq!(nn.best().unwrap().id, 2);
        let knn = brute_force(&data, &[0.0, 0.0], SearchMode::knn(3)).unwrap();
        let ids: Vec<u64> = knn.neighbors.iter().map(|n| n.id).collect();
        assert_eq!(ids, vec![0, 2, 3]);
        let short = brute_force(&data, &[0.0, 0.0], SearchMode::knn(10)).unwrap();
        assert_eq!(short.neighbors.len(), 4);
    }
}
