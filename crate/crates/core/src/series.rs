//! Data series and in-memory collections of them.

use crate::error::{Error, Result};

/// Population standard deviation below which a series is treated as constant.
pub const FLAT_STD: f64 = 1e-12;

/// A collection of equal-length series stored back to back.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    series_len: usize,
    values: Vec<f64>,
}

impl Dataset {
    pub fn new(series_len: usize, values: Vec<f64>) -> Result<Self> {
        if series_len == 0 {
            return Err(Error::invalid("series length must be positive"));
        }
        if !values.len().is_multiple_of(series_len) {
            return Err(Error::invalid(format!(
                "{} values do not split into series of length {series_len}",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite value in series {}",
                pos / series_len
            )));
        }
        Ok(Self { series_len, values })
    }

    pub fn empty(series_len: usize) -> Result<Self> {
        Self::new(series_len, Vec::new())
    }

    pub fn from_series<S: AsRef<[f64]>>(series: &[S]) -> Result<Self> {
        let Some(first) = series.first() else {
            return Err(Error::invalid("no series given"));
        };
        let len = first.as_ref().len();
        let mut values = Vec::with_capacity(len * series.len());
        for (i, s) in series.iter().enumerate() {
            let s = s.as_ref();
            if s.len() != len {
                return Err(Error::invalid(format!(
                    "series {i} has length {} but the collection uses {len}",
                    s.len()
                )));
            }
            values.extend_from_slice(s);
        }
        Self::new(len, values)
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.series_len
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn series_len(&self) -> usize {
        self.series_len
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.values[i * self.series_len..(i + 1) * self.series_len]
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.values.chunks_exact(self.series_len)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn push(&mut self, series: &[f64]) -> Result<()> {
        if series.len() != self.series_len {
            return Err(Error::invalid(format!(
                "series has length {} but the collection uses {}",
                series.len(),
                self.series_len
            )));
        }
        if series.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite value"));
        }
        self.values.extend_from_slice(series);
        Ok(())
    }

    /// Copies the series with the given positions, in the given order.
    pub fn subset(&self, ids: &[u64]) -> Dataset {
        let mut values = Vec::with_capacity(ids.len() * self.series_len);
        for &id in ids {
            values.extend_from_slice(self.get(id as usize));
        }
        Dataset {
            series_len: self.series_len,
            values,
        }
    }

    pub fn z_normalized(&self) -> Result<Dataset> {
        let mut values = Vec::with_capacity(self.values.len());
        for s in self.iter() {
            values.extend(z_normalize(s)?);
        }
        Ok(Dataset {
            series_len: self.series_len,
            values,
        })
    }
}

/// Rescales to zero mean and unit population standard deviation. A series
/// whose standard deviation is below [`FLAT_STD`] maps to all zeros.
pub fn z_normalize(series: &[f64]) -> Result<Vec<f64>> {
    if series.len() < 2 {
        return Err(Error::invalid(format!(
            "z-normalization needs at least 2 points, got {}",
            series.len()
        )));
    }
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let var = series.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < FLAT_STD {
        return Ok(vec![0.0; series.len()]);
    }
    Ok(series.iter().map(|v| (v - mean) / std).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::PortableRng;

    #[test]
    fn constant_series_normalizes_to_zeros() {
        assert_eq!(z_normalize(&[5.0, 5.0, 5.0, 5.0]).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn two_points_become_minus_one_one() {
        assert_eq!(z_normalize(&[0.0, 2.0]).unwrap(), vec![-1.0, 1.0]);
    }

    #[test]
    fn short_series_rejected() {
        assert!(z_normalize(&[]).is_err());
        assert!(z_normalize(&[1.0]).is_err());
    }

    #[test]
    fn random_series_has_zero_mean_unit_std() {
        let mut rng = PortableRng::new(11, 0);
        for len in [2usize, 3, 17, 256] {
            let s: Vec<f64> = (0..len).map(|_| rng.next_normal() * 7.0 + 3.0).collect();
            let z = z_normalize(&s).unwrap();
            let n = len as f64;
            let mean = z.iter().sum::<f64>() / n;
            let std = (z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            assert!(mean.abs() < 1e-9);
            assert!((std - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn dataset_rejects_ragged_and_non_finite() {
        assert!(Dataset::from_series(&[vec![1.0, 2.0], vec![1.0]]).is_err());
        assert!(Dataset::new(2, vec![1.0, f64::NAN]).is_err());
        assert!(Dataset::new(2, vec![1.0, 2.0, 3.0]).is_err());
        let d = Dataset::from_series(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.get(1), &[3.0, 4.0]);
        assert_eq!(d.subset(&[1, 0]).get(0), &[3.0, 4.0]);
    }
}
