use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

/// Standard deviations below this are treated as a constant column.
pub const STD_FLOOR: f64 = 1e-8;

/// Per-feature mean and (population) standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureStats {
    pub fn fit(dataset: &Dataset) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::Input("cannot normalize an empty dataset".into()));
        }
        let n = dataset.len() as f64;
        let d = dataset.dim();
        let mut mean = vec![0.0; d];
        for s in dataset.samples() {
            for (m, x) in mean.iter_mut().zip(&s.features) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for s in dataset.samples() {
            for ((v, x), m) in var.iter_mut().zip(&s.features).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let std = var.into_iter().map(|v| (v / n).sqrt()).collect();
        Ok(FeatureStats { mean, std })
    }

    /// Standardizes `dataset` with these statistics; constant columns map to zero.
    pub fn apply(&self, dataset: &Dataset) -> Result<Dataset> {
        if self.mean.len() != dataset.dim() {
            return Err(Error::Input("statistics width differs from dataset".into()));
        }
        let samples = dataset
            .samples()
            .iter()
            .map(|s| {
                let mut s = s.clone();
                for ((x, m), sd) in s.features.iter_mut().zip(&self.mean).zip(&self.std) {
                    *x = if *sd < STD_FLOOR { 0.0 } else { (*x - m) / sd };
                }
                s
            })
            .collect();
        Ok(dataset.with_samples(samples))
    }
}

/// Standardizes a dataset with its own statistics.
pub fn normalize(dataset: &Dataset) -> Result<(Dataset, FeatureStats)> {
    let stats = FeatureStats::fit(dataset)?;
    Ok((stats.apply(dataset)?, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{make_gaussian_clusters, Sample};

    #[test]
    fn constant_column_becomes_zero() {
        let samples = (0..5)
            .map(|i| Sample {
                id: i,
                features: vec![0.1, i as f64],
                given_label: Some(0),
                true_label: 0,
            })
            .collect();
        let d = Dataset::new(samples, 2, 2).unwrap();
        let (out, _) = normalize(&d).unwrap();
        assert!(out.samples().iter().all(|s| s.features[0] == 0.0));
    }

    #[test]
    fn output_is_standardized_and_idempotent() {
        let d = make_gaussian_clusters(3, 100, 3, 4.0, 2.0, 5).unwrap();
        let (once, _) = normalize(&d).unwrap();
        let stats = FeatureStats::fit(&once).unwrap();
        for (m, s) in stats.mean.iter().zip(&stats.std) {
            assert!(m.abs() < 1e-12);
            assert!((s - 1.0).abs() < 1e-12);
        }
        let (twice, _) = normalize(&once).unwrap();
        for (a, b) in once.samples().iter().zip(twice.samples()) {
            for (x, y) in a.features.iter().zip(&b.features) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
