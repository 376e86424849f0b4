use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netcore::Matrix;

/// One training example. `given_label = None` is the unlabeled state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: u64,
    pub features: Vec<f64>,
    pub given_label: Option<usize>,
    /// Hidden ground truth, only read by evaluation code.
    pub true_label: usize,
}

/// Ordered samples sharing a feature width and a class count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    samples: Vec<Sample>,
    classes: usize,
    dim: usize,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, classes: usize, dim: usize) -> Result<Self> {
        if classes == 0 {
            return Err(Error::Config("class count must be positive".into()));
        }
        let mut seen = HashSet::with_capacity(samples.len());
        for s in &samples {
            if !seen.insert(s.id) {
                return Err(Error::Input(format!("duplicate sample id {}", s.id)));
            }
            if s.features.len() != dim {
                return Err(Error::Input(format!(
                    "sample {} has {} features, expected {dim}",
                    s.id,
                    s.features.len()
                )));
            }
            if s.given_label.is_some_and(|l| l >= classes) || s.true_label >= classes {
                return Err(Error::Input(format!(
                    "sample {} has a label outside 0..{classes}",
                    s.id
                )));
            }
        }
        Ok(Dataset {
            samples,
            classes,
            dim,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn ids(&self) -> Vec<u64> {
        self.samples.iter().map(|s| s.id).collect()
    }

    pub fn labeled_ids(&self) -> Vec<u64> {
        self.samples
            .iter()
            .filter(|s| s.given_label.is_some())
            .map(|s| s.id)
            .collect()
    }

    pub fn labeled_count(&self) -> usize {
        self.samples.iter().filter(|s| s.given_label.is_some()).count()
    }

    pub fn index_map(&self) -> HashMap<u64, usize> {
        self.samples
            .iter()
            .enumerate()
            .map(|(i, s)| (s.id, i))
            .collect()
    }

    pub fn get(&self, id: u64) -> Option<&Sample> {
        self.samples.iter().find(|s| s.id == id)
    }

    /// All feature vectors as a `[N x d]` matrix.
    pub fn feature_matrix(&self) -> Matrix {
        let mut m = Matrix::zeros(self.samples.len(), self.dim);
        for (r, s) in self.samples.iter().enumerate() {
            m.row_mut(r).copy_from_slice(&s.features);
        }
        m
    }

    /// Same samples with the labels rewritten by `f`; features, ids and truth untouched.
    pub fn map_labels(&self, mut f: impl FnMut(&Sample) -> Option<usize>) -> Result<Dataset> {
        let samples = self
            .samples
            .iter()
            .map(|s| Sample {
                given_label: f(s),
                ..s.clone()
            })
            .collect();
        Dataset::new(samples, self.classes, self.dim)
    }

    /// Keeps only samples for which `keep` holds, preserving order.
    pub fn retain(&self, mut keep: impl FnMut(&Sample) -> bool) -> Dataset {
        Dataset {
            samples: self.samples.iter().filter(|s| keep(s)).cloned().collect(),
            classes: self.classes,
            dim: self.dim,
        }
    }

    pub(crate) fn with_samples(&self, samples: Vec<Sample>) -> Dataset {
        Dataset {
            samples,
            classes: self.classes,
            dim: self.dim,
        }
    }

    /// Fraction of labeled samples whose given label differs from the truth.
    pub fn label_noise_ratio(&self) -> Option<f64> {
        let labeled = self.labeled_count();
        if labeled == 0 {
            return None;
        }
        let wrong = self
            .samples
            .iter()
            .filter(|s| s.given_label.is_some_and(|l| l != s.true_label))
            .count();
        Some(wrong as f64 / labeled as f64)
    }
}
