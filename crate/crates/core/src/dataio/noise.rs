use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

/// Uniform label noise: a fixed fraction of labels flipped to another class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub ratio: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.ratio) {
            return Err(Error::key("noise-ratio", "ratio must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Flips exactly `round(ratio * N)` labels, chosen without replacement, each to a
/// uniformly drawn *different* class.
pub fn inject_uniform_noise(dataset: &Dataset, spec: NoiseSpec) -> Result<Dataset> {
    spec.validate()?;
    let n = dataset.len();
    let flips = (spec.ratio * n as f64).round() as usize;
    if flips == 0 {
        return Ok(dataset.clone());
    }
    let m = dataset.classes();
    if m < 2 {
        return Err(Error::Config("label noise needs at least two classes".into()));
    }
    if let Some(s) = dataset.samples().iter().find(|s| s.given_label.is_none()) {
        return Err(Error::Input(format!(
            "sample {} is unlabeled; noise is injected before any masking",
            s.id
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut chosen = index::sample(&mut rng, n, flips).into_vec();
    chosen.sort_unstable();
    let mut samples = dataset.samples().to_vec();
    for i in chosen {
        let Some(old) = samples[i].given_label else {
            unreachable!("checked above")
        };
        let r = rng.random_range(0..m - 1);
        samples[i].given_label = Some(if r >= old { r + 1 } else { r });
    }
    Ok(dataset.with_samples(samples))
}
