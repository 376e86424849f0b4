use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{inject_uniform_noise, Dataset, NoiseSpec};
use crate::error::{Error, Result};

/// Random disjoint partition into train / valid / test; the remainder after the
/// two fractions is the test set. Each part keeps the input order.
pub fn split(
    dataset: &Dataset,
    train_frac: f64,
    valid_frac: f64,
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset)> {
    if !(train_frac > 0.0 && valid_frac > 0.0) {
        return Err(Error::key("train-frac", "split fractions must be positive"));
    }
    if train_frac + valid_frac >= 1.0 {
        return Err(Error::key(
            "valid-frac",
            format!("train + valid fractions must be < 1 (got {})", train_frac + valid_frac),
        ));
    }
    let n = dataset.len();
    let n_train = (train_frac * n as f64).round() as usize;
    let n_valid = ((valid_frac * n as f64).round() as usize).min(n - n_train);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    // 0 = train, 1 = valid, 2 = test
    let mut part = vec![2u8; n];
    for &i in &order[..n_train] {
        part[i] = 0;
    }
    for &i in &order[n_train..n_train + n_valid] {
        part[i] = 1;
    }
    let pick = |p: u8| {
        dataset.with_samples(
            dataset
                .samples()
                .iter()
                .zip(&part)
                .filter(|(_, &q)| q == p)
                .map(|(s, _)| s.clone())
                .collect(),
        )
    };
    Ok((pick(0), pick(1), pick(2)))
}

/// How the validation set used for early stopping and filter acceptance is built.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum ValidMode {
    /// Validation labels carry the same noise ratio as training labels.
    Noisy,
    /// A small validation set whose labels are left clean.
    CleanSmall { count: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub valid_frac: f64,
    pub valid_mode: ValidMode,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_frac: 0.8,
            valid_frac: 0.1,
            valid_mode: ValidMode::Noisy,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub valid: Dataset,
    pub test: Dataset,
}

/// Splits a clean dataset and injects label noise: always into train, into
/// valid only in [`ValidMode::Noisy`], never into test. The validation set
/// uses a seed distinct from the training set so the two noises are independent.
pub fn prepare_splits(
    dataset: &Dataset,
    spec: &SplitSpec,
    noise: NoiseSpec,
    split_seed: u64,
) -> Result<Splits> {
    let (train, valid, test) = split(dataset, spec.train_frac, spec.valid_frac, split_seed)?;
    let train = inject_uniform_noise(&train, noise)?;
    let valid = match spec.valid_mode {
        ValidMode::Noisy => inject_uniform_noise(
            &valid,
            NoiseSpec {
                ratio: noise.ratio,
                seed: noise.seed ^ 0x5DEE_CE66_D1CE_4E5B,
            },
        )?,
        ValidMode::CleanSmall { count } => {
            if count == 0 || count > valid.len() {
                return Err(Error::key(
                    "clean-valid-count",
                    format!("must lie in 1..={} for this split", valid.len()),
                ));
            }
            valid.with_samples(valid.samples()[..count].to_vec())
        }
    };
    Ok(Splits { train, valid, test })
}
