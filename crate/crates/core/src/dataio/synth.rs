use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Dataset, Sample};
use crate::error::{Error, Result};

/// Unit direction of class `k` among `m` classes in `d` dimensions.
///
/// With `m <= d` the directions are the centred vertices of a regular simplex
/// (pairwise equidistant); otherwise they are spread evenly on a circle in the
/// first two coordinates.
pub fn class_direction(k: usize, m: usize, d: usize) -> Vec<f64> {
    let mut u = vec![0.0; d];
    if m <= d {
        let norm = ((m - 1) as f64 / m as f64).sqrt();
        for (j, v) in u.iter_mut().enumerate().take(m) {
            let e = if j == k { 1.0 } else { 0.0 };
            *v = (e - 1.0 / m as f64) / norm;
        }
    } else {
        let angle = 2.0 * std::f64::consts::PI * k as f64 / m as f64;
        u[0] = angle.cos();
        u[1] = angle.sin();
    }
    u
}

/// Class centres `separation * u_k` used by [`make_gaussian_clusters`].
pub fn cluster_centers(m: usize, d: usize, separation: f64) -> Vec<Vec<f64>> {
    (0..m)
        .map(|k| {
            class_direction(k, m, d)
                .into_iter()
                .map(|v| v * separation)
                .collect()
        })
        .collect()
}

/// Isotropic Gaussian blobs, one per class, with clean labels.
pub fn make_gaussian_clusters(
    m: usize,
    n_per_class: usize,
    d: usize,
    separation: f64,
    noise_sigma: f64,
    seed: u64,
) -> Result<Dataset> {
    if m < 2 || d < 2 {
        return Err(Error::Config(format!(
            "gaussian clusters need at least 2 classes and 2 dimensions (got m={m}, d={d})"
        )));
    }
    if n_per_class == 0 {
        return Err(Error::Input("n_per_class = 0 yields an empty dataset".into()));
    }
    if !(noise_sigma >= 0.0 && separation.is_finite()) {
        return Err(Error::Config("sigma must be non-negative and separation finite".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = cluster_centers(m, d, separation);
    let mut samples = Vec::with_capacity(m * n_per_class);
    for (k, c) in centers.iter().enumerate() {
        for _ in 0..n_per_class {
            let features = c
                .iter()
                .map(|&ci| ci + noise_sigma * rng.sample::<f64, _>(StandardNormal))
                .collect();
            samples.push(Sample {
                id: samples.len() as u64,
                features,
                given_label: Some(k),
                true_label: k,
            });
        }
    }
    Dataset::new(samples, m, d)
}

/// Ring radius of class `k` in [`make_rings`].
pub fn ring_radius(k: usize, radius_gap: f64) -> f64 {
    (k + 1) as f64 * radius_gap
}

/// Concentric annuli in 2-D: class `k` sits at radius `(k + 1) * radius_gap`
/// with Gaussian radial spread.
pub fn make_rings(
    m: usize,
    n_per_class: usize,
    radius_gap: f64,
    noise_sigma: f64,
    seed: u64,
) -> Result<Dataset> {
    if m < 2 {
        return Err(Error::Config("rings need at least 2 classes".into()));
    }
    if n_per_class == 0 {
        return Err(Error::Input("n_per_class = 0 yields an empty dataset".into()));
    }
    if !(radius_gap > 0.0 && noise_sigma >= 0.0) {
        return Err(Error::Config("radius gap must be positive, sigma non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(m * n_per_class);
    for k in 0..m {
        let r0 = ring_radius(k, radius_gap);
        for _ in 0..n_per_class {
            let angle = rng.random_range(0.0..2.0 * std::f64::consts::PI);
            let r = r0 + noise_sigma * rng.sample::<f64, _>(StandardNormal);
            samples.push(Sample {
                id: samples.len() as u64,
                features: vec![r * angle.cos(), r * angle.sin()],
                given_label: Some(k),
                true_label: k,
            });
        }
    }
    Dataset::new(samples, m, 2)
}
