//! Iterative label-noise filtering with a mean-teacher semi-supervised
//! learner, at desk scale.
//!
//! A small tanh MLP is trained on synthetic data with injected label noise.
//! A moving average of the teacher's per-sample predictions decides which
//! labels survive each filtering round; masked samples keep contributing
//! through the unsupervised term.

pub mod dataio;
mod error;
pub mod filtering;
pub mod harness;
pub mod losses;
pub mod meanteacher;
pub mod netcore;
pub mod snapshot;

pub use error::{Error, ErrorCategory, Result};

/// Derives an independent stream seed from a base seed (SplitMix64 finalizer).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
