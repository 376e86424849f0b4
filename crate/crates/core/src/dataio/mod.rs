//! Datasets with noisy or masked labels: generation, noise injection,
//! splitting, normalization, CSV persistence and batch scheduling.

mod batch;
mod csvio;
mod dataset;
mod noise;
mod normalize;
mod split;
mod synth;

pub use batch::{Batch, BatchPlan, BatchScheduler};
pub use csvio::{load_csv, parse_csv, save_csv, to_csv_string};
pub use dataset::{Dataset, Sample};
pub use noise::{inject_uniform_noise, NoiseSpec};
pub use normalize::{normalize, FeatureStats, STD_FLOOR};
pub use split::{prepare_splits, split, SplitSpec, Splits, ValidMode};
pub use synth::{
    class_direction, cluster_centers, make_gaussian_clusters, make_rings, ring_radius,
};
