//! Clustering, adjusted Rand index, synthetic data, and strategy benchmarks.

pub mod ari;
pub mod benchmark;
pub mod kmeans;
pub mod synthetic;

pub use ari::{adjusted_rand_index, ari_from_labels, LabeledClustering};
pub use benchmark::{run_benchmark, BenchmarkReport, BenchmarkRow, Strategy};
pub use kmeans::{kmeans, kmeans_cluster, KMeansResult};
pub use synthetic::{generate_synthetic, SpatialLayout, SyntheticSpec};
