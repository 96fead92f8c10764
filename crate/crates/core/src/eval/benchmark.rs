//! Strategy comparison: raw, diffusion-only, attention-PCA fusion, and the
//! full hybrid model, scored by k-means ARI against ground truth.

use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::ari::{adjusted_rand_index, LabeledClustering};
use super::kmeans::kmeans_cluster;
use crate::attention::{fuse, landmark_rows, spatial_features};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::pipeline::{fit, prepare, PipelineConfig};

pub const KMEANS_RESTARTS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    Raw,
    DiffusionOnly,
    AttentionPcaFusion,
    FullHybrid,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Raw,
        Strategy::DiffusionOnly,
        Strategy::AttentionPcaFusion,
        Strategy::FullHybrid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Raw => "raw",
            Strategy::DiffusionOnly => "diffusion-only",
            Strategy::AttentionPcaFusion => "attention-pca-fusion",
            Strategy::FullHybrid => "full-hybrid",
        }
    }

    fn needs_model(self) -> bool {
        matches!(self, Strategy::AttentionPcaFusion | Strategy::FullHybrid)
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| {
                Error::param(
                    "strategies",
                    format!("unknown strategy `{s}` (expected raw, diffusion-only, attention-pca-fusion, full-hybrid)"),
                )
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkRow {
    pub strategy: Strategy,
    pub seed: u64,
    pub ari: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct BenchmarkReport {
    pub rows: Vec<BenchmarkRow>,
    pub strategies: Vec<Strategy>,
    pub seeds: Vec<u64>,
    /// JSON rendering of the configuration the run used.
    pub config: String,
}

impl BenchmarkReport {
    pub fn rows_for(&self, strategy: Strategy) -> impl Iterator<Item = &BenchmarkRow> {
        self.rows.iter().filter(move |r| r.strategy == strategy)
    }

    pub fn mean_ari(&self, strategy: Strategy) -> Option<f64> {
        let v: Vec<f64> = self.rows_for(strategy).map(|r| r.ari).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn mean_seconds(&self, strategy: Strategy) -> Option<f64> {
        let v: Vec<f64> = self.rows_for(strategy).map(|r| r.seconds).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("strategy,seed,ari,seconds\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{:.6}", r.strategy.name(), r.seed, r.ari, r.seconds);
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let _ = writeln!(out, "# Benchmark\n\nSeeds: {}\n", seeds.join(", "));
        out.push_str("| strategy | mean ARI | min ARI | max ARI | mean seconds |\n");
        out.push_str("|---|---|---|---|---|\n");
        for &s in &self.strategies {
            let aris: Vec<f64> = self.rows_for(s).map(|r| r.ari).collect();
            let min = aris.iter().copied().fold(f64::INFINITY, f64::min);
            let max = aris.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let _ = writeln!(
                out,
                "| {} | {:.4} | {:.4} | {:.4} | {:.3} |",
                s.name(),
                self.mean_ari(s).unwrap_or(f64::NAN),
                min,
                max,
                self.mean_seconds(s).unwrap_or(f64::NAN)
            );
        }
        out.push_str(
            "\nSeconds include the shared preprocessing, diffusion, and training stages each strategy depends on. \
             An attention-UMAP baseline is not included.\n",
        );
        let _ = writeln!(out, "\nConfiguration:\n\n```json\n{}\n```", self.config);
        out
    }
}

fn ari_of(features: &Array2<f64>, truth: &LabeledClustering, seed: u64) -> Result<f64> {
    let clusters = kmeans_cluster(features.view(), truth.k(), seed, KMEANS_RESTARTS)?;
    adjusted_rand_index(&clusters.clustering, truth)
}

/// Runs every strategy for every seed. The seed drives model initialization,
/// masking, shuffling, and k-means. Preprocessing and diffusion do not depend
/// on the seed and are computed once; their time is charged to every row.
pub fn run_benchmark(
    dataset: &Dataset,
    strategies: &[Strategy],
    cfg: &PipelineConfig,
    seeds: &[u64],
) -> Result<BenchmarkReport> {
    if strategies.is_empty() {
        return Err(Error::param("strategies", "at least one strategy is required"));
    }
    if seeds.is_empty() {
        return Err(Error::param("seeds", "at least one seed is required"));
    }
    let labels = dataset.labels.as_ref().ok_or(Error::MissingLabels)?;
    let truth = LabeledClustering::from_values(labels);
    let mut strategies = strategies.to_vec();
    strategies.sort();
    strategies.dedup();

    let prepared = prepare(dataset, cfg)?;
    let x_d = prepared.x_d.to_dense_array();
    let x_magic = prepared.x_magic().to_dense_array();
    let pre_s = prepared.timings.preprocess;
    let diff_s = prepared.timings.diffusion;

    let mut rows = Vec::new();
    for &seed in seeds {
        let mut seed_cfg = cfg.clone();
        seed_cfg.training.seed = seed;
        let model = if strategies.iter().any(|s| s.needs_model()) {
            Some(fit(&prepared, &seed_cfg)?)
        } else {
            None
        };
        for &strategy in &strategies {
            let start = Instant::now();
            let (features, shared) = match strategy {
                Strategy::Raw => (x_d.clone(), pre_s),
                Strategy::DiffusionOnly => (x_magic.clone(), pre_s + diff_s),
                Strategy::AttentionPcaFusion => {
                    let (trained, _, train_s) = model.as_ref().expect("model fitted");
                    let s = prepared.coords_std.values().mapv(|v| v as f32);
                    let t = &seed_cfg.training;
                    let keys = landmark_rows(s.nrows(), t.attention.landmarks, t.seed);
                    let h = spatial_features(s.view(), &trained.attention, keys.as_deref(), t.attention.query_block)?;
                    let fused = fuse(x_d.view(), h.mapv(f64::from).view())?;
                    (fused.matrix, pre_s + diff_s + train_s)
                }
                Strategy::FullHybrid => {
                    let (_, ckpt, train_s) = model.as_ref().expect("model fitted");
                    let out = ckpt.infer(prepared.x_magic(), &prepared.coords)?;
                    (out.to_dense_array(), pre_s + diff_s + train_s)
                }
            };
            let ari = ari_of(&features, &truth, seed)?;
            let seconds = shared + start.elapsed().as_secs_f64();
            log::info!("{} seed {seed}: ARI {ari:.4} ({seconds:.2} s)", strategy.name());
            rows.push(BenchmarkRow {
                strategy,
                seed,
                ari,
                seconds,
            });
        }
    }
    Ok(BenchmarkReport {
        rows,
        strategies,
        seeds: seeds.to_vec(),
        config: serde_json::to_string_pretty(cfg).unwrap_or_default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::synthetic::{generate_synthetic, SyntheticSpec};

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
        }
        assert!("umap".parse::<Strategy>().is_err());
    }

    #[test]
    fn raw_only_matches_direct_computation() {
        let data = generate_synthetic(&SyntheticSpec {
            n_spots: 90,
            n_genes: 30,
            dropout_rate: 0.3,
            ..Default::default()
        })
        .unwrap();
        let cfg = PipelineConfig::default();
        let report = run_benchmark(&data, &[Strategy::Raw], &cfg, &[4]).unwrap();
        assert_eq!(report.rows.len(), 1);
        let prepared = prepare(&data, &cfg).unwrap();
        let truth = LabeledClustering::from_values(data.labels.as_ref().unwrap());
        let direct = ari_of(&prepared.x_d.to_dense_array(), &truth, 4).unwrap();
        assert_eq!(report.rows[0].ari, direct);
        assert!(report.to_csv().starts_with("strategy,seed,ari,seconds\nraw,4,"));
        assert!(report.to_markdown().contains("| raw |"));
    }

    #[test]
    fn missing_labels_is_an_error() {
        let mut data = generate_synthetic(&SyntheticSpec {
            n_spots: 30,
            n_genes: 10,
            ..Default::default()
        })
        .unwrap();
        data.labels = None;
        assert!(matches!(
            run_benchmark(&data, &[Strategy::Raw], &PipelineConfig::default(), &[1]),
            Err(Error::MissingLabels)
        ));
    }
}
