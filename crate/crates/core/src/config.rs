//! Flat run configuration shared by the command line and config files.
//!
//! Config files hold `key = value` lines (TOML syntax) using the field names
//! below. Unknown keys are rejected.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attention::AttentionConfig;
use crate::diffusion::DiffusionConfig;
use crate::error::{Error, Result};
use crate::model::{AutoencoderConfig, TrainingConfig};
use crate::pipeline::PipelineConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub hvg_count: usize,
    pub pca_dims: usize,
    pub knn_k: usize,
    pub knn_max: usize,
    pub alpha: f64,
    pub diffusion_t: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub mask_rate: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub deterministic: bool,
    pub freeze_attention: bool,
    pub dropout_rate: f64,
    /// Landmark keys for attention; 0 attends to every spot.
    pub landmarks: usize,
    /// Worker threads; 0 uses every available core.
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            hvg_count: 3000,
            pca_dims: 100,
            knn_k: 5,
            knn_max: 15,
            alpha: 1.0,
            diffusion_t: 3,
            embed_dim: 32,
            heads: 2,
            mask_rate: 0.2,
            batch_size: 256,
            learning_rate: 1e-3,
            epochs: 50,
            seed: 0,
            deterministic: false,
            freeze_attention: false,
            dropout_rate: 0.1,
            landmarks: 0,
            threads: 0,
        }
    }
}

impl RunConfig {
    /// Every key with its default, as `(key, rendered default)`.
    pub fn default_entries() -> Vec<(&'static str, String)> {
        let d = Self::default();
        vec![
            ("hvg_count", d.hvg_count.to_string()),
            ("pca_dims", d.pca_dims.to_string()),
            ("knn_k", d.knn_k.to_string()),
            ("knn_max", d.knn_max.to_string()),
            ("alpha", d.alpha.to_string()),
            ("diffusion_t", d.diffusion_t.to_string()),
            ("embed_dim", d.embed_dim.to_string()),
            ("heads", d.heads.to_string()),
            ("mask_rate", d.mask_rate.to_string()),
            ("batch_size", d.batch_size.to_string()),
            ("learning_rate", d.learning_rate.to_string()),
            ("epochs", d.epochs.to_string()),
            ("seed", d.seed.to_string()),
            ("deterministic", d.deterministic.to_string()),
            ("freeze_attention", d.freeze_attention.to_string()),
            ("dropout_rate", d.dropout_rate.to_string()),
            ("landmarks", d.landmarks.to_string()),
            ("threads", d.threads.to_string()),
        ]
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::param("config", e.message()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.span().map_or(0, |s| text[..s.start].matches('\n').count() + 1),
            msg: e.message().to_string(),
        })
    }

    pub fn to_pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            hvg_count: self.hvg_count,
            diffusion: DiffusionConfig {
                pca_dims: self.pca_dims,
                k: self.knn_k,
                k_max: self.knn_max,
                alpha: self.alpha,
                steps: self.diffusion_t,
                deterministic: self.deterministic,
            },
            training: TrainingConfig {
                mask_rate: self.mask_rate,
                batch_size: self.batch_size,
                learning_rate: self.learning_rate,
                epochs: self.epochs,
                seed: self.seed,
                joint_attention_training: !self.freeze_attention,
                attention: AttentionConfig {
                    embed_dim: self.embed_dim,
                    heads: self.heads,
                    ff_dim: 2 * self.embed_dim,
                    landmarks: (self.landmarks > 0).then_some(self.landmarks),
                    ..Default::default()
                },
                autoencoder: AutoencoderConfig {
                    dropout_rate: self.dropout_rate,
                    ..Default::default()
                },
            },
        }
    }

    /// Runs `f` on a thread pool sized by `threads`, or on the global pool
    /// when `threads` is 0.
    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> Result<R> {
        if self.threads == 0 {
            return Ok(f());
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.threads)
            .build()
            .map_err(|e| Error::Resource(format!("cannot start {} threads: {e}", self.threads)))?;
        Ok(pool.install(f))
    }

    /// Checks every key against the preconditions of the stage that uses it.
    pub fn validate(&self) -> Result<()> {
        self.to_pipeline().validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_partial_file() {
        let c = RunConfig::from_toml_str("epochs = 7\nalpha = 2.5\nfreeze_attention = true\n").unwrap();
        assert_eq!(c.epochs, 7);
        assert_eq!(c.alpha, 2.5);
        assert!(c.freeze_attention);
        assert_eq!(c.hvg_count, 3000);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::from_toml_str("epoch = 3").unwrap_err().to_string();
        assert!(err.contains("epoch"), "{err}");
    }

    #[test]
    fn validation_names_the_key() {
        let cases: Vec<(RunConfig, &str)> = vec![
            (RunConfig { mask_rate: 1.5, ..Default::default() }, "mask_rate"),
            (RunConfig { knn_max: 2, ..Default::default() }, "knn_max"),
            (RunConfig { heads: 3, ..Default::default() }, "heads"),
            (RunConfig { batch_size: 0, ..Default::default() }, "batch_size"),
            (RunConfig { learning_rate: -1.0, ..Default::default() }, "learning_rate"),
            (RunConfig { alpha: 0.0, ..Default::default() }, "alpha"),
            (RunConfig { hvg_count: 0, ..Default::default() }, "hvg_count"),
            (RunConfig { pca_dims: 0, ..Default::default() }, "pca_dims"),
            (RunConfig { dropout_rate: 1.0, ..Default::default() }, "dropout_rate"),
            (RunConfig { embed_dim: 0, ..Default::default() }, "embed_dim"),
        ];
        for (cfg, key) in cases {
            match cfg.validate() {
                Err(Error::InvalidParameter { name, .. }) => assert_eq!(name, key),
                other => panic!("{key}: {other:?}"),
            }
        }
        assert!(RunConfig::default().validate().is_ok());
    }

    #[test]
    fn defaults_listed_for_every_key() {
        let text = toml::to_string(&RunConfig::default()).unwrap();
        let keys: Vec<_> = RunConfig::default_entries().into_iter().map(|(k, _)| k).collect();
        for line in text.lines().filter(|l| l.contains('=')) {
            let key = line.split('=').next().unwrap().trim();
            assert!(keys.contains(&key), "{key} missing from default_entries");
        }
        assert_eq!(keys.len(), text.lines().filter(|l| l.contains('=')).count());
    }
}
