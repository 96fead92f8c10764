//! Mini-batch training of the attention encoder and autoencoder, and
//! evaluation-mode prediction.

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::optim::Adam;
use super::{backward, corrupt, dropout_mask, forward_train, make_mask, mse_grad, mse_loss, reconstruct};
use super::{AutoencoderConfig, AutoencoderParams};
use crate::attention::{self, fuse, landmark_rows, spatial_features, AttentionConfig, AttentionParams};
use crate::error::{Error, Result};
use crate::nn::{ParamSet, Real};
use crate::rng::{stage_rng, Stage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub mask_rate: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Back-propagate into the attention encoder. When false, spatial
    /// features are computed once from the initial attention weights.
    pub joint_attention_training: bool,
    pub attention: AttentionConfig,
    pub autoencoder: AutoencoderConfig,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            mask_rate: 0.2,
            batch_size: 256,
            learning_rate: 1e-3,
            epochs: 50,
            seed: 0,
            joint_attention_training: true,
            attention: AttentionConfig::default(),
            autoencoder: AutoencoderConfig::default(),
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mask_rate > 0.0 && self.mask_rate < 1.0) {
            return Err(Error::param("mask_rate", format!("must be in (0, 1), got {}", self.mask_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::param("batch_size", "must be at least 1"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::param("learning_rate", "must be a positive number"));
        }
        self.attention.validate()?;
        self.autoencoder.validate()
    }
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub attention: AttentionParams<f32>,
    pub autoencoder: AutoencoderParams<f32>,
    /// Mean per-spot loss of every epoch.
    pub loss_history: Vec<f64>,
}

fn norms<A: ParamSet<f32>, B: ParamSet<f32>>(a: &A, b: &B) -> String {
    format!("{}, {}", a.norm_summary(), b.norm_summary())
}

fn tensor_lists<'a, T: Real, P: ParamSet<T>>(
    params: &'a mut P,
    grads: &'a P,
) -> (Vec<ndarray::ArrayViewMutD<'a, T>>, Vec<ndarray::ArrayViewD<'a, T>>) {
    (
        params.tensors_mut().into_iter().map(|(_, t)| t).collect(),
        grads.tensors().into_iter().map(|(_, t)| t).collect(),
    )
}

/// Trains on diffused expression `x_magic` (n × G) and standardized
/// coordinates (n × 2). Parameters are initialized from `cfg.seed`.
pub fn train(x_magic: ArrayView2<f64>, coords: ArrayView2<f64>, cfg: &TrainingConfig) -> Result<TrainedModel> {
    cfg.validate()?;
    let (n, g) = x_magic.dim();
    if coords.dim() != (n, 2) {
        return Err(Error::Shape(format!(
            "expected {n} x 2 coordinates, got {:?}",
            coords.dim()
        )));
    }
    if n == 0 || g == 0 {
        return Err(Error::Shape("training needs at least one spot and one gene".into()));
    }
    let x: Array2<f32> = x_magic.mapv(|v| v as f32);
    let s: Array2<f32> = coords.mapv(|v| v as f32);

    let mut init = stage_rng(cfg.seed, Stage::Init);
    let mut attention = AttentionParams::<f32>::init(&cfg.attention, g, &mut init)?;
    let mut autoencoder = AutoencoderParams::<f32>::init(&cfg.autoencoder, g, &mut init)?;
    let mut mask_rng = stage_rng(cfg.seed, Stage::Mask);
    let mut shuffle_rng = stage_rng(cfg.seed, Stage::Shuffle);
    let mut dropout_rng = stage_rng(cfg.seed, Stage::Dropout);
    let key_rows = landmark_rows(n, cfg.attention.landmarks, cfg.seed);
    let keys = key_rows.as_deref();

    let frozen = if cfg.joint_attention_training {
        None
    } else {
        Some(spatial_features(s.view(), &attention, keys, cfg.attention.query_block)?)
    };
    let mut adam_attention = Adam::<f32>::new(cfg.learning_rate);
    let mut adam_autoencoder = Adam::<f32>::new(cfg.learning_rate);
    let dropout = cfg.autoencoder.dropout_rate;

    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0f64;
        for (batch_index, batch) in order.chunks(cfg.batch_size).enumerate() {
            let b = batch.len();
            let target = x.select(Axis(0), batch);
            let mask = make_mask::<f32, _>(b, g, cfg.mask_rate, &mut mask_rng)?;
            let (h_proj, attention_cache) = match &frozen {
                Some(h) => (h.select(Axis(0), batch), None),
                None => {
                    let (h, cache) = attention::forward_train(s.view(), &attention, batch, keys)?;
                    (h, Some(cache))
                }
            };
            let fused = corrupt(target.view(), mask.view(), h_proj.view())?;
            let drop = (dropout > 0.0).then(|| dropout_mask(&mut dropout_rng, b, cfg.autoencoder.hidden, dropout));
            let (out, cache) = forward_train(fused.matrix, &autoencoder, drop)?;
            let loss = mse_loss(out.view(), target.view())?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch: epoch + 1,
                    batch: batch_index,
                    param_norms: norms(&attention, &autoencoder),
                });
            }
            total += f64::from(loss) * b as f64;

            let d_out = mse_grad(out.view(), target.view())?;
            let (ae_grads, d_fused) = backward(&autoencoder, &cache, &d_out);
            if let Some(cache) = attention_cache {
                let d_proj = d_fused.slice(s![.., g..]).to_owned();
                let grads = attention::backward(&attention, &cache, &d_proj);
                let (p, gr) = tensor_lists(&mut attention, &grads);
                adam_attention.step(p, gr);
            }
            let (p, gr) = tensor_lists(&mut autoencoder, &ae_grads);
            adam_autoencoder.step(p, gr);
        }
        let mean = total / n as f64;
        log::info!("epoch {}/{}: mean loss {mean:.6}", epoch + 1, cfg.epochs);
        history.push(mean);
    }
    if !attention.all_finite() || !autoencoder.all_finite() {
        return Err(Error::NonFiniteLoss {
            epoch: cfg.epochs,
            batch: 0,
            param_norms: norms(&attention, &autoencoder),
        });
    }
    Ok(TrainedModel {
        attention,
        autoencoder,
        loss_history: history,
    })
}

/// Evaluation-mode reconstruction from unmasked expression and spatial
/// features of every spot.
pub fn predict<T: Real>(
    attention: &AttentionParams<T>,
    autoencoder: &AutoencoderParams<T>,
    x_magic: ArrayView2<T>,
    coords: ArrayView2<T>,
    key_rows: Option<&[usize]>,
    query_block: usize,
) -> Result<Array2<T>> {
    let h_proj = spatial_features(coords, attention, key_rows, query_block)?;
    let fused = fuse(x_magic, h_proj.view())?;
    reconstruct(fused.matrix.view(), autoencoder)
}

/// [`predict`] on `f64` inputs with the model's `f32` weights.
pub fn infer(
    model: &TrainedModel,
    cfg: &TrainingConfig,
    x_magic: ArrayView2<f64>,
    coords: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    if x_magic.ncols() != model.autoencoder.n_genes() {
        return Err(Error::GeneMismatch(format!(
            "model trained on {} genes, input has {}",
            model.autoencoder.n_genes(),
            x_magic.ncols()
        )));
    }
    let key_rows = landmark_rows(x_magic.nrows(), cfg.attention.landmarks, cfg.seed);
    let out = predict(
        &model.attention,
        &model.autoencoder,
        x_magic.mapv(|v| v as f32).view(),
        coords.mapv(|v| v as f32).view(),
        key_rows.as_deref(),
        cfg.attention.query_block,
    )?;
    Ok(out.mapv(f64::from))
}
