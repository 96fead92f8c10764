//! Masked denoising autoencoder over fused features, its training loop, and
//! checkpoints.
//!
//! The network is `2G → hidden → latent → hidden → G` with ReLU after every
//! layer (including the output) and dropout between the first two encoder
//! layers during training.

pub mod checkpoint;
pub mod gradcheck;
pub mod optim;
pub mod train;

use ndarray::{Array1, Array2, ArrayView2, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{affine, column_sums, param_set, relu, relu_backward, uniform_matrix, uniform_vector, Real};

pub use checkpoint::{ModelCheckpoint, PreprocessingMeta};
pub use gradcheck::{check_gradients, GradCheckInstance};
pub use optim::Adam;
pub use train::{infer, predict, train, TrainedModel, TrainingConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderConfig {
    pub hidden: usize,
    pub latent: usize,
    pub dropout_rate: f64,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        Self {
            hidden: 512,
            latent: 256,
            dropout_rate: 0.1,
        }
    }
}

impl AutoencoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::param("hidden", "must be at least 1"));
        }
        if self.latent == 0 {
            return Err(Error::param("latent", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::param("dropout_rate", format!("must be in [0, 1), got {}", self.dropout_rate)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderParams<T> {
    pub enc1_w: Array2<T>,
    pub enc1_b: Array1<T>,
    pub enc2_w: Array2<T>,
    pub enc2_b: Array1<T>,
    pub dec1_w: Array2<T>,
    pub dec1_b: Array1<T>,
    pub dec2_w: Array2<T>,
    pub dec2_b: Array1<T>,
    pub dropout_rate: f64,
}

param_set!(
    AutoencoderParams,
    "autoencoder",
    [enc1_w, enc1_b, enc2_w, enc2_b, dec1_w, dec1_b, dec2_w, dec2_b],
    [dropout_rate]
);

impl<T: Real> AutoencoderParams<T> {
    pub fn init<R: Rng>(cfg: &AutoencoderConfig, n_genes: usize, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        if n_genes == 0 {
            return Err(Error::Shape("autoencoder needs at least one gene".into()));
        }
        let input = 2 * n_genes;
        let (h, z) = (cfg.hidden, cfg.latent);
        Ok(Self {
            enc1_w: uniform_matrix(rng, input, h, input),
            enc1_b: uniform_vector(rng, h, input),
            enc2_w: uniform_matrix(rng, h, z, h),
            enc2_b: uniform_vector(rng, z, h),
            dec1_w: uniform_matrix(rng, z, h, z),
            dec1_b: uniform_vector(rng, h, z),
            dec2_w: uniform_matrix(rng, h, n_genes, h),
            dec2_b: uniform_vector(rng, n_genes, h),
            dropout_rate: cfg.dropout_rate,
        })
    }

    pub fn n_genes(&self) -> usize {
        self.dec2_w.ncols()
    }

    pub fn latent_dim(&self) -> usize {
        self.enc2_w.ncols()
    }

    fn check_input(&self, x: &ArrayView2<T>) -> Result<()> {
        if x.ncols() != self.enc1_w.nrows() {
            return Err(Error::Shape(format!(
                "encoder expects {} fused columns, got {}",
                self.enc1_w.nrows(),
                x.ncols()
            )));
        }
        Ok(())
    }
}

/// Evaluation-mode encoder: `h₂ = ReLU(ReLU(X W₁ + b₁) W₂ + b₂)`.
pub fn encoder_forward<T: Real>(x_fused: ArrayView2<T>, p: &AutoencoderParams<T>) -> Result<Array2<T>> {
    p.check_input(&x_fused)?;
    let h1 = relu(&affine(x_fused, &p.enc1_w, &p.enc1_b));
    Ok(relu(&affine(h1.view(), &p.enc2_w, &p.enc2_b)))
}

/// `X̂ = ReLU(ReLU(h₂ W₃ + b₃) W₄ + b₄)`.
pub fn decoder_forward<T: Real>(latent: ArrayView2<T>, p: &AutoencoderParams<T>) -> Result<Array2<T>> {
    if latent.ncols() != p.latent_dim() {
        return Err(Error::Shape(format!(
            "decoder expects {} latent columns, got {}",
            p.latent_dim(),
            latent.ncols()
        )));
    }
    let h3 = relu(&affine(latent, &p.dec1_w, &p.dec1_b));
    Ok(relu(&affine(h3.view(), &p.dec2_w, &p.dec2_b)))
}

pub fn reconstruct<T: Real>(x_fused: ArrayView2<T>, p: &AutoencoderParams<T>) -> Result<Array2<T>> {
    let z = encoder_forward(x_fused, p)?;
    decoder_forward(z.view(), p)
}

/// Inverted dropout mask: entries are 0 with probability `rate` and
/// `1/(1-rate)` otherwise.
pub fn dropout_mask<T: Real, R: Rng>(rng: &mut R, rows: usize, cols: usize, rate: f64) -> Array2<T> {
    let keep = T::of(1.0 / (1.0 - rate));
    Array2::from_shape_simple_fn((rows, cols), || if rng.random::<f64>() < rate { T::zero() } else { keep })
}

#[derive(Debug, Clone)]
pub struct AutoencoderCache<T> {
    input: Array2<T>,
    z1: Array2<T>,
    dropout: Option<Array2<T>>,
    h1: Array2<T>,
    z2: Array2<T>,
    h2: Array2<T>,
    z3: Array2<T>,
    h3: Array2<T>,
    z4: Array2<T>,
}

/// Training-mode forward pass. `dropout` multiplies the first hidden layer
/// when present.
pub fn forward_train<T: Real>(
    x_fused: Array2<T>,
    p: &AutoencoderParams<T>,
    dropout: Option<Array2<T>>,
) -> Result<(Array2<T>, AutoencoderCache<T>)> {
    p.check_input(&x_fused.view())?;
    let z1 = affine(x_fused.view(), &p.enc1_w, &p.enc1_b);
    let mut h1 = relu(&z1);
    if let Some(mask) = &dropout {
        if mask.dim() != h1.dim() {
            return Err(Error::Shape(format!("dropout mask {:?} for hidden layer {:?}", mask.dim(), h1.dim())));
        }
        h1 *= mask;
    }
    let z2 = affine(h1.view(), &p.enc2_w, &p.enc2_b);
    let h2 = relu(&z2);
    let z3 = affine(h2.view(), &p.dec1_w, &p.dec1_b);
    let h3 = relu(&z3);
    let z4 = affine(h3.view(), &p.dec2_w, &p.dec2_b);
    let out = relu(&z4);
    Ok((
        out,
        AutoencoderCache {
            input: x_fused,
            z1,
            dropout,
            h1,
            z2,
            h2,
            z3,
            h3,
            z4,
        },
    ))
}

/// Returns parameter gradients and `∂L/∂X_fused` given `d_out = ∂L/∂X̂`.
pub fn backward<T: Real>(
    p: &AutoencoderParams<T>,
    cache: &AutoencoderCache<T>,
    d_out: &Array2<T>,
) -> (AutoencoderParams<T>, Array2<T>) {
    let mut d_z4 = d_out.clone();
    relu_backward(&mut d_z4, &cache.z4);
    let dec2_w = cache.h3.t().dot(&d_z4);
    let dec2_b = column_sums(&d_z4);
    let mut d_z3 = d_z4.dot(&p.dec2_w.t());
    relu_backward(&mut d_z3, &cache.z3);
    let dec1_w = cache.h2.t().dot(&d_z3);
    let dec1_b = column_sums(&d_z3);
    let mut d_z2 = d_z3.dot(&p.dec1_w.t());
    relu_backward(&mut d_z2, &cache.z2);
    let enc2_w = cache.h1.t().dot(&d_z2);
    let enc2_b = column_sums(&d_z2);
    let mut d_z1 = d_z2.dot(&p.enc2_w.t());
    if let Some(mask) = &cache.dropout {
        d_z1 *= mask;
    }
    relu_backward(&mut d_z1, &cache.z1);
    let enc1_w = cache.input.t().dot(&d_z1);
    let enc1_b = column_sums(&d_z1);
    let d_input = d_z1.dot(&p.enc1_w.t());
    (
        AutoencoderParams {
            enc1_w,
            enc1_b,
            enc2_w,
            enc2_b,
            dec1_w,
            dec1_b,
            dec2_w,
            dec2_b,
            dropout_rate: p.dropout_rate,
        },
        d_input,
    )
}

fn check_same_shape<T>(a: &ArrayView2<T>, b: &ArrayView2<T>, what: &str) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!("{what}: {:?} vs {:?}", a.dim(), b.dim())));
    }
    Ok(())
}

/// `L = (1/n) Σ_i ‖x̂_i − x_i‖²` over full rows.
pub fn mse_loss<T: Real>(pred: ArrayView2<T>, target: ArrayView2<T>) -> Result<T> {
    check_same_shape(&pred, &target, "loss shapes differ")?;
    let n = pred.nrows().max(1);
    let mut sum = T::zero();
    Zip::from(&pred).and(&target).for_each(|&a, &b| sum += (a - b) * (a - b));
    Ok(sum / T::of(n as f64))
}

/// `∂L/∂X̂ = 2 (X̂ − X) / n`.
pub fn mse_grad<T: Real>(pred: ArrayView2<T>, target: ArrayView2<T>) -> Result<Array2<T>> {
    check_same_shape(&pred, &target, "loss shapes differ")?;
    let scale = T::of(2.0 / pred.nrows().max(1) as f64);
    Ok(Zip::from(&pred).and(&target).map_collect(|&a, &b| (a - b) * scale))
}

/// Bernoulli keep mask: each entry is 0 with probability `p`, 1 otherwise.
pub fn make_mask<T: Real, R: Rng>(rows: usize, cols: usize, p: f64, rng: &mut R) -> Result<Array2<T>> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::param("mask_rate", format!("must be in (0, 1), got {p}")));
    }
    Ok(Array2::from_shape_simple_fn((rows, cols), || {
        if rng.random::<f64>() < p {
            T::zero()
        } else {
            T::one()
        }
    }))
}

/// `[X ⊙ M ‖ H_proj]`: only the expression block is masked.
pub fn corrupt<T: Real>(
    x_magic: ArrayView2<T>,
    mask: ArrayView2<T>,
    h_proj: ArrayView2<T>,
) -> Result<crate::attention::FusedFeatures<T>> {
    check_same_shape(&x_magic, &mask, "mask shape differs from expression")?;
    let masked = &x_magic * &mask;
    crate::attention::fuse(masked.view(), h_proj)
}
