//! Finite-difference verification of the full backward pass (attention
//! encoder through autoencoder loss) in double precision.

use ndarray::{s, Array2};
use rand::Rng;

use super::{backward, corrupt, forward_train, mse_grad, mse_loss, AutoencoderConfig, AutoencoderParams};
use crate::attention::{self, AttentionConfig, AttentionParams};
use crate::error::Result;
use crate::nn::ParamSet;
use crate::rng::seeded;

/// A fixed input, mask, and parameter set. Dropout is disabled.
#[derive(Debug, Clone)]
pub struct GradCheckInstance {
    pub x: Array2<f64>,
    pub coords: Array2<f64>,
    pub mask: Array2<f64>,
    pub attention: AttentionParams<f64>,
    pub autoencoder: AutoencoderParams<f64>,
}

impl GradCheckInstance {
    /// `n` spots, `g` genes, embedding width `embed_dim` over `heads` heads,
    /// and autoencoder widths `hidden`/`latent`.
    pub fn random(
        n: usize,
        g: usize,
        embed_dim: usize,
        heads: usize,
        hidden: usize,
        latent: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut r = seeded(seed);
        let att_cfg = AttentionConfig {
            embed_dim,
            heads,
            ff_dim: 2 * embed_dim,
            ..Default::default()
        };
        let ae_cfg = AutoencoderConfig {
            hidden,
            latent,
            dropout_rate: 0.0,
        };
        let attention = AttentionParams::init(&att_cfg, g, &mut r)?;
        let autoencoder = AutoencoderParams::init(&ae_cfg, g, &mut r)?;
        let x = Array2::from_shape_fn((n, g), |_| r.random_range(0.0..2.0));
        let coords = Array2::from_shape_fn((n, 2), |_| r.random_range(-1.5..1.5));
        let mask = Array2::from_shape_fn((n, g), |_| if r.random::<f64>() < 0.2 { 0.0 } else { 1.0 });
        Ok(Self {
            x,
            coords,
            mask,
            attention,
            autoencoder,
        })
    }

    /// n=8, G=6, d_s=8, two heads, autoencoder widths 16/12.
    pub fn tiny(seed: u64) -> Self {
        Self::random(8, 6, 8, 2, 16, 12, seed).expect("valid tiny instance")
    }

    fn rows(&self) -> Vec<usize> {
        (0..self.x.nrows()).collect()
    }

    pub fn loss_with(&self, attention: &AttentionParams<f64>, autoencoder: &AutoencoderParams<f64>) -> Result<f64> {
        let (h_proj, _) = attention::forward_train(self.coords.view(), attention, &self.rows(), None)?;
        let fused = corrupt(self.x.view(), self.mask.view(), h_proj.view())?;
        let (out, _) = forward_train(fused.matrix, autoencoder, None)?;
        mse_loss(out.view(), self.x.view())
    }

    pub fn loss(&self) -> Result<f64> {
        self.loss_with(&self.attention, &self.autoencoder)
    }

    /// Analytic gradients of the loss with respect to every parameter.
    pub fn gradients(&self) -> Result<(AttentionParams<f64>, AutoencoderParams<f64>)> {
        let g = self.x.ncols();
        let (h_proj, att_cache) = attention::forward_train(self.coords.view(), &self.attention, &self.rows(), None)?;
        let fused = corrupt(self.x.view(), self.mask.view(), h_proj.view())?;
        let (out, cache) = forward_train(fused.matrix, &self.autoencoder, None)?;
        let d_out = mse_grad(out.view(), self.x.view())?;
        let (ae, d_fused) = backward(&self.autoencoder, &cache, &d_out);
        let d_proj = d_fused.slice(s![.., g..]).to_owned();
        let att = attention::backward(&self.attention, &att_cache, &d_proj);
        Ok((att, ae))
    }
}

/// Relative error between analytic and numeric gradients of one tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorError {
    pub name: &'static str,
    pub relative_error: f64,
}

/// `‖a − n‖ / max(‖a‖ + ‖n‖, 1e-12)` with Euclidean norms over the tensor.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    diff / (na + nn).max(1e-12)
}

fn central_differences<P: ParamSet<f64>>(params: &P, eps: f64, loss: impl Fn(&P) -> Result<f64>) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::new();
    let count = params.tensors().len();
    for ti in 0..count {
        let len = params.tensors()[ti].1.len();
        let mut grads = Vec::with_capacity(len);
        for idx in 0..len {
            let mut plus = params.clone();
            let mut minus = params.clone();
            *plus.tensors_mut()[ti].1.iter_mut().nth(idx).expect("in range") += eps;
            *minus.tensors_mut()[ti].1.iter_mut().nth(idx).expect("in range") -= eps;
            grads.push((loss(&plus)? - loss(&minus)?) / (2.0 * eps));
        }
        out.push(grads);
    }
    Ok(out)
}

/// Per-tensor relative errors of every attention and autoencoder tensor.
pub fn gradient_errors(inst: &GradCheckInstance, eps: f64) -> Result<Vec<TensorError>> {
    let (att_grad, ae_grad) = inst.gradients()?;
    let att_num = central_differences(&inst.attention, eps, |p| inst.loss_with(p, &inst.autoencoder))?;
    let ae_num = central_differences(&inst.autoencoder, eps, |p| inst.loss_with(&inst.attention, p))?;
    let mut out = Vec::new();
    for ((name, analytic), numeric) in att_grad
        .tensors()
        .into_iter()
        .chain(ae_grad.tensors())
        .zip(att_num.iter().chain(&ae_num))
    {
        let analytic: Vec<f64> = analytic.iter().copied().collect();
        out.push(TensorError {
            name,
            relative_error: relative_error(&analytic, numeric),
        });
    }
    Ok(out)
}

/// Maximum per-tensor relative error at step `eps = 1e-5`.
pub fn check_gradients(inst: &GradCheckInstance) -> Result<f64> {
    Ok(gradient_errors(inst, 1e-5)?
        .iter()
        .map(|e| e.relative_error)
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_instance_passes() {
        let inst = GradCheckInstance::tiny(11);
        let errors = gradient_errors(&inst, 1e-5).unwrap();
        assert_eq!(errors.len(), 28);
        for e in &errors {
            assert!(e.relative_error < 1e-4, "{}: {}", e.name, e.relative_error);
        }
    }

    #[test]
    fn zero_residual_gives_zero_gradients() {
        let mut inst = GradCheckInstance::tiny(12);
        // A target equal to the current reconstruction has zero residual.
        let (h, _) = attention::forward_train(inst.coords.view(), &inst.attention, &inst.rows(), None).unwrap();
        let fused = corrupt(inst.x.view(), inst.mask.view(), h.view()).unwrap();
        let (out, cache) = forward_train(fused.matrix, &inst.autoencoder, None).unwrap();
        let d_out = mse_grad(out.view(), out.view()).unwrap();
        let (ae, d_fused) = backward(&inst.autoencoder, &cache, &d_out);
        assert!(ae.tensors().iter().all(|(_, t)| t.iter().all(|&v| v == 0.0)));
        assert!(d_fused.iter().all(|&v| v == 0.0));
        inst.x = out;
        assert!(inst.loss().unwrap() >= 0.0);
    }

    #[test]
    fn gradients_are_linear_in_upstream() {
        let inst = GradCheckInstance::tiny(13);
        let (h, att_cache) = attention::forward_train(inst.coords.view(), &inst.attention, &inst.rows(), None).unwrap();
        let fused = corrupt(inst.x.view(), inst.mask.view(), h.view()).unwrap();
        let (out, cache) = forward_train(fused.matrix, &inst.autoencoder, None).unwrap();
        let d_out = mse_grad(out.view(), inst.x.view()).unwrap();
        let (ae1, d1) = backward(&inst.autoencoder, &cache, &d_out);
        let (ae2, d2) = backward(&inst.autoencoder, &cache, &(&d_out * 2.0));
        for ((_, a), (_, b)) in ae1.tensors().iter().zip(ae2.tensors().iter()) {
            assert!(a.iter().zip(b.iter()).all(|(x, y)| (2.0 * x - y).abs() <= 1e-12 * (1.0 + y.abs())));
        }
        let g = inst.x.ncols();
        let a1 = attention::backward(&inst.attention, &att_cache, &d1.slice(s![.., g..]).to_owned());
        let a2 = attention::backward(&inst.attention, &att_cache, &d2.slice(s![.., g..]).to_owned());
        for ((_, a), (_, b)) in a1.tensors().iter().zip(a2.tensors().iter()) {
            assert!(a.iter().zip(b.iter()).all(|(x, y)| (2.0 * x - y).abs() <= 1e-12 * (1.0 + y.abs())));
        }
    }

    #[test]
    fn relative_error_edge_cases() {
        assert_eq!(relative_error(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert_eq!(relative_error(&[1.0], &[1.0]), 0.0);
        assert!((relative_error(&[1.0], &[-1.0]) - 1.0).abs() < 1e-15);
    }
}
