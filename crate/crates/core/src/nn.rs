//! Dense layer building blocks shared by the attention encoder and the
//! autoencoder: a float trait, parameter containers, initialization, ReLU,
//! layer norm, and row softmax.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{Array1, Array2, ArrayView2, ArrayViewD, ArrayViewMutD, Axis, LinalgScalar, ScalarOperand, Zip};
use num_traits::{Float, FromPrimitive, NumCast};
use rand::Rng;

/// Floating-point type the models are generic over (`f32` for training,
/// `f64` for gradient checks).
pub trait Real:
    Float
    + FromPrimitive
    + LinalgScalar
    + ScalarOperand
    + Debug
    + Display
    + Send
    + Sync
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + 'static
{
    fn of(v: f64) -> Self {
        <Self as NumCast>::from(v).expect("representable constant")
    }

    fn to_f64_lossy(self) -> f64 {
        <f64 as NumCast>::from(self).unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Named tensors of a model, in a fixed order.
pub trait ParamSet<T: Real>: Clone {
    fn tensors(&self) -> Vec<(&'static str, ArrayViewD<'_, T>)>;
    fn tensors_mut(&mut self) -> Vec<(&'static str, ArrayViewMutD<'_, T>)>;

    fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for (_, mut t) in out.tensors_mut() {
            t.fill(T::zero());
        }
        out
    }

    fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Euclidean norm of every tensor, formatted `name=value`.
    fn norm_summary(&self) -> String {
        self.tensors()
            .iter()
            .map(|(name, t)| {
                let sq: f64 = t.iter().map(|v| v.to_f64_lossy().powi(2)).sum();
                format!("{name}={:.4e}", sq.sqrt())
            })
            .collect::<Vec<_>>()
            .join(", ")
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }
}

/// Implements [`ParamSet`] and a precision-changing `cast` for a struct
/// whose tensor fields are listed first and plain fields second.
macro_rules! param_set {
    ($ty:ident, $prefix:literal, [$($t:ident),* $(,)?], [$($p:ident),* $(,)?]) => {
        impl<T: $crate::nn::Real> $crate::nn::ParamSet<T> for $ty<T> {
            fn tensors(&self) -> Vec<(&'static str, ndarray::ArrayViewD<'_, T>)> {
                vec![$((concat!($prefix, ".", stringify!($t)), self.$t.view().into_dyn())),*]
            }

            fn tensors_mut(&mut self) -> Vec<(&'static str, ndarray::ArrayViewMutD<'_, T>)> {
                vec![$((concat!($prefix, ".", stringify!($t)), self.$t.view_mut().into_dyn())),*]
            }
        }

        impl<T: $crate::nn::Real> $ty<T> {
            pub fn cast<U: $crate::nn::Real>(&self) -> $ty<U> {
                $ty {
                    $($t: self.$t.mapv(|v| U::of(v.to_f64_lossy())),)*
                    $($p: self.$p.clone(),)*
                }
            }
        }
    };
}
pub(crate) use param_set;

pub fn uniform_matrix<T: Real, R: Rng>(rng: &mut R, rows: usize, cols: usize, fan_in: usize) -> Array2<T> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || T::of(rng.random_range(-bound..=bound)))
}

pub fn uniform_vector<T: Real, R: Rng>(rng: &mut R, len: usize, fan_in: usize) -> Array1<T> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Array1::from_shape_simple_fn(len, || T::of(rng.random_range(-bound..=bound)))
}

/// `x W + b`.
pub fn affine<T: Real>(x: ArrayView2<T>, w: &Array2<T>, b: &Array1<T>) -> Array2<T> {
    let mut out = x.dot(w);
    out += &b.view().insert_axis(Axis(0));
    out
}

pub fn relu<T: Real>(x: &Array2<T>) -> Array2<T> {
    x.mapv(|v| if v > T::zero() { v } else { T::zero() })
}

/// Zeroes `grad` wherever the pre-activation was not positive.
pub fn relu_backward<T: Real>(grad: &mut Array2<T>, pre: &Array2<T>) {
    Zip::from(grad).and(pre).for_each(|g, &p| {
        if p <= T::zero() {
            *g = T::zero();
        }
    });
}

pub fn column_sums<T: Real>(x: &Array2<T>) -> Array1<T> {
    x.sum_axis(Axis(0))
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Intermediate values of a layer norm needed for its backward pass.
#[derive(Debug, Clone)]
pub struct LayerNormCache<T> {
    pub normalized: Array2<T>,
    pub inv_std: Array1<T>,
}

/// Per-row layer norm with biased variance.
pub fn layer_norm<T: Real>(x: &Array2<T>, gain: &Array1<T>, bias: &Array1<T>) -> (Array2<T>, LayerNormCache<T>) {
    let (rows, d) = x.dim();
    let dn = T::of(d as f64);
    let eps = T::of(LAYER_NORM_EPS);
    let mut normalized = Array2::zeros((rows, d));
    let mut inv_std = Array1::zeros(rows);
    for ((row, mut out), s) in x.rows().into_iter().zip(normalized.rows_mut()).zip(inv_std.iter_mut()) {
        let mean = row.sum() / dn;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
        let is = T::one() / (var + eps).sqrt();
        *s = is;
        Zip::from(&mut out).and(&row).for_each(|o, &v| *o = (v - mean) * is);
    }
    let mut y = &normalized * &gain.view().insert_axis(Axis(0));
    y += &bias.view().insert_axis(Axis(0));
    (y, LayerNormCache { normalized, inv_std })
}

/// Returns `(dx, dgain, dbias)`.
pub fn layer_norm_backward<T: Real>(
    dy: &Array2<T>,
    cache: &LayerNormCache<T>,
    gain: &Array1<T>,
) -> (Array2<T>, Array1<T>, Array1<T>) {
    let d = dy.ncols();
    let dn = T::of(d as f64);
    let dgain = (dy * &cache.normalized).sum_axis(Axis(0));
    let dbias = dy.sum_axis(Axis(0));
    let dxhat = dy * &gain.view().insert_axis(Axis(0));
    let mut dx = Array2::zeros(dy.dim());
    for (((dxh, xh), mut out), &is) in dxhat
        .rows()
        .into_iter()
        .zip(cache.normalized.rows())
        .zip(dx.rows_mut())
        .zip(cache.inv_std.iter())
    {
        let mean_d = dxh.sum() / dn;
        let mean_dx = dxh.iter().zip(xh.iter()).map(|(&a, &b)| a * b).sum::<T>() / dn;
        Zip::from(&mut out)
            .and(&dxh)
            .and(&xh)
            .for_each(|o, &g, &h| *o = is * (g - mean_d - h * mean_dx));
    }
    (dx, dgain, dbias)
}

/// Numerically stable softmax over each row, in place.
pub fn softmax_rows<T: Real>(x: &mut Array2<T>) {
    for mut row in x.rows_mut() {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

/// Gradient of the pre-softmax scores given the softmax output `p` and the
/// gradient `dp` with respect to it.
pub fn softmax_backward<T: Real>(p: &Array2<T>, dp: &Array2<T>) -> Array2<T> {
    let mut out = Array2::zeros(p.dim());
    for ((pr, dr), mut o) in p.rows().into_iter().zip(dp.rows()).zip(out.rows_mut()) {
        let dot = pr.iter().zip(dr.iter()).map(|(&a, &b)| a * b).sum::<T>();
        Zip::from(&mut o).and(&pr).and(&dr).for_each(|o, &p, &g| *o = p * (g - dot));
    }
    out
}
