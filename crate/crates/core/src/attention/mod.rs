//! Spatial self-attention encoder.
//!
//! Standardized coordinates are embedded linearly, passed through one
//! post-norm transformer encoder layer (multi-head attention and a ReLU
//! feed-forward block, each followed by residual addition and layer norm),
//! and projected to gene dimension. Forward passes take an explicit subset of
//! query rows so that training only evaluates the rows of a batch while every
//! spot still acts as a key.

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    affine, column_sums, layer_norm, layer_norm_backward, param_set, relu, relu_backward, softmax_backward,
    softmax_rows, uniform_matrix, uniform_vector, LayerNormCache, Real,
};
use crate::rng::{stage_rng, Stage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub embed_dim: usize,
    pub heads: usize,
    pub ff_dim: usize,
    /// Restrict keys to this many sampled spots. `None` attends to all spots.
    pub landmarks: Option<usize>,
    /// Query rows evaluated together during inference.
    pub query_block: usize,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self {
            embed_dim: 32,
            heads: 2,
            ff_dim: 64,
            landmarks: None,
            query_block: 512,
        }
    }
}

impl AttentionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 {
            return Err(Error::param("embed_dim", "must be at least 1"));
        }
        if self.heads == 0 {
            return Err(Error::param("heads", "must be at least 1"));
        }
        if !self.embed_dim.is_multiple_of(self.heads) {
            return Err(Error::param(
                "heads",
                format!("embed_dim {} is not divisible by {} heads", self.embed_dim, self.heads),
            ));
        }
        if self.ff_dim == 0 {
            return Err(Error::param("ff_dim", "must be at least 1"));
        }
        if self.landmarks == Some(0) {
            return Err(Error::param("landmarks", "must be at least 1"));
        }
        if self.query_block == 0 {
            return Err(Error::param("query_block", "must be at least 1"));
        }
        Ok(())
    }
}

/// Weights are stored input-major: a layer computes `x W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams<T> {
    pub embed_w: Array2<T>,
    pub embed_b: Array1<T>,
    pub query_w: Array2<T>,
    pub query_b: Array1<T>,
    pub key_w: Array2<T>,
    pub key_b: Array1<T>,
    pub value_w: Array2<T>,
    pub value_b: Array1<T>,
    pub out_w: Array2<T>,
    pub out_b: Array1<T>,
    pub norm1_gain: Array1<T>,
    pub norm1_bias: Array1<T>,
    pub ff1_w: Array2<T>,
    pub ff1_b: Array1<T>,
    pub ff2_w: Array2<T>,
    pub ff2_b: Array1<T>,
    pub norm2_gain: Array1<T>,
    pub norm2_bias: Array1<T>,
    pub proj_w: Array2<T>,
    pub proj_b: Array1<T>,
    pub heads: usize,
}

param_set!(
    AttentionParams,
    "attention",
    [
        embed_w, embed_b, query_w, query_b, key_w, key_b, value_w, value_b, out_w, out_b, norm1_gain,
        norm1_bias, ff1_w, ff1_b, ff2_w, ff2_b, norm2_gain, norm2_bias, proj_w, proj_b
    ],
    [heads]
);

impl<T: Real> AttentionParams<T> {
    /// Uniform `±1/√fan_in` weights and biases; layer norms start at identity.
    pub fn init<R: Rng>(cfg: &AttentionConfig, n_genes: usize, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.embed_dim;
        let f = cfg.ff_dim;
        Ok(Self {
            embed_w: uniform_matrix(rng, 2, d, 2),
            embed_b: uniform_vector(rng, d, 2),
            query_w: uniform_matrix(rng, d, d, d),
            query_b: uniform_vector(rng, d, d),
            key_w: uniform_matrix(rng, d, d, d),
            key_b: uniform_vector(rng, d, d),
            value_w: uniform_matrix(rng, d, d, d),
            value_b: uniform_vector(rng, d, d),
            out_w: uniform_matrix(rng, d, d, d),
            out_b: uniform_vector(rng, d, d),
            norm1_gain: Array1::ones(d),
            norm1_bias: Array1::zeros(d),
            ff1_w: uniform_matrix(rng, d, f, d),
            ff1_b: uniform_vector(rng, f, d),
            ff2_w: uniform_matrix(rng, f, d, f),
            ff2_b: uniform_vector(rng, d, f),
            norm2_gain: Array1::ones(d),
            norm2_bias: Array1::zeros(d),
            proj_w: uniform_matrix(rng, d, n_genes, d),
            proj_b: uniform_vector(rng, n_genes, d),
            heads: cfg.heads,
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_w.ncols()
    }

    pub fn n_genes(&self) -> usize {
        self.proj_w.ncols()
    }

    fn head_dim(&self) -> usize {
        self.embed_dim() / self.heads
    }
}

/// Sorted key rows for landmark attention, or `None` when every spot is a key.
pub fn landmark_rows(n: usize, landmarks: Option<usize>, seed: u64) -> Option<Vec<usize>> {
    let m = landmarks?;
    if m >= n {
        return None;
    }
    let mut rng = stage_rng(seed, Stage::Landmarks);
    let mut rows = rand::seq::index::sample(&mut rng, n, m).into_vec();
    rows.sort_unstable();
    Some(rows)
}

/// `h_i = W_e s_i + b_e` for every spot.
pub fn embed_coords<T: Real>(s: ArrayView2<T>, p: &AttentionParams<T>) -> Result<Array2<T>> {
    if s.ncols() != 2 {
        return Err(Error::Shape(format!("coordinates need 2 columns, got {}", s.ncols())));
    }
    Ok(affine(s, &p.embed_w, &p.embed_b))
}

#[derive(Debug, Clone)]
struct KeyValues<T> {
    rows: Option<Vec<usize>>,
    input: Array2<T>,
    k: Array2<T>,
    v: Array2<T>,
}

fn key_values<T: Real>(p: &AttentionParams<T>, h: &Array2<T>, rows: Option<&[usize]>) -> KeyValues<T> {
    let input = match rows {
        Some(r) => h.select(Axis(0), r),
        None => h.clone(),
    };
    KeyValues {
        rows: rows.map(<[usize]>::to_vec),
        k: affine(input.view(), &p.key_w, &p.key_b),
        v: affine(input.view(), &p.value_w, &p.value_b),
        input,
    }
}

#[derive(Debug, Clone)]
struct LayerCache<T> {
    input: Array2<T>,
    q: Array2<T>,
    weights: Vec<Array2<T>>,
    context: Array2<T>,
    ln1: LayerNormCache<T>,
    y1: Array2<T>,
    ff_pre: Array2<T>,
    ff_act: Array2<T>,
    ln2: LayerNormCache<T>,
    output: Array2<T>,
}

fn query_forward<T: Real>(p: &AttentionParams<T>, kv: &KeyValues<T>, hq: Array2<T>) -> LayerCache<T> {
    let dh = p.head_dim();
    let scale = T::one() / T::of(dh as f64).sqrt();
    let q = affine(hq.view(), &p.query_w, &p.query_b);
    let mut context = Array2::zeros((hq.nrows(), p.embed_dim()));
    let mut weights = Vec::with_capacity(p.heads);
    for head in 0..p.heads {
        let cols = s![.., head * dh..(head + 1) * dh];
        let mut scores = q.slice(cols).dot(&kv.k.slice(cols).t());
        scores.mapv_inplace(|v| v * scale);
        softmax_rows(&mut scores);
        context.slice_mut(cols).assign(&scores.dot(&kv.v.slice(cols)));
        weights.push(scores);
    }
    let attended = affine(context.view(), &p.out_w, &p.out_b);
    let (y1, ln1) = layer_norm(&(&hq + &attended), &p.norm1_gain, &p.norm1_bias);
    let ff_pre = affine(y1.view(), &p.ff1_w, &p.ff1_b);
    let ff_act = relu(&ff_pre);
    let ff_out = affine(ff_act.view(), &p.ff2_w, &p.ff2_b);
    let (output, ln2) = layer_norm(&(&y1 + &ff_out), &p.norm2_gain, &p.norm2_bias);
    LayerCache {
        input: hq,
        q,
        weights,
        context,
        ln1,
        y1,
        ff_pre,
        ff_act,
        ln2,
        output,
    }
}

/// Runs the encoder layer over every row of the embedding `h`, evaluating
/// queries in blocks of `block` rows.
pub fn self_attention_encode<T: Real>(
    h: &Array2<T>,
    p: &AttentionParams<T>,
    key_rows: Option<&[usize]>,
    block: usize,
) -> Result<Array2<T>> {
    if h.ncols() != p.embed_dim() {
        return Err(Error::Shape(format!(
            "embedding has {} columns, encoder expects {}",
            h.ncols(),
            p.embed_dim()
        )));
    }
    let kv = key_values(p, h, key_rows);
    let mut out = Array2::zeros(h.dim());
    let n = h.nrows();
    for start in (0..n).step_by(block.max(1)) {
        let end = (start + block.max(1)).min(n);
        let layer = query_forward(p, &kv, h.slice(s![start..end, ..]).to_owned());
        out.slice_mut(s![start..end, ..]).assign(&layer.output);
    }
    Ok(out)
}

/// `H_proj = H_attn W_p + b_p`.
pub fn project_to_genes<T: Real>(h_attn: ArrayView2<T>, p: &AttentionParams<T>) -> Result<Array2<T>> {
    if h_attn.ncols() != p.embed_dim() {
        return Err(Error::Shape(format!(
            "encoded features have {} columns, projection expects {}",
            h_attn.ncols(),
            p.embed_dim()
        )));
    }
    Ok(affine(h_attn, &p.proj_w, &p.proj_b))
}

/// Gene-space spatial features for every spot.
pub fn spatial_features<T: Real>(
    s: ArrayView2<T>,
    p: &AttentionParams<T>,
    key_rows: Option<&[usize]>,
    block: usize,
) -> Result<Array2<T>> {
    let h = embed_coords(s, p)?;
    let encoded = self_attention_encode(&h, p, key_rows, block)?;
    project_to_genes(encoded.view(), p)
}

/// Per-head attention weight matrices (queries × keys) over all spots.
pub fn attention_weights<T: Real>(
    s: ArrayView2<T>,
    p: &AttentionParams<T>,
    key_rows: Option<&[usize]>,
) -> Result<Vec<Array2<T>>> {
    let h = embed_coords(s, p)?;
    let kv = key_values(p, &h, key_rows);
    Ok(query_forward(p, &kv, h).weights)
}

/// Everything the backward pass needs from a training forward pass.
#[derive(Debug, Clone)]
pub struct AttentionCache<T> {
    coords: Array2<T>,
    query_rows: Vec<usize>,
    kv: KeyValues<T>,
    layer: LayerCache<T>,
}

/// Forward pass for the `query_rows` of a batch. Returns their rows of
/// `H_proj` together with the cache for [`backward`].
pub fn forward_train<T: Real>(
    s: ArrayView2<T>,
    p: &AttentionParams<T>,
    query_rows: &[usize],
    key_rows: Option<&[usize]>,
) -> Result<(Array2<T>, AttentionCache<T>)> {
    let h = embed_coords(s, p)?;
    if let Some(&bad) = query_rows.iter().find(|&&r| r >= h.nrows()) {
        return Err(Error::Shape(format!("query row {bad} out of range for {} spots", h.nrows())));
    }
    let kv = key_values(p, &h, key_rows);
    let layer = query_forward(p, &kv, h.select(Axis(0), query_rows));
    let out = affine(layer.output.view(), &p.proj_w, &p.proj_b);
    Ok((
        out,
        AttentionCache {
            coords: s.to_owned(),
            query_rows: query_rows.to_vec(),
            kv,
            layer,
        },
    ))
}

/// Gradients of every attention tensor given `d_out = ∂L/∂H_proj` for the
/// cached query rows.
pub fn backward<T: Real>(p: &AttentionParams<T>, cache: &AttentionCache<T>, d_out: &Array2<T>) -> AttentionParams<T> {
    let layer = &cache.layer;
    let kv = &cache.kv;
    let dh = p.head_dim();
    let scale = T::one() / T::of(dh as f64).sqrt();

    let proj_w = layer.output.t().dot(d_out);
    let proj_b = column_sums(d_out);
    let d_y2 = d_out.dot(&p.proj_w.t());

    let (d_r2, norm2_gain, norm2_bias) = layer_norm_backward(&d_y2, &layer.ln2, &p.norm2_gain);
    let ff2_w = layer.ff_act.t().dot(&d_r2);
    let ff2_b = column_sums(&d_r2);
    let mut d_ff = d_r2.dot(&p.ff2_w.t());
    relu_backward(&mut d_ff, &layer.ff_pre);
    let ff1_w = layer.y1.t().dot(&d_ff);
    let ff1_b = column_sums(&d_ff);
    let d_y1 = &d_r2 + &d_ff.dot(&p.ff1_w.t());

    let (d_r1, norm1_gain, norm1_bias) = layer_norm_backward(&d_y1, &layer.ln1, &p.norm1_gain);
    let out_w = layer.context.t().dot(&d_r1);
    let out_b = column_sums(&d_r1);
    let d_context = d_r1.dot(&p.out_w.t());

    let mut d_q = Array2::zeros(layer.q.dim());
    let mut d_k = Array2::zeros(kv.k.dim());
    let mut d_v = Array2::zeros(kv.v.dim());
    for (head, w) in layer.weights.iter().enumerate() {
        let cols = s![.., head * dh..(head + 1) * dh];
        let d_ctx = d_context.slice(cols);
        let d_w = d_ctx.dot(&kv.v.slice(cols).t());
        d_v.slice_mut(cols).assign(&w.t().dot(&d_ctx));
        let mut d_scores = softmax_backward(w, &d_w);
        d_scores.mapv_inplace(|v| v * scale);
        d_q.slice_mut(cols).assign(&d_scores.dot(&kv.k.slice(cols)));
        d_k.slice_mut(cols).assign(&d_scores.t().dot(&layer.q.slice(cols)));
    }

    let query_w = layer.input.t().dot(&d_q);
    let query_b = column_sums(&d_q);
    let key_w = kv.input.t().dot(&d_k);
    let key_b = column_sums(&d_k);
    let value_w = kv.input.t().dot(&d_v);
    let value_b = column_sums(&d_v);

    let d_hq = &d_r1 + &d_q.dot(&p.query_w.t());
    let d_hk = d_k.dot(&p.key_w.t()) + d_v.dot(&p.value_w.t());
    let mut d_h = Array2::zeros((cache.coords.nrows(), p.embed_dim()));
    for (row, &r) in d_hq.rows().into_iter().zip(&cache.query_rows) {
        let mut target = d_h.row_mut(r);
        target += &row;
    }
    match &kv.rows {
        Some(rows) => {
            for (row, &r) in d_hk.rows().into_iter().zip(rows) {
                let mut target = d_h.row_mut(r);
                target += &row;
            }
        }
        None => d_h += &d_hk,
    }
    let embed_w = cache.coords.t().dot(&d_h);
    let embed_b = column_sums(&d_h);

    AttentionParams {
        embed_w,
        embed_b,
        query_w,
        query_b,
        key_w,
        key_b,
        value_w,
        value_b,
        out_w,
        out_b,
        norm1_gain,
        norm1_bias,
        ff1_w,
        ff1_b,
        ff2_w,
        ff2_b,
        norm2_gain,
        norm2_bias,
        proj_w,
        proj_b,
        heads: p.heads,
    }
}

/// `[X_MAGIC ‖ H_proj]` with both blocks of gene width.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedFeatures<T> {
    pub matrix: Array2<T>,
    pub n_genes: usize,
}

impl<T: Real> FusedFeatures<T> {
    pub fn expression_block(&self) -> ArrayView2<'_, T> {
        self.matrix.slice(s![.., ..self.n_genes])
    }

    pub fn spatial_block(&self) -> ArrayView2<'_, T> {
        self.matrix.slice(s![.., self.n_genes..])
    }
}

pub fn fuse<T: Real>(x_magic: ArrayView2<T>, h_proj: ArrayView2<T>) -> Result<FusedFeatures<T>> {
    if x_magic.dim() != h_proj.dim() {
        return Err(Error::Shape(format!(
            "cannot fuse expression {:?} with spatial features {:?}",
            x_magic.dim(),
            h_proj.dim()
        )));
    }
    Ok(FusedFeatures {
        matrix: concatenate![Axis(1), x_magic, h_proj],
        n_genes: x_magic.ncols(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamSet;
    use crate::rng::seeded;
    use proptest::prelude::*;
    use rand::Rng;

    fn tiny(n: usize, genes: usize, seed: u64) -> (Array2<f64>, AttentionParams<f64>) {
        let cfg = AttentionConfig {
            embed_dim: 4,
            heads: 2,
            ff_dim: 6,
            ..Default::default()
        };
        let mut r = seeded(seed);
        let p = AttentionParams::init(&cfg, genes, &mut r).unwrap();
        let s = Array2::from_shape_fn((n, 2), |_| r.random_range(-1.5..1.5));
        (s, p)
    }

    #[test]
    fn shapes() {
        let (s, p) = tiny(7, 5, 1);
        let h = embed_coords(s.view(), &p).unwrap();
        assert_eq!(h.dim(), (7, 4));
        let enc = self_attention_encode(&h, &p, None, 3).unwrap();
        assert_eq!(enc.dim(), (7, 4));
        assert_eq!(project_to_genes(enc.view(), &p).unwrap().dim(), (7, 5));
        assert!(embed_coords(Array2::<f64>::zeros((3, 3)).view(), &p).is_err());
    }

    #[test]
    fn blocked_inference_matches_single_block() {
        let (s, p) = tiny(11, 3, 2);
        let a = spatial_features(s.view(), &p, None, 4).unwrap();
        let b = spatial_features(s.view(), &p, None, 100).unwrap();
        assert!(a.abs_diff_eq(&b, 1e-12));
        let (train, _) = forward_train(s.view(), &p, &[3, 9, 0], None).unwrap();
        assert!(train.abs_diff_eq(&a.select(Axis(0), &[3, 9, 0]), 1e-12));
    }

    #[test]
    fn heads_must_divide_embedding() {
        let cfg = AttentionConfig {
            embed_dim: 5,
            heads: 2,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn fuse_concatenates_blocks() {
        let x = Array2::from_elem((2, 3), 1.0);
        let h = Array2::from_elem((2, 3), 2.0);
        let f = fuse(x.view(), h.view()).unwrap();
        assert_eq!(f.matrix.dim(), (2, 6));
        assert_eq!(f.expression_block(), x);
        assert_eq!(f.spatial_block(), h);
        assert!(fuse(x.view(), Array2::zeros((2, 2)).view()).is_err());
    }

    #[test]
    fn landmarks_are_sorted_subsets() {
        assert_eq!(landmark_rows(10, None, 1), None);
        assert_eq!(landmark_rows(10, Some(10), 1), None);
        let rows = landmark_rows(100, Some(20), 1).unwrap();
        assert_eq!(rows.len(), 20);
        assert!(rows.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(Some(rows), landmark_rows(100, Some(20), 1));
    }

    fn check_backward(key_rows: Option<Vec<usize>>) {
        let (s, p) = tiny(6, 3, 4);
        let rows = [4usize, 1, 4];
        let mut r = seeded(77);
        let probe = Array2::from_shape_fn((rows.len(), 3), |_| r.random_range(-1.0..1.0));
        let loss = |p: &AttentionParams<f64>| {
            let (out, _) = forward_train(s.view(), p, &rows, key_rows.as_deref()).unwrap();
            (&out * &probe).sum()
        };
        let (_, cache) = forward_train(s.view(), &p, &rows, key_rows.as_deref()).unwrap();
        let grads = backward(&p, &cache, &probe);
        let eps = 1e-6;
        let names: Vec<_> = p.tensors().iter().map(|(n, _)| *n).collect();
        for (ti, name) in names.iter().enumerate() {
            let len = p.tensors()[ti].1.len();
            for idx in 0..len {
                let mut plus = p.clone();
                *plus.tensors_mut()[ti].1.iter_mut().nth(idx).unwrap() += eps;
                let mut minus = p.clone();
                *minus.tensors_mut()[ti].1.iter_mut().nth(idx).unwrap() -= eps;
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * eps);
                let an = *grads.tensors()[ti].1.iter().nth(idx).unwrap();
                assert!(
                    (fd - an).abs() <= 1e-6 * (1.0 + fd.abs()),
                    "{name}[{idx}]: analytic {an} vs numeric {fd}"
                );
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        check_backward(None);
    }

    #[test]
    fn backward_with_landmark_keys_matches_finite_differences() {
        check_backward(Some(vec![0, 2, 4, 5]));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn attention_rows_are_distributions(seed in 0u64..1000, n in 2usize..12) {
            let (s, p) = tiny(n, 2, seed);
            for w in attention_weights(s.view(), &p, None).unwrap() {
                prop_assert_eq!(w.dim(), (n, n));
                for row in w.rows() {
                    prop_assert!(row.iter().all(|&v| v >= 0.0));
                    prop_assert!((row.sum() - 1.0).abs() < 1e-6);
                }
            }
        }

        #[test]
        fn encoder_is_permutation_equivariant(seed in 0u64..1000, n in 2usize..10) {
            let (s, p) = tiny(n, 2, seed);
            let mut perm: Vec<usize> = (0..n).collect();
            perm.reverse();
            perm.rotate_left(seed as usize % n);
            let h = embed_coords(s.view(), &p).unwrap();
            let out = self_attention_encode(&h, &p, None, 64).unwrap();
            let hp = h.select(Axis(0), &perm);
            let out_p = self_attention_encode(&hp, &p, None, 64).unwrap();
            prop_assert!(out_p.abs_diff_eq(&out.select(Axis(0), &perm), 1e-10));
        }
    }
}
