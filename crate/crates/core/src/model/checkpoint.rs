//! Self-describing model checkpoint.
//!
//! Layout: the 8-byte magic `SPMAGIC1`, a little-endian `u64` header length,
//! a JSON header (configuration, preprocessing metadata, and a directory of
//! tensor names and shapes), then every tensor in directory order as
//! row-major little-endian `f32`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use super::train::{predict, TrainedModel, TrainingConfig};
use super::AutoencoderParams;
use crate::attention::{landmark_rows, AttentionParams};
use crate::data::{CoordScaler, ExpressionMatrix, SpatialCoords, Values};
use crate::diffusion::DiffusionConfig;
use crate::error::{Error, Result};
use crate::nn::ParamSet;
use crate::rng::seeded;

pub const MAGIC: &[u8; 8] = b"SPMAGIC1";

/// How raw counts were turned into the model's input space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessingMeta {
    pub hvg_genes: Vec<String>,
    pub normalization_target: f64,
    pub diffusion: DiffusionConfig,
    pub coord_scaler: CoordScaler,
    pub pca_bypassed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub attention: AttentionParams<f32>,
    pub autoencoder: AutoencoderParams<f32>,
    pub config: TrainingConfig,
    pub preprocessing: PreprocessingMeta,
    /// PCA loadings (genes × components) used to build the diffusion graph.
    pub pca_components: Array2<f32>,
    pub pca_means: Array1<f32>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: TrainingConfig,
    preprocessing: PreprocessingMeta,
    tensors: Vec<TensorEntry>,
}

const PCA_COMPONENTS: &str = "pca.components";
const PCA_MEANS: &str = "pca.means";

impl ModelCheckpoint {
    pub fn new(
        model: &TrainedModel,
        config: TrainingConfig,
        preprocessing: PreprocessingMeta,
        pca_components: Array2<f64>,
        pca_means: Array1<f64>,
    ) -> Self {
        Self {
            attention: model.attention.clone(),
            autoencoder: model.autoencoder.clone(),
            config,
            preprocessing,
            pca_components: pca_components.mapv(|v| v as f32),
            pca_means: pca_means.mapv(|v| v as f32),
        }
    }

    pub fn n_genes(&self) -> usize {
        self.preprocessing.hvg_genes.len()
    }

    fn all_tensors(&self) -> Vec<(&'static str, ndarray::ArrayViewD<'_, f32>)> {
        let mut out = self.attention.tensors();
        out.extend(self.autoencoder.tensors());
        out.push((PCA_COMPONENTS, self.pca_components.view().into_dyn()));
        out.push((PCA_MEANS, self.pca_means.view().into_dyn()));
        out
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let tensors = self.all_tensors();
        let header = Header {
            config: self.config.clone(),
            preprocessing: self.preprocessing.clone(),
            tensors: tensors
                .iter()
                .map(|(name, t)| TensorEntry {
                    name: (*name).to_string(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(format!("encoding header: {e}")))?;
        let data_len: usize = tensors.iter().map(|(_, t)| t.len() * 4).sum();
        let mut out = Vec::with_capacity(16 + json.len() + data_len);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &tensors {
            // Logical row-major order regardless of memory layout.
            for v in t.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(Error::Checkpoint("missing SPMAGIC1 magic".into()));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = &bytes[16..];
        if body.len() < header_len {
            return Err(Error::Checkpoint("truncated header".into()));
        }
        let header: Header = serde_json::from_slice(&body[..header_len])
            .map_err(|e| Error::Checkpoint(format!("decoding header: {e}")))?;
        let mut data = &body[header_len..];
        let mut tensors: BTreeMap<String, ArrayD<f32>> = BTreeMap::new();
        for entry in &header.tensors {
            let len: usize = entry.shape.iter().product();
            if data.len() < len * 4 {
                return Err(Error::Checkpoint(format!("truncated data for tensor `{}`", entry.name)));
            }
            let values = data[..len * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            data = &data[len * 4..];
            let arr = ArrayD::from_shape_vec(IxDyn(&entry.shape), values)
                .map_err(|e| Error::Checkpoint(format!("tensor `{}`: {e}", entry.name)))?;
            if tensors.insert(entry.name.clone(), arr).is_some() {
                return Err(Error::Checkpoint(format!("duplicate tensor `{}`", entry.name)));
            }
        }
        if !data.is_empty() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", data.len())));
        }

        let g = header.preprocessing.hvg_genes.len();
        let cfg = &header.config;
        // Shape templates; every value is overwritten below.
        let mut attention = AttentionParams::<f32>::init(&cfg.attention, g, &mut seeded(0))?;
        let mut autoencoder = AutoencoderParams::<f32>::init(&cfg.autoencoder, g, &mut seeded(0))?;
        let mut fill = |name: &str, mut target: ndarray::ArrayViewMutD<'_, f32>| -> Result<()> {
            let src = tensors
                .remove(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
            if src.shape() != target.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{name}` has shape {:?}, expected {:?}",
                    src.shape(),
                    target.shape()
                )));
            }
            target.assign(&src);
            Ok(())
        };
        for (name, t) in attention.tensors_mut() {
            fill(name, t)?;
        }
        for (name, t) in autoencoder.tensors_mut() {
            fill(name, t)?;
        }
        let take2 = |tensors: &mut BTreeMap<String, ArrayD<f32>>, name: &str| -> Result<Array2<f32>> {
            tensors
                .remove(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?
                .into_dimensionality()
                .map_err(|e| Error::Checkpoint(format!("tensor `{name}`: {e}")))
        };
        let pca_components = take2(&mut tensors, PCA_COMPONENTS)?;
        let pca_means: Array1<f32> = tensors
            .remove(PCA_MEANS)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{PCA_MEANS}`")))?
            .into_dimensionality()
            .map_err(|e| Error::Checkpoint(format!("tensor `{PCA_MEANS}`: {e}")))?;
        if let Some(extra) = tensors.keys().next() {
            return Err(Error::Checkpoint(format!("unexpected tensor `{extra}`")));
        }
        Ok(Self {
            attention,
            autoencoder,
            config: header.config,
            preprocessing: header.preprocessing,
            pca_components,
            pca_means,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    /// Evaluation-mode reconstruction for a dataset whose diffused HVG matrix
    /// is `x_magic`. The gene set must match the checkpoint exactly.
    pub fn infer(&self, x_magic: &ExpressionMatrix, coords: &SpatialCoords) -> Result<ExpressionMatrix> {
        if x_magic.gene_ids() != self.preprocessing.hvg_genes.as_slice() {
            let missing = self
                .preprocessing
                .hvg_genes
                .iter()
                .find(|g| !x_magic.gene_ids().contains(g));
            return Err(Error::GeneMismatch(match missing {
                Some(g) => format!("checkpoint gene `{g}` is absent from the input"),
                None => format!(
                    "input genes differ from the {} checkpoint genes in count or order",
                    self.n_genes()
                ),
            }));
        }
        if coords.n_spots() != x_magic.n_spots() {
            return Err(Error::Shape(format!(
                "{} coordinates for {} spots",
                coords.n_spots(),
                x_magic.n_spots()
            )));
        }
        let s = self.preprocessing.coord_scaler.apply(coords).values().mapv(|v| v as f32);
        let x = x_magic.to_dense_array().mapv(|v| v as f32);
        let keys = landmark_rows(x.nrows(), self.config.attention.landmarks, self.config.seed);
        let out = predict(
            &self.attention,
            &self.autoencoder,
            x.view(),
            s.view(),
            keys.as_deref(),
            self.config.attention.query_block,
        )?;
        Ok(x_magic.with_values(Values::Dense(out.mapv(f64::from))))
    }
}
