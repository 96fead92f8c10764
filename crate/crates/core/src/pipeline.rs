//! End-to-end imputation: preprocess → diffuse → train → infer.

use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::preprocess::preprocess;
use crate::data::{CoordScaler, Dataset, ExpressionMatrix, SpatialCoords};
use crate::diffusion::{magic_impute, DiffusionConfig, MagicOutput};
use crate::error::{Error, Result};
use crate::model::{train, ModelCheckpoint, PreprocessingMeta, TrainedModel, TrainingConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub hvg_count: usize,
    pub diffusion: DiffusionConfig,
    pub training: TrainingConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            hvg_count: 3000,
            diffusion: DiffusionConfig::default(),
            training: TrainingConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hvg_count == 0 {
            return Err(Error::param("hvg_count", "must be at least 1"));
        }
        self.diffusion.validate()?;
        self.training.validate()
    }
}

/// Wall-clock seconds per stage.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimings {
    pub preprocess: f64,
    pub diffusion: f64,
    pub training: f64,
    pub inference: f64,
}

impl StageTimings {
    pub fn total(&self) -> f64 {
        self.preprocess + self.diffusion + self.training + self.inference
    }
}

impl fmt::Display for StageTimings {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "preprocess  {:8.3} s", self.preprocess)?;
        writeln!(f, "diffusion   {:8.3} s", self.diffusion)?;
        writeln!(f, "training    {:8.3} s", self.training)?;
        writeln!(f, "inference   {:8.3} s", self.inference)?;
        write!(f, "total       {:8.3} s", self.total())
    }
}

/// Seed-independent stages shared by every model fit on one dataset.
#[derive(Debug, Clone)]
pub struct Prepared {
    /// Dense normalized, log-transformed HVG matrix.
    pub x_d: ExpressionMatrix,
    pub normalization_target: f64,
    pub magic: MagicOutput,
    pub coords: SpatialCoords,
    pub coords_std: SpatialCoords,
    pub scaler: CoordScaler,
    pub timings: StageTimings,
}

impl Prepared {
    pub fn x_magic(&self) -> &ExpressionMatrix {
        &self.magic.imputed
    }
}

pub fn prepare(dataset: &Dataset, cfg: &PipelineConfig) -> Result<Prepared> {
    cfg.validate()?;
    let start = Instant::now();
    let pre = preprocess(&dataset.expression, cfg.hvg_count)?;
    let preprocess_s = start.elapsed().as_secs_f64();
    log::info!(
        "preprocessed {} spots x {} genes in {preprocess_s:.3} s",
        pre.matrix.n_spots(),
        pre.matrix.n_genes()
    );

    let start = Instant::now();
    let magic = magic_impute(&pre.matrix, &cfg.diffusion)?;
    let diffusion_s = start.elapsed().as_secs_f64();
    log::info!("diffusion finished in {diffusion_s:.3} s");

    let (coords_std, scaler) = dataset.coords.standardized();
    Ok(Prepared {
        x_d: pre.matrix,
        normalization_target: pre.normalization_target,
        magic,
        coords: dataset.coords.clone(),
        coords_std,
        scaler,
        timings: StageTimings {
            preprocess: preprocess_s,
            diffusion: diffusion_s,
            ..Default::default()
        },
    })
}

/// Trains a model on prepared data and packages it as a checkpoint.
pub fn fit(prepared: &Prepared, cfg: &PipelineConfig) -> Result<(TrainedModel, ModelCheckpoint, f64)> {
    let start = Instant::now();
    let x_magic = prepared.x_magic().to_dense_array();
    let model = train(x_magic.view(), prepared.coords_std.values(), &cfg.training)?;
    let seconds = start.elapsed().as_secs_f64();
    log::info!("training finished in {seconds:.3} s");
    let meta = PreprocessingMeta {
        hvg_genes: prepared.x_d.gene_ids().to_vec(),
        normalization_target: prepared.normalization_target,
        diffusion: cfg.diffusion,
        coord_scaler: prepared.scaler,
        pca_bypassed: prepared.magic.pca.bypassed,
    };
    let checkpoint = ModelCheckpoint::new(
        &model,
        cfg.training.clone(),
        meta,
        prepared.magic.pca.components.clone(),
        prepared.magic.pca.means.clone(),
    );
    Ok((model, checkpoint, seconds))
}

#[derive(Debug, Clone)]
pub struct ImputeOutput {
    pub imputed: ExpressionMatrix,
    pub checkpoint: ModelCheckpoint,
    pub loss_history: Vec<f64>,
    pub prepared: Prepared,
    pub timings: StageTimings,
}

pub fn run_impute(dataset: &Dataset, cfg: &PipelineConfig) -> Result<ImputeOutput> {
    let prepared = prepare(dataset, cfg)?;
    let (model, checkpoint, training_s) = fit(&prepared, cfg)?;
    let start = Instant::now();
    let imputed = checkpoint.infer(prepared.x_magic(), &prepared.coords)?;
    let inference_s = start.elapsed().as_secs_f64();
    let timings = StageTimings {
        training: training_s,
        inference: inference_s,
        ..prepared.timings
    };
    Ok(ImputeOutput {
        imputed,
        checkpoint,
        loss_history: model.loss_history,
        prepared,
        timings,
    })
}
