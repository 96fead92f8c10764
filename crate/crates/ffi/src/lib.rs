//! C ABI for the spmagic imputation pipeline.
//!
//! Every fallible function returns an [`SpmStatus`]. On failure a message is
//! available from [`spm_last_error`] on the same thread until the next call.
//! Objects are opaque handles created by `*_new`/`*_load`/producer functions
//! and released with the matching `*_free`. Matrices cross the boundary as
//! row-major `double` buffers.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use ndarray::Array2;
use spmagic::config::RunConfig;
use spmagic::data::io::{load_dataset, ExprFormat};
use spmagic::data::{default_ids, Dataset, ExpressionMatrix, SpatialCoords};
use spmagic::eval::{ari_from_labels, generate_synthetic, SpatialLayout, SyntheticSpec};
use spmagic::model::ModelCheckpoint;
use spmagic::pipeline::run_impute;
use spmagic::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Shape = 5,
    Alignment = 6,
    Numerical = 7,
    GeneMismatch = 8,
    Checkpoint = 9,
    Resource = 10,
    MissingLabels = 11,
    Panic = 12,
}

impl From<&Error> for SpmStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Io { .. } => SpmStatus::Io,
            Error::Parse { .. } => SpmStatus::Parse,
            Error::InvalidValue(_) | Error::InvalidParameter { .. } => SpmStatus::InvalidArgument,
            Error::Shape(_) => SpmStatus::Shape,
            Error::Alignment(_) => SpmStatus::Alignment,
            Error::ZeroRowSum { .. } | Error::IsolatedSpot { .. } | Error::NonFiniteLoss { .. } => {
                SpmStatus::Numerical
            }
            Error::GeneMismatch(_) => SpmStatus::GeneMismatch,
            Error::Checkpoint(_) => SpmStatus::Checkpoint,
            Error::Resource(_) => SpmStatus::Resource,
            Error::MissingLabels => SpmStatus::MissingLabels,
        }
    }
}

/// Run configuration. Keys and defaults match the command line.
pub struct SpmConfig(RunConfig);

/// Expression matrix, coordinates, and optional integer labels.
pub struct SpmDataset(Dataset);

/// Imputed matrix with the checkpoint and loss history that produced it.
pub struct SpmResult {
    imputed: Array2<f64>,
    gene_ids: Vec<CString>,
    checkpoint: ModelCheckpoint,
    loss_history: Vec<f64>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

struct Failure(SpmStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(SpmStatus::from(&e), e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(SpmStatus::InvalidArgument, msg.into())
}

/// Clears the last error, runs `f`, and converts its outcome to a status.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SpmStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SpmStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SpmStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure(SpmStatus::NullPointer, format!("`{what}` is null")))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| Failure(SpmStatus::NullPointer, format!("`{what}` is null")))
}

unsafe fn string<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(SpmStatus::NullPointer, format!("`{what}` is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("`{what}` is not valid UTF-8")))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure(SpmStatus::NullPointer, format!("`{what}` is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

/// Message for the most recent failure on this thread, or null. The pointer
/// stays valid until the next spm_* call on the same thread.
#[no_mangle]
pub extern "C" fn spm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Default configuration. Never null.
#[no_mangle]
pub extern "C" fn spm_config_new() -> *mut SpmConfig {
    boxed(SpmConfig(RunConfig::default()))
}

/// Reads a `key = value` config file over the defaults.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn spm_config_load(path: *const c_char, out: *mut *mut SpmConfig) -> SpmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let cfg = RunConfig::from_file(&PathBuf::from(string(path, "path")?))?;
        *out = boxed(SpmConfig(cfg));
        Ok(())
    })
}

/// Sets one key from its textual value, e.g. `("epochs", "20")`. The value
/// uses config file syntax. Cross-key constraints are checked by
/// [`spm_config_validate`] and before a run.
///
/// # Safety
/// `cfg` must come from this library; `key` and `value` must be
/// NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn spm_config_set(cfg: *mut SpmConfig, key: *const c_char, value: *const c_char) -> SpmStatus {
    guard(|| {
        let cfg = out_ptr(cfg, "cfg")?;
        let (key, value) = (string(key, "key")?, string(value, "value")?);
        let mut table = toml::Table::try_from(&cfg.0).map_err(|e| invalid(e.to_string()))?;
        let parsed: toml::Table =
            toml::from_str(&format!("v = {value}")).map_err(|_| invalid(format!("cannot parse value `{value}`")))?;
        if !table.contains_key(key) {
            return Err(invalid(format!("unknown config key `{key}`")));
        }
        table.insert(key.to_string(), parsed["v"].clone());
        cfg.0 = table
            .try_into()
            .map_err(|e: toml::de::Error| invalid(format!("`{key}`: {}", e.message())))?;
        Ok(())
    })
}

/// # Safety
/// `cfg` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn spm_config_validate(cfg: *const SpmConfig) -> SpmStatus {
    guard(|| Ok(borrow(cfg, "cfg")?.0.validate()?))
}

/// # Safety
/// `cfg` must come from this library or be null; it must not be used after.
#[no_mangle]
pub unsafe extern "C" fn spm_config_free(cfg: *mut SpmConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Builds a dataset from row-major buffers: `expression` is
/// `n_spots * n_genes`, `coords` is `n_spots * 2`, and `labels` is
/// `n_spots` or null. Spots and genes get generated ids.
///
/// # Safety
/// Buffers must hold the stated number of elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn spm_dataset_new(
    n_spots: usize,
    n_genes: usize,
    expression: *const f64,
    coords: *const f64,
    labels: *const i64,
    out: *mut *mut SpmDataset,
) -> SpmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let len = n_spots
            .checked_mul(n_genes)
            .ok_or_else(|| invalid("n_spots * n_genes overflows"))?;
        let x = slice(expression, len, "expression")?;
        let s = slice(coords, n_spots * 2, "coords")?;
        let labels = if labels.is_null() {
            None
        } else {
            Some(slice(labels, n_spots, "labels")?.to_vec())
        };
        let x = Array2::from_shape_vec((n_spots, n_genes), x.to_vec()).map_err(|e| Failure::from(Error::Shape(e.to_string())))?;
        let s = Array2::from_shape_vec((n_spots, 2), s.to_vec()).map_err(|e| Failure::from(Error::Shape(e.to_string())))?;
        let expr = ExpressionMatrix::from_dense(x, default_ids("spot", n_spots), default_ids("gene", n_genes))?;
        *out = boxed(SpmDataset(Dataset::new(expr, SpatialCoords::new(s)?, labels)?));
        Ok(())
    })
}

/// Loads a dataset from files. `labels_path` may be null. MatrixMarket is
/// selected by a `.mtx` extension, CSV otherwise.
///
/// # Safety
/// Paths must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn spm_dataset_load(
    expr_path: *const c_char,
    coords_path: *const c_char,
    labels_path: *const c_char,
    out: *mut *mut SpmDataset,
) -> SpmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let expr = PathBuf::from(string(expr_path, "expr_path")?);
        let coords = PathBuf::from(string(coords_path, "coords_path")?);
        let labels = if labels_path.is_null() {
            None
        } else {
            Some(PathBuf::from(string(labels_path, "labels_path")?))
        };
        let data = load_dataset(&expr, &coords, labels.as_deref(), ExprFormat::from_path(&expr))?;
        *out = boxed(SpmDataset(data));
        Ok(())
    })
}

/// Synthetic labeled dataset. `layout` is 0 for blocks, 1 for stripes.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn spm_dataset_simulate(
    n_spots: usize,
    n_genes: usize,
    n_clusters: usize,
    separation: f64,
    dropout: f64,
    layout: u32,
    seed: u64,
    out: *mut *mut SpmDataset,
) -> SpmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let spatial_layout = match layout {
            0 => SpatialLayout::Blocks,
            1 => SpatialLayout::Stripes,
            other => return Err(invalid(format!("unknown layout {other}"))),
        };
        let data = generate_synthetic(&SyntheticSpec {
            n_spots,
            n_genes,
            n_clusters,
            cluster_separation: separation,
            dropout_rate: dropout,
            spatial_layout,
            seed,
        })?;
        *out = boxed(SpmDataset(data));
        Ok(())
    })
}

/// # Safety
/// `data` must come from this library; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn spm_dataset_shape(data: *const SpmDataset, n_spots: *mut usize, n_genes: *mut usize) -> SpmStatus {
    guard(|| {
        let (s, g) = borrow(data, "data")?.0.expression.shape();
        *out_ptr(n_spots, "n_spots")? = s;
        *out_ptr(n_genes, "n_genes")? = g;
        Ok(())
    })
}

/// Copies the labels into `buf` (length `n_spots`).
///
/// # Safety
/// `data` must come from this library; `buf` must hold `len` elements.
#[no_mangle]
pub unsafe extern "C" fn spm_dataset_labels(data: *const SpmDataset, buf: *mut i64, len: usize) -> SpmStatus {
    guard(|| {
        let labels = borrow(data, "data")?.0.labels.as_ref().ok_or(Error::MissingLabels)?;
        copy_out(labels, buf, len)
    })
}

/// # Safety
/// `data` must come from this library or be null; it must not be used after.
#[no_mangle]
pub unsafe extern "C" fn spm_dataset_free(data: *mut SpmDataset) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

/// Runs the full pipeline. `cfg` may be null for defaults.
///
/// # Safety
/// Handles must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn spm_impute(data: *const SpmDataset, cfg: *const SpmConfig, out: *mut *mut SpmResult) -> SpmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let data = &borrow(data, "data")?.0;
        let cfg = cfg.as_ref().map_or_else(RunConfig::default, |c| c.0.clone());
        cfg.validate()?;
        let res = cfg.install(|| run_impute(data, &cfg.to_pipeline()))??;
        let gene_ids = res
            .imputed
            .gene_ids()
            .iter()
            .map(|g| CString::new(g.as_str()).unwrap_or_default())
            .collect();
        *out = boxed(SpmResult {
            imputed: res.imputed.to_dense_array(),
            gene_ids,
            checkpoint: res.checkpoint,
            loss_history: res.loss_history,
        });
        Ok(())
    })
}

/// Rows are the dataset spots; columns are the selected genes.
///
/// # Safety
/// `res` must come from this library; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn spm_result_shape(res: *const SpmResult, n_spots: *mut usize, n_genes: *mut usize) -> SpmStatus {
    guard(|| {
        let r = borrow(res, "res")?;
        *out_ptr(n_spots, "n_spots")? = r.imputed.nrows();
        *out_ptr(n_genes, "n_genes")? = r.imputed.ncols();
        Ok(())
    })
}

unsafe fn copy_out<T: Copy>(src: &[T], buf: *mut T, len: usize) -> Result<(), Failure> {
    if len != src.len() {
        return Err(Failure(
            SpmStatus::Shape,
            format!("buffer holds {len} elements, {} required", src.len()),
        ));
    }
    if len > 0 {
        if buf.is_null() {
            return Err(Failure(SpmStatus::NullPointer, "`buf` is null".into()));
        }
        ptr::copy_nonoverlapping(src.as_ptr(), buf, len);
    }
    Ok(())
}

/// Copies the imputed matrix row-major into `buf` of exactly
/// `n_spots * n_genes` elements.
///
/// # Safety
/// `res` must come from this library; `buf` must hold `len` elements.
#[no_mangle]
pub unsafe extern "C" fn spm_result_values(res: *const SpmResult, buf: *mut f64, len: usize) -> SpmStatus {
    guard(|| {
        let r = borrow(res, "res")?;
        let flat: Vec<f64> = r.imputed.iter().copied().collect();
        copy_out(&flat, buf, len)
    })
}

/// Gene id of column `index`, or null when out of range. The string is
/// owned by `res`.
///
/// # Safety
/// `res` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn spm_result_gene_id(res: *const SpmResult, index: usize) -> *const c_char {
    res.as_ref()
        .and_then(|r| r.gene_ids.get(index))
        .map_or(ptr::null(), |s| s.as_ptr())
}

/// Number of training epochs recorded.
///
/// # Safety
/// `res` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn spm_result_epochs(res: *const SpmResult) -> usize {
    res.as_ref().map_or(0, |r| r.loss_history.len())
}

/// Copies the per-epoch mean training loss into `buf`.
///
/// # Safety
/// `res` must come from this library; `buf` must hold `len` elements.
#[no_mangle]
pub unsafe extern "C" fn spm_result_loss_history(res: *const SpmResult, buf: *mut f64, len: usize) -> SpmStatus {
    guard(|| copy_out(&borrow(res, "res")?.loss_history, buf, len))
}

/// Writes the trained model checkpoint to `path`.
///
/// # Safety
/// `res` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn spm_result_save_checkpoint(res: *const SpmResult, path: *const c_char) -> SpmStatus {
    guard(|| {
        let r = borrow(res, "res")?;
        Ok(r.checkpoint.save(&PathBuf::from(string(path, "path")?))?)
    })
}

/// # Safety
/// `res` must come from this library or be null; it must not be used after.
#[no_mangle]
pub unsafe extern "C" fn spm_result_free(res: *mut SpmResult) {
    if !res.is_null() {
        drop(Box::from_raw(res));
    }
}

/// Adjusted Rand index between two labelings of `n` items.
///
/// # Safety
/// `a` and `b` must hold `n` elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn spm_ari(a: *const i64, b: *const i64, n: usize, out: *mut f64) -> SpmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ari_from_labels(slice(a, n, "a")?, slice(b, n, "b")?)?;
        Ok(())
    })
}
