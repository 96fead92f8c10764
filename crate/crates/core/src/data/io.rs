//! Readers and writers for expression matrices, coordinates, and labels.
//!
//! Expression can be a dense CSV (header of gene ids, first column spot ids)
//! or a MatrixMarket coordinate file with `spots.txt` / `genes.txt` sidecars
//! in the same directory. Coordinates are `spot_id,x,y`; labels are
//! `spot_id,label`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;

use super::{Dataset, ExpressionMatrix, SpatialCoords, Values};
use crate::error::{Error, Result};
use crate::linalg::sparse::CsrMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExprFormat {
    MatrixMarket,
    Csv,
}

impl ExprFormat {
    /// `.mtx` files are MatrixMarket; anything else is treated as CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("mtx") => ExprFormat::MatrixMarket,
            _ => ExprFormat::Csv,
        }
    }
}

impl std::str::FromStr for ExprFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mtx" | "matrix-market" => Ok(ExprFormat::MatrixMarket),
            "csv" => Ok(ExprFormat::Csv),
            other => Err(Error::param("format", format!("unknown format `{other}`"))),
        }
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn csv_reader(path: &Path) -> Result<csv::Reader<BufReader<File>>> {
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(open(path)?))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    parse_err(path, line, e.to_string())
}

fn parse_f64(path: &Path, line: usize, field: &str) -> Result<f64> {
    field
        .parse::<f64>()
        .map_err(|_| parse_err(path, line, format!("`{field}` is not a number")))
}

pub fn read_expression_csv(path: &Path) -> Result<ExpressionMatrix> {
    let mut rdr = csv_reader(path)?;
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.len() < 2 {
        return Err(parse_err(path, 1, "header needs a spot column and at least one gene"));
    }
    let gene_ids: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let g = gene_ids.len();
    let mut spot_ids = Vec::new();
    let mut values = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = k + 2;
        if rec.len() != g + 1 {
            return Err(parse_err(
                path,
                line,
                format!("expected {} fields, found {}", g + 1, rec.len()),
            ));
        }
        spot_ids.push(rec[0].to_string());
        for field in rec.iter().skip(1) {
            let v = parse_f64(path, line, field)?;
            if !(v >= 0.0) || !v.is_finite() {
                return Err(parse_err(path, line, format!("invalid expression value `{field}`")));
            }
            values.push(v);
        }
    }
    let n = spot_ids.len();
    let values = Array2::from_shape_vec((n, g), values).map_err(|e| Error::Shape(e.to_string()))?;
    ExpressionMatrix::from_dense(values, spot_ids, gene_ids)
}

pub fn write_expression_csv(path: &Path, x: &ExpressionMatrix) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    let dense = x.to_dense_array();
    write!(w, "spot_id").map_err(io)?;
    for g in x.gene_ids() {
        write!(w, ",{g}").map_err(io)?;
    }
    writeln!(w).map_err(io)?;
    for (i, spot) in x.spot_ids().iter().enumerate() {
        write!(w, "{spot}").map_err(io)?;
        for v in dense.row(i) {
            // `{}` prints the shortest representation that round-trips exactly.
            write!(w, ",{v}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Reads a MatrixMarket `coordinate` file (`real`, `integer` or `pattern`;
/// `general` or `symmetric`).
pub fn read_matrix_market(path: &Path) -> Result<CsrMatrix> {
    let mut lines = open(path)?.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty file"))?;
    let header = header.map_err(|e| Error::io(path, e))?;
    let tokens: Vec<String> = header.split_whitespace().map(|t| t.to_lowercase()).collect();
    if tokens.len() < 5 || tokens[0] != "%%matrixmarket" || tokens[1] != "matrix" {
        return Err(parse_err(path, 1, "missing `%%MatrixMarket matrix` header"));
    }
    if tokens[2] != "coordinate" {
        return Err(parse_err(path, 1, "only coordinate format is supported"));
    }
    let pattern = match tokens[3].as_str() {
        "real" | "integer" | "double" => false,
        "pattern" => true,
        other => return Err(parse_err(path, 1, format!("unsupported field `{other}`"))),
    };
    let symmetric = match tokens[4].as_str() {
        "general" => false,
        "symmetric" => true,
        other => return Err(parse_err(path, 1, format!("unsupported symmetry `{other}`"))),
    };

    let mut dims: Option<(usize, usize, usize)> = None;
    let mut triplets = Vec::new();
    let mut entries = 0usize;
    for (k, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        let lineno = k + 1;
        let t = line.trim();
        if t.is_empty() || t.starts_with('%') {
            continue;
        }
        let fields: Vec<&str> = t.split_whitespace().collect();
        match dims {
            None => {
                if fields.len() != 3 {
                    return Err(parse_err(path, lineno, "size line needs `rows cols nnz`"));
                }
                let p = |s: &str| {
                    s.parse::<usize>()
                        .map_err(|_| parse_err(path, lineno, format!("`{s}` is not a count")))
                };
                dims = Some((p(fields[0])?, p(fields[1])?, p(fields[2])?));
                triplets.reserve(dims.unwrap().2);
            }
            Some((m, n, _)) => {
                let need = if pattern { 2 } else { 3 };
                if fields.len() < need {
                    return Err(parse_err(path, lineno, "truncated entry"));
                }
                let idx = |s: &str, bound: usize| -> Result<usize> {
                    match s.parse::<usize>() {
                        Ok(v) if v >= 1 && v <= bound => Ok(v - 1),
                        _ => Err(parse_err(path, lineno, format!("index `{s}` out of range"))),
                    }
                };
                let i = idx(fields[0], m)?;
                let j = idx(fields[1], n)?;
                let v = if pattern { 1.0 } else { parse_f64(path, lineno, fields[2])? };
                entries += 1;
                triplets.push((i, j, v));
                if symmetric && i != j {
                    triplets.push((j, i, v));
                }
            }
        }
    }
    let (m, n, nnz) = dims.ok_or_else(|| parse_err(path, 1, "missing size line"))?;
    if entries != nnz {
        return Err(parse_err(
            path,
            0,
            format!("header declares {nnz} entries, found {entries}"),
        ));
    }
    CsrMatrix::from_triplets(m, n, triplets)
}

pub fn write_matrix_market(path: &Path, m: &CsrMatrix) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "%%MatrixMarket matrix coordinate real general").map_err(io)?;
    writeln!(w, "{} {} {}", m.nrows(), m.ncols(), m.nnz()).map_err(io)?;
    for (i, j, v) in m.iter() {
        writeln!(w, "{} {} {}", i + 1, j + 1, v).map_err(io)?;
    }
    w.flush().map_err(io)
}

fn read_id_list(path: &Path) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for line in open(path)?.lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let t = line.trim();
        if !t.is_empty() {
            ids.push(t.to_string());
        }
    }
    Ok(ids)
}

fn write_id_list(path: &Path, ids: &[String]) -> Result<()> {
    let mut w = create(path)?;
    for id in ids {
        writeln!(w, "{id}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn sidecars(mtx: &Path) -> (PathBuf, PathBuf) {
    let dir = mtx.parent().unwrap_or_else(|| Path::new("."));
    (dir.join("spots.txt"), dir.join("genes.txt"))
}

/// Reads `matrix.mtx` (spots as rows) plus `spots.txt` and `genes.txt` next to it.
pub fn read_expression_mtx(path: &Path) -> Result<ExpressionMatrix> {
    let m = read_matrix_market(path)?;
    let (spots, genes) = sidecars(path);
    let spot_ids = read_id_list(&spots)?;
    let gene_ids = read_id_list(&genes)?;
    for (i, j, v) in m.iter() {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(Error::InvalidValue(format!(
                "{}: invalid expression value {v} at ({}, {})",
                path.display(),
                i + 1,
                j + 1
            )));
        }
    }
    ExpressionMatrix::from_sparse(m, spot_ids, gene_ids)
}

pub fn write_expression_mtx(path: &Path, x: &ExpressionMatrix) -> Result<()> {
    let csr = match x.values() {
        Values::Sparse(s) => s.clone(),
        Values::Dense(a) => CsrMatrix::from_dense(a.view()),
    };
    write_matrix_market(path, &csr)?;
    let (spots, genes) = sidecars(path);
    write_id_list(&spots, x.spot_ids())?;
    write_id_list(&genes, x.gene_ids())
}

pub fn read_expression(path: &Path, format: ExprFormat) -> Result<ExpressionMatrix> {
    match format {
        ExprFormat::MatrixMarket => read_expression_mtx(path),
        ExprFormat::Csv => read_expression_csv(path),
    }
}

const BINARY_MAGIC: &[u8; 8] = b"SPMATRX1";

/// Compact little-endian binary: magic, `n`, `g` as u64, length-prefixed
/// UTF-8 spot ids then gene ids, then row-major `f32` values.
pub fn write_expression_binary(path: &Path, x: &ExpressionMatrix) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    w.write_all(BINARY_MAGIC).map_err(io)?;
    w.write_all(&(x.n_spots() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&(x.n_genes() as u64).to_le_bytes()).map_err(io)?;
    for id in x.spot_ids().iter().chain(x.gene_ids()) {
        w.write_all(&(id.len() as u32).to_le_bytes()).map_err(io)?;
        w.write_all(id.as_bytes()).map_err(io)?;
    }
    for &v in x.to_dense_array().iter() {
        w.write_all(&(v as f32).to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_expression_binary(path: &Path) -> Result<ExpressionMatrix> {
    let mut bytes = Vec::new();
    open(path)?
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    let bad = || parse_err(path, 0, "truncated or corrupt binary matrix");
    let mut pos = 0usize;
    let mut take = |len: usize| -> Result<&[u8]> {
        let s = bytes.get(pos..pos + len).ok_or_else(bad)?;
        pos += len;
        Ok(s)
    };
    if take(8)? != BINARY_MAGIC {
        return Err(parse_err(path, 0, "bad magic"));
    }
    let n = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    let g = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    let mut ids = Vec::with_capacity(n + g);
    for _ in 0..n + g {
        let len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let s = std::str::from_utf8(take(len)?).map_err(|_| bad())?;
        ids.push(s.to_string());
    }
    let raw = take(n * g * 4)?;
    let values: Vec<f64> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let gene_ids = ids.split_off(n);
    let values = Array2::from_shape_vec((n, g), values).map_err(|e| Error::Shape(e.to_string()))?;
    ExpressionMatrix::from_dense(values, ids, gene_ids)
}

fn expect_header(path: &Path, rdr: &mut csv::Reader<BufReader<File>>, want: &[&str]) -> Result<()> {
    let header = rdr.headers().map_err(|e| csv_err(path, e))?;
    let got: Vec<&str> = header.iter().collect();
    if got != want {
        return Err(parse_err(
            path,
            1,
            format!("expected header `{}`, found `{}`", want.join(","), got.join(",")),
        ));
    }
    Ok(())
}

pub fn read_coords_csv(path: &Path) -> Result<(Vec<String>, Array2<f64>)> {
    let mut rdr = csv_reader(path)?;
    expect_header(path, &mut rdr, &["spot_id", "x", "y"])?;
    let mut ids = Vec::new();
    let mut vals = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        if rec.len() != 3 {
            return Err(parse_err(path, k + 2, "expected `spot_id,x,y`"));
        }
        ids.push(rec[0].to_string());
        vals.push(parse_f64(path, k + 2, &rec[1])?);
        vals.push(parse_f64(path, k + 2, &rec[2])?);
    }
    let n = ids.len();
    Ok((ids, Array2::from_shape_vec((n, 2), vals).map_err(|e| Error::Shape(e.to_string()))?))
}

pub fn write_coords_csv(path: &Path, spot_ids: &[String], coords: &SpatialCoords) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "spot_id,x,y").map_err(io)?;
    for (id, row) in spot_ids.iter().zip(coords.values().rows()) {
        writeln!(w, "{id},{},{}", row[0], row[1]).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_labels_csv(path: &Path) -> Result<Vec<(String, i64)>> {
    let mut rdr = csv_reader(path)?;
    expect_header(path, &mut rdr, &["spot_id", "label"])?;
    let mut out = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        if rec.len() != 2 {
            return Err(parse_err(path, k + 2, "expected `spot_id,label`"));
        }
        let label = rec[1]
            .parse::<i64>()
            .map_err(|_| parse_err(path, k + 2, format!("label `{}` is not an integer", &rec[1])))?;
        out.push((rec[0].to_string(), label));
    }
    Ok(out)
}

pub fn write_labels_csv(path: &Path, spot_ids: &[String], labels: &[i64]) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "spot_id,label").map_err(io)?;
    for (id, l) in spot_ids.iter().zip(labels) {
        writeln!(w, "{id},{l}").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Orders `keyed` rows to follow `spot_ids`. Every expression spot must be
/// present; extra keys are tolerated only if listed in `dropped`.
fn align<T: Clone>(
    what: &str,
    spot_ids: &[String],
    dropped: &[String],
    keyed: Vec<(String, T)>,
) -> Result<Vec<T>> {
    let mut index: HashMap<String, T> = HashMap::with_capacity(keyed.len());
    for (id, v) in keyed {
        if index.insert(id.clone(), v).is_some() {
            return Err(Error::Alignment(format!("duplicate spot `{id}` in {what}")));
        }
    }
    let mut out = Vec::with_capacity(spot_ids.len());
    for id in spot_ids {
        match index.remove(id) {
            Some(v) => out.push(v),
            None => {
                return Err(Error::Alignment(format!(
                    "spot `{id}` missing from {what}"
                )))
            }
        }
    }
    index.retain(|k, _| !dropped.contains(k));
    if let Some(extra) = index.keys().min() {
        return Err(Error::Alignment(format!(
            "{what} lists spot `{extra}` absent from the expression matrix"
        )));
    }
    Ok(out)
}

/// Loads expression, coordinates, and optional labels, aligned to the
/// expression spot order. Spots with zero total expression are dropped with
/// a warning.
pub fn load_dataset(
    expr_path: &Path,
    coords_path: &Path,
    labels_path: Option<&Path>,
    format: ExprFormat,
) -> Result<Dataset> {
    let expression = read_expression(expr_path, format)?;
    let sums = expression.row_sums();
    let keep: Vec<usize> = (0..sums.len()).filter(|&i| sums[i] > 0.0).collect();
    let dropped: Vec<String> = (0..sums.len())
        .filter(|&i| sums[i] <= 0.0)
        .map(|i| expression.spot_ids()[i].clone())
        .collect();
    for id in &dropped {
        log::warn!("dropping spot `{id}`: zero total expression");
    }
    let expression = if dropped.is_empty() {
        expression
    } else {
        expression.select_spots(&keep)
    };

    let (coord_ids, coord_vals) = read_coords_csv(coords_path)?;
    let keyed = coord_ids
        .into_iter()
        .zip(coord_vals.rows().into_iter().map(|r| [r[0], r[1]]))
        .collect();
    let rows = align("coordinates", expression.spot_ids(), &dropped, keyed)?;
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    let coords = SpatialCoords::new(
        Array2::from_shape_vec((rows.len(), 2), flat).map_err(|e| Error::Shape(e.to_string()))?,
    )?;

    let labels = match labels_path {
        Some(p) => Some(align("labels", expression.spot_ids(), &dropped, read_labels_csv(p)?)?),
        None => None,
    };
    Dataset::new(expression, coords, labels)
}

/// Writes a dataset as `expression.csv`, `coords.csv`, and (if present)
/// `labels.csv` under `dir`.
pub fn write_dataset(dir: &Path, data: &Dataset) -> Result<()> {
    let ids = data.expression.spot_ids();
    write_expression_csv(&dir.join("expression.csv"), &data.expression)?;
    write_coords_csv(&dir.join("coords.csv"), ids, &data.coords)?;
    if let Some(labels) = &data.labels {
        write_labels_csv(&dir.join("labels.csv"), ids, labels)?;
    }
    Ok(())
}
