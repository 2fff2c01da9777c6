//! Labeled data: CSV ingestion, standardization, splitting, inducing-point
//! initialization and minibatch scheduling.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SepError};

/// A binary classification dataset. Labels are stored as ±1.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub inputs: DMatrix<f64>,
    pub labels: DVector<f64>,
}

impl Dataset {
    pub fn new(inputs: DMatrix<f64>, labels: DVector<f64>) -> Result<Self> {
        if inputs.nrows() == 0 || inputs.ncols() == 0 {
            return Err(SepError::InvalidArg("dataset must be non-empty".into()));
        }
        if inputs.nrows() != labels.len() {
            return Err(SepError::InvalidArg(format!(
                "{} rows but {} labels",
                inputs.nrows(),
                labels.len()
            )));
        }
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(SepError::InvalidArg("non-finite feature value".into()));
        }
        for (i, &y) in labels.iter().enumerate() {
            if y != 1.0 && y != -1.0 {
                return Err(SepError::Label { row: i, value: y });
            }
        }
        Ok(Self { inputs, labels })
    }

    pub fn n(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }
}

/// Per-feature affine map fitted by [`standardize`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardization {
    /// Identity transform for d features.
    pub fn identity(d: usize) -> Self {
        Self {
            mean: vec![0.0; d],
            scale: vec![1.0; d],
        }
    }

    pub fn apply_matrix(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = x.clone();
        for j in 0..x.ncols() {
            let (m, s) = (self.mean[j], self.scale[j]);
            for i in 0..x.nrows() {
                out[(i, j)] = (x[(i, j)] - m) / s;
            }
        }
        out
    }

    pub fn apply_row(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn invert_matrix(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = x.clone();
        for j in 0..x.ncols() {
            let (m, s) = (self.mean[j], self.scale[j]);
            for i in 0..x.nrows() {
                out[(i, j)] = x[(i, j)] * s + m;
            }
        }
        out
    }
}

fn parse_cell(raw: &str, row: usize, col: usize) -> Result<f64> {
    raw.trim().parse::<f64>().map_err(|_| SepError::Csv {
        row,
        col,
        msg: format!("cannot parse {raw:?} as a number"),
    })
}

/// Load a CSV file. The first row is treated as a header when any of its
/// cells fails to parse as a number. Labels may be encoded as {-1,+1} or
/// {0,1}; 0 maps to -1.
pub fn load_csv(path: &Path, label_column: usize) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|source| SepError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<f64> = Vec::new();
    let mut width = None;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if lineno == 0 && cells.iter().any(|c| c.trim().parse::<f64>().is_err()) {
            continue; // header
        }
        let w = *width.get_or_insert(cells.len());
        if cells.len() != w {
            return Err(SepError::Csv {
                row: lineno,
                col: 0,
                msg: format!("expected {w} columns, found {}", cells.len()),
            });
        }
        if label_column >= w {
            return Err(SepError::InvalidArg(format!(
                "label column {label_column} out of range for {w} columns"
            )));
        }
        let mut feats = Vec::with_capacity(w - 1);
        for (col, raw) in cells.iter().enumerate() {
            let v = parse_cell(raw, lineno, col)?;
            if col == label_column {
                let y = match v {
                    v if v == 1.0 => 1.0,
                    v if v == -1.0 => -1.0,
                    v if v == 0.0 => -1.0,
                    _ => return Err(SepError::Label { row: lineno, value: v }),
                };
                labels.push(y);
            } else {
                feats.push(v);
            }
        }
        rows.push(feats);
    }
    if rows.is_empty() {
        return Err(SepError::InvalidArg(format!(
            "no data rows in {}",
            path.display()
        )));
    }
    let d = rows[0].len();
    let inputs = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
    Dataset::new(inputs, DVector::from_vec(labels))
}

/// Write a dataset back out, label last, full f64 round-trip precision.
pub fn save_csv(data: &Dataset, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|source| SepError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut write = || -> std::io::Result<()> {
        for i in 0..data.n() {
            let mut cells: Vec<String> = (0..data.dim())
                .map(|j| format!("{:?}", data.inputs[(i, j)]))
                .collect();
            cells.push(format!("{}", data.labels[i] as i64));
            writeln!(f, "{}", cells.join(","))?;
        }
        Ok(())
    };
    write().map_err(|source| SepError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Center and scale each feature to sample mean 0, sd 1. Constant features
/// keep scale 1 and map to 0.
pub fn standardize(data: &Dataset) -> (Dataset, Standardization) {
    let n = data.n() as f64;
    let d = data.dim();
    let mut mean = vec![0.0; d];
    let mut scale = vec![1.0; d];
    for j in 0..d {
        let col = data.inputs.column(j);
        let m = col.sum() / n;
        let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
        mean[j] = m;
        if var > 0.0 {
            scale[j] = var.sqrt();
        }
    }
    let st = Standardization { mean, scale };
    let out = Dataset {
        inputs: st.apply_matrix(&data.inputs),
        labels: data.labels.clone(),
    };
    (out, st)
}

/// Deterministic train/test split; `test_fraction` of rows go to the second
/// part (at least one row in each part).
pub fn split(data: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(SepError::InvalidArg(format!(
            "test fraction must be in (0,1), got {test_fraction}"
        )));
    }
    let n = data.n();
    let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let (test_idx, train_idx) = idx.split_at(n_test);
    Ok((take_rows(data, train_idx), take_rows(data, test_idx)))
}

pub fn take_rows(data: &Dataset, idx: &[usize]) -> Dataset {
    let inputs = DMatrix::from_fn(idx.len(), data.dim(), |i, j| data.inputs[(idx[i], j)]);
    let labels = DVector::from_fn(idx.len(), |i, _| data.labels[idx[i]]);
    Dataset { inputs, labels }
}

/// Pick m distinct training rows as initial inducing points.
pub fn init_inducing(data: &Dataset, m: usize, seed: u64) -> Result<DMatrix<f64>> {
    let n = data.n();
    if m == 0 || m > n {
        return Err(SepError::InvalidArg(format!(
            "need 1 <= m <= n, got m={m}, n={n}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9e37_79b9));
    idx.shuffle(&mut rng);
    idx.truncate(m);
    Ok(DMatrix::from_fn(m, data.dim(), |i, j| {
        data.inputs[(idx[i], j)]
    }))
}

/// Epoch-wise minibatch order: a fresh seeded permutation per epoch, chunked
/// into batches of `batch_size` (last batch may be smaller).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MinibatchSchedule {
    pub batch_size: usize,
    pub seed: u64,
    pub epoch: u64,
    n: usize,
}

impl MinibatchSchedule {
    pub fn new(n: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 || batch_size > n {
            return Err(SepError::InvalidArg(format!(
                "batch size must be in 1..={n}, got {batch_size}"
            )));
        }
        Ok(Self {
            batch_size,
            seed,
            epoch: 0,
            n,
        })
    }

    /// Batches for the current epoch; advances the epoch counter.
    pub fn next_epoch(&mut self) -> Vec<Vec<usize>> {
        let mut idx: Vec<usize> = (0..self.n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ self.epoch.wrapping_mul(0xa076_1d64_78bd_642f));
        idx.shuffle(&mut rng);
        self.epoch += 1;
        idx.chunks(self.batch_size).map(|c| c.to_vec()).collect()
    }
}

/// Two isotropic Gaussian blobs, one per class, centred at ±`offset` along
/// every axis. Overlap (and hence Bayes error) is controlled by `offset`.
pub fn gaussian_blobs(n: usize, d: usize, offset: f64, seed: u64) -> Dataset {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = DMatrix::zeros(n, d);
    let mut labels = DVector::zeros(n);
    for i in 0..n {
        let y = if rng.random::<bool>() { 1.0 } else { -1.0 };
        labels[i] = y;
        for j in 0..d {
            // Box-Muller from two uniforms.
            let u1: f64 = rng.random::<f64>().max(1e-12);
            let u2: f64 = rng.random();
            let g = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            inputs[(i, j)] = y * offset + g;
        }
    }
    Dataset { inputs, labels }
}
