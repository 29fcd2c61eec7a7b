//! Shared data model: responses, feature blocks, unpenalized covariates,
//! standardization bookkeeping and fitted coefficients.

use log::warn;
use ndarray::{s, Array1, Array2, ArrayView2, Axis, ShapeBuilder};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ipf::PenaltyConfig;

/// Responses `Y` (n×m), ordered penalized feature blocks `X_1..X_S` and an
/// optional block `U` of unpenalized covariates, all sharing the same rows.
///
/// The blocks are stored side by side in one column-major matrix so that
/// solvers can walk feature columns contiguously.
#[derive(Clone, Debug)]
pub struct Dataset {
    y: Array2<f64>,
    x: Array2<f64>,
    offsets: Vec<usize>,
    u: Option<Array2<f64>>,
    pub row_ids: Vec<String>,
    pub response_ids: Vec<String>,
    pub feature_ids: Vec<String>,
    pub covariate_ids: Vec<String>,
}

fn check_finite(name: &str, a: ArrayView2<f64>) -> Result<()> {
    for ((row, col), v) in a.indexed_iter() {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                matrix: name.to_string(),
                row,
                col,
            });
        }
    }
    Ok(())
}

fn default_ids(prefix: &str, count: usize) -> Vec<String> {
    (1..=count).map(|i| format!("{prefix}{i}")).collect()
}

/// Validate shapes and values and build a [`Dataset`].
pub fn assemble_dataset(
    y: Array2<f64>,
    blocks: Vec<Array2<f64>>,
    u: Option<Array2<f64>>,
) -> Result<Dataset> {
    Dataset::new(y, blocks, u)
}

impl Dataset {
    pub fn new(y: Array2<f64>, blocks: Vec<Array2<f64>>, u: Option<Array2<f64>>) -> Result<Self> {
        let n = y.nrows();
        if n < 2 {
            return Err(Error::dims(format!("need at least 2 rows, got {n}")));
        }
        if y.ncols() == 0 {
            return Err(Error::dims("response matrix has no columns"));
        }
        if blocks.is_empty() {
            return Err(Error::dims("at least one feature block is required"));
        }
        for (s, b) in blocks.iter().enumerate() {
            if b.ncols() == 0 {
                return Err(Error::EmptyBlock(s + 1));
            }
            if b.nrows() != n {
                return Err(Error::dims(format!(
                    "block {} has {} rows, responses have {n}",
                    s + 1,
                    b.nrows()
                )));
            }
        }
        if let Some(u) = &u {
            if u.nrows() != n {
                return Err(Error::dims(format!(
                    "unpenalized block has {} rows, responses have {n}",
                    u.nrows()
                )));
            }
            if u.ncols() == 0 {
                return Err(Error::dims("unpenalized block has no columns"));
            }
        }
        check_finite("Y", y.view())?;
        for (s, b) in blocks.iter().enumerate() {
            check_finite(&format!("X{}", s + 1), b.view())?;
        }
        if let Some(u) = &u {
            check_finite("U", u.view())?;
        }

        let mut offsets = vec![0];
        for b in &blocks {
            offsets.push(offsets.last().unwrap() + b.ncols());
        }
        let p = *offsets.last().unwrap();
        let mut x = Array2::zeros((n, p).f());
        for (s, b) in blocks.iter().enumerate() {
            x.slice_mut(s![.., offsets[s]..offsets[s + 1]]).assign(b);
        }
        let m = y.ncols();
        let p0 = u.as_ref().map_or(0, |u| u.ncols());
        let mut feature_ids = Vec::with_capacity(p);
        for (s, b) in blocks.iter().enumerate() {
            for j in 0..b.ncols() {
                feature_ids.push(format!("x{}_{}", s + 1, j + 1));
            }
        }
        Ok(Dataset {
            y,
            x,
            offsets,
            u,
            row_ids: default_ids("r", n),
            response_ids: default_ids("y", m),
            feature_ids,
            covariate_ids: default_ids("u", p0),
        })
    }

    pub fn n_samples(&self) -> usize {
        self.y.nrows()
    }

    pub fn n_responses(&self) -> usize {
        self.y.ncols()
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_blocks(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn n_covariates(&self) -> usize {
        self.u.as_ref().map_or(0, |u| u.ncols())
    }

    /// Cumulative block boundaries; block `s` spans `offsets[s]..offsets[s+1]`.
    pub fn block_offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        self.offsets.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Block index of feature `j`.
    pub fn block_of(&self, j: usize) -> usize {
        self.offsets.partition_point(|&o| o <= j) - 1
    }

    pub fn y(&self) -> ArrayView2<'_, f64> {
        self.y.view()
    }

    /// All penalized features, `n × p`, column-major.
    pub fn x(&self) -> ArrayView2<'_, f64> {
        self.x.view()
    }

    pub fn block(&self, s: usize) -> ArrayView2<'_, f64> {
        self.x.slice(s![.., self.offsets[s]..self.offsets[s + 1]])
    }

    pub fn u(&self) -> Option<ArrayView2<'_, f64>> {
        self.u.as_ref().map(|u| u.view())
    }

    /// Same dataset restricted to the given rows (in the given order).
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        let y = self.y.select(Axis(0), rows);
        let mut x = Array2::zeros((rows.len(), self.x.ncols()).f());
        x.assign(&self.x.select(Axis(0), rows));
        Dataset {
            y,
            x,
            offsets: self.offsets.clone(),
            u: self.u.as_ref().map(|u| u.select(Axis(0), rows)),
            row_ids: rows.iter().map(|&i| self.row_ids[i].clone()).collect(),
            response_ids: self.response_ids.clone(),
            feature_ids: self.feature_ids.clone(),
            covariate_ids: self.covariate_ids.clone(),
        }
    }

    /// Replace the responses, keeping features and identifiers.
    pub fn with_y(&self, y: Array2<f64>) -> Result<Dataset> {
        if y.dim() != self.y.dim() {
            return Err(Error::dims(format!(
                "replacement responses are {:?}, expected {:?}",
                y.dim(),
                self.y.dim()
            )));
        }
        check_finite("Y", y.view())?;
        let mut out = self.clone();
        out.y = y;
        Ok(out)
    }

    /// Drop the unpenalized block.
    pub fn without_covariates(&self) -> Dataset {
        let mut out = self.clone();
        out.u = None;
        out.covariate_ids.clear();
        out
    }
}

/// Which transformations [`standardize_with`] applies.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StandardizeOptions {
    pub center_y: bool,
    pub scale_y: bool,
    pub scale_x: bool,
    /// Zero-based block indices whose columns are centered but not scaled.
    pub unscaled_blocks: Vec<usize>,
}

impl Default for StandardizeOptions {
    fn default() -> Self {
        StandardizeOptions {
            center_y: true,
            scale_y: false,
            scale_x: true,
            unscaled_blocks: Vec::new(),
        }
    }
}

/// Everything needed to map coefficients between the standardized and the
/// original coordinates.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Standardization {
    pub feature_means: Vec<f64>,
    pub feature_sds: Vec<f64>,
    /// Zero-variance columns; their coefficients are kept at zero.
    pub constant: Vec<bool>,
    pub response_means: Vec<f64>,
    pub response_sds: Vec<f64>,
    pub covariate_means: Vec<f64>,
    pub options: StandardizeOptions,
}

fn sample_sd(col: ndarray::ArrayView1<f64>, mean: f64) -> f64 {
    let n = col.len() as f64;
    let ss: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum();
    (ss / (n - 1.0)).sqrt()
}

fn is_constant(sd: f64, mean: f64) -> bool {
    sd <= 1e-12 * mean.abs().max(1.0)
}

/// Center (and optionally scale) features and responses.
pub fn standardize(ds: &Dataset, center_y: bool, scale_x: bool) -> Result<(Dataset, Standardization)> {
    standardize_with(
        ds,
        &StandardizeOptions {
            center_y,
            scale_x,
            ..StandardizeOptions::default()
        },
    )
}

pub fn standardize_with(ds: &Dataset, opts: &StandardizeOptions) -> Result<(Dataset, Standardization)> {
    let p = ds.n_features();
    let m = ds.n_responses();
    let mut out = ds.clone();

    let mut feature_means = vec![0.0; p];
    let mut feature_sds = vec![1.0; p];
    let mut constant = vec![false; p];
    for j in 0..p {
        let mut col = out.x.column_mut(j);
        let mean = col.mean().unwrap_or(0.0);
        let sd = sample_sd(col.view(), mean);
        feature_means[j] = mean;
        col.mapv_inplace(|v| v - mean);
        if is_constant(sd, mean) {
            constant[j] = true;
            col.fill(0.0);
            if opts.scale_x {
                warn!("feature {} has zero variance; left unscaled and excluded", ds.feature_ids[j]);
            }
            continue;
        }
        let scale = opts.scale_x && !opts.unscaled_blocks.contains(&ds.block_of(j));
        if scale {
            feature_sds[j] = sd;
            col.mapv_inplace(|v| v / sd);
        }
    }

    let mut response_means = vec![0.0; m];
    let mut response_sds = vec![1.0; m];
    for k in 0..m {
        let mut col = out.y.column_mut(k);
        let mean = col.mean().unwrap_or(0.0);
        if opts.center_y || opts.scale_y {
            response_means[k] = mean;
            col.mapv_inplace(|v| v - mean);
        }
        if opts.scale_y {
            let sd = sample_sd(col.view(), 0.0);
            if is_constant(sd, mean) {
                warn!("response {} has zero variance; left unscaled", ds.response_ids[k]);
            } else {
                response_sds[k] = sd;
                col.mapv_inplace(|v| v / sd);
            }
        }
    }

    let mut covariate_means = Vec::new();
    if let Some(u) = out.u.as_mut() {
        for mut col in u.columns_mut() {
            let mean = col.mean().unwrap_or(0.0);
            covariate_means.push(mean);
            col.mapv_inplace(|v| v - mean);
        }
    }

    Ok((
        out,
        Standardization {
            feature_means,
            feature_sds,
            constant,
            response_means,
            response_sds,
            covariate_means,
            options: opts.clone(),
        },
    ))
}

impl Standardization {
    /// Map a fit computed on standardized data back to original units.
    pub fn to_original(&self, fit: &FitResult) -> FitResult {
        let b_std = fit.coefficients.to_dense();
        let (p, m) = b_std.dim();
        let mut b = Array2::zeros((p, m));
        for j in 0..p {
            if self.constant[j] {
                continue;
            }
            for k in 0..m {
                b[[j, k]] = self.response_sds[k] * b_std[[j, k]] / self.feature_sds[j];
            }
        }
        let b0 = fit.unpenalized_dense().map(|b0s| {
            let mut b0 = b0s.clone();
            for k in 0..m {
                b0.column_mut(k).mapv_inplace(|v| v * self.response_sds[k]);
            }
            b0
        });
        let mut beta0 = vec![0.0; m];
        for k in 0..m {
            let mut v = self.response_means[k] + self.response_sds[k] * fit.intercepts[k];
            for j in 0..p {
                v -= self.feature_means[j] * b[[j, k]];
            }
            if let Some(b0) = &b0 {
                for (l, mu) in self.covariate_means.iter().enumerate() {
                    v -= mu * b0[[l, k]];
                }
            }
            beta0[k] = v;
        }
        let mut out = fit.clone();
        out.intercepts = beta0;
        out.coefficients = SparseCoefs::from_dense(b.view());
        out.unpenalized = b0.map(|b0| Matrix::from_array(b0.view()));
        out
    }

    /// Express original-scale penalized coefficients in standardized units.
    pub fn coefs_to_standardized(&self, b: ArrayView2<f64>) -> Array2<f64> {
        let mut out = b.to_owned();
        for ((j, k), v) in out.indexed_iter_mut() {
            *v = if self.constant[j] {
                0.0
            } else {
                *v * self.feature_sds[j] / self.response_sds[k]
            };
        }
        out
    }
}

/// One stored entry of a sparse coefficient matrix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Triplet {
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

/// Sparse `rows × cols` matrix stored as nonzero triplets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseCoefs {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<Triplet>,
}

impl SparseCoefs {
    pub fn from_dense(a: ArrayView2<f64>) -> Self {
        let entries = a
            .indexed_iter()
            .filter(|(_, v)| **v != 0.0)
            .map(|((row, col), &value)| Triplet { row, col, value })
            .collect();
        SparseCoefs {
            rows: a.nrows(),
            cols: a.ncols(),
            entries,
        }
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut a = Array2::zeros((self.rows, self.cols));
        for t in &self.entries {
            a[[t.row, t.col]] += t.value;
        }
        a
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn validate(&self) -> Result<()> {
        for t in &self.entries {
            if t.row >= self.rows || t.col >= self.cols {
                return Err(Error::dims(format!(
                    "triplet ({}, {}) outside {}x{}",
                    t.row, t.col, self.rows, self.cols
                )));
            }
            if t.value == 0.0 || !t.value.is_finite() {
                return Err(Error::invalid(format!(
                    "triplet ({}, {}) stores {}",
                    t.row, t.col, t.value
                )));
            }
        }
        Ok(())
    }
}

/// Small dense matrix that serializes as a list of rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: Vec<Vec<f64>>,
}

impl Matrix {
    pub fn from_array(a: ArrayView2<f64>) -> Self {
        Matrix {
            rows: a.outer_iter().map(|r| r.to_vec()).collect(),
        }
    }

    pub fn to_array(&self) -> Array2<f64> {
        let nr = self.rows.len();
        let nc = self.rows.first().map_or(0, |r| r.len());
        Array2::from_shape_fn((nr, nc), |(i, j)| self.rows[i][j])
    }
}

/// Smoothing diagnostics attached to fits produced by the SPG solver.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothingInfo {
    pub mu: f64,
    pub n_groups: usize,
    pub lipschitz: f64,
    /// Upper bound on `true objective - smoothed objective`.
    pub gap_bound: f64,
    pub smoothed_trace: Vec<f64>,
}

/// Fitted intercepts, unpenalized and penalized coefficients plus
/// convergence diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub intercepts: Vec<f64>,
    pub unpenalized: Option<Matrix>,
    pub coefficients: SparseCoefs,
    pub objective_trace: Vec<f64>,
    pub n_iter: usize,
    pub converged: bool,
    pub penalty: PenaltyConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub smoothing: Option<SmoothingInfo>,
}

impl FitResult {
    pub fn n_features(&self) -> usize {
        self.coefficients.rows
    }

    pub fn n_responses(&self) -> usize {
        self.coefficients.cols
    }

    pub fn coef_dense(&self) -> Array2<f64> {
        self.coefficients.to_dense()
    }

    pub fn unpenalized_dense(&self) -> Option<Array2<f64>> {
        self.unpenalized.as_ref().map(|m| m.to_array())
    }

    pub fn nnz(&self) -> usize {
        self.coefficients.nnz()
    }

    /// `1 β₀ᵀ + U B₀ + X B` on the dataset's own coordinates.
    pub fn predict(&self, ds: &Dataset) -> Result<Array2<f64>> {
        if ds.n_features() != self.n_features() || ds.n_responses() != self.n_responses() {
            return Err(Error::dims(format!(
                "fit is {}x{}, dataset has {} features and {} responses",
                self.n_features(),
                self.n_responses(),
                ds.n_features(),
                ds.n_responses()
            )));
        }
        let n = ds.n_samples();
        let m = self.n_responses();
        let mut yhat = Array2::from_shape_fn((n, m), |(_, k)| self.intercepts[k]);
        for t in &self.coefficients.entries {
            let col = ds.x().column(t.row).to_owned();
            let mut out = yhat.column_mut(t.col);
            out.scaled_add(t.value, &col);
        }
        match (self.unpenalized_dense(), ds.u()) {
            (Some(b0), Some(u)) => {
                if b0.nrows() != u.ncols() {
                    return Err(Error::dims("unpenalized coefficients do not match U"));
                }
                yhat += &u.dot(&b0);
            }
            (Some(_), None) => return Err(Error::dims("fit has unpenalized coefficients but dataset has no U")),
            _ => {}
        }
        Ok(yhat)
    }
}

/// Mean of each column.
pub(crate) fn col_means(a: ArrayView2<f64>) -> Array1<f64> {
    a.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(a.ncols()))
}
