//! Two-source simulation design, evaluation metrics and repeated studies.
//!
//! Features are drawn from `N(0, Σ)` where each source has `b` latent
//! groups with within-group covariance `σ`, and latent group `i` of the
//! first source covaries with latent group `i` of the second. The second
//! source is then dichotomized at zero.

use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use log::warn;
use nalgebra::SymmetricEigen;
use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FitResult};
use crate::error::{Error, Result};
use crate::ipf::Method;
use crate::linalg::{cholesky_lower, from_dmatrix, to_dmatrix};
use crate::rng::{derive_seed, substream, Stream};
use crate::selection::{tune_and_fit, TuneOptions};

/// Rectangle of equal coefficients in `B_source`; rows index the features
/// of that source, columns the responses, both zero-based and half-open.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefBlock {
    pub source: usize,
    pub row_start: usize,
    pub row_end: usize,
    pub col_start: usize,
    pub col_end: usize,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    #[serde(default)]
    pub name: String,
    pub n: usize,
    /// Validation sample size; defaults to `n`.
    #[serde(default)]
    pub n_val: Option<usize>,
    pub m: usize,
    pub p1: usize,
    pub p2: usize,
    pub sigma: f64,
    pub b: usize,
    pub blocks: Vec<CoefBlock>,
    pub noise_sd: f64,
    #[serde(default)]
    pub seed: u64,
    /// Free-text provenance of the coefficient layout.
    #[serde(default)]
    pub note: String,
}

const SCENARIOS: [&str; 3] = [
    include_str!("../scenarios/scenario1.json"),
    include_str!("../scenarios/scenario2.json"),
    include_str!("../scenarios/scenario3.json"),
];

impl ScenarioSpec {
    /// One of the shipped scenarios (1, 2 or 3).
    pub fn builtin(k: usize) -> Result<Self> {
        let text = SCENARIOS
            .get(k.wrapping_sub(1))
            .ok_or_else(|| Error::invalid(format!("no built-in scenario {k}; choose 1, 2 or 3")))?;
        Self::from_json_str(text)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let spec: ScenarioSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str::<ScenarioSpec>(&text)
            .map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                msg: e.to_string(),
            })
            .and_then(|s| {
                s.validate()?;
                Ok(s)
            })
    }

    /// Same layout with different source sizes.
    pub fn with_sizes(&self, p1: usize, p2: usize) -> Result<Self> {
        let mut s = self.clone();
        s.p1 = p1;
        s.p2 = p2;
        s.validate()?;
        Ok(s)
    }

    pub fn n_val(&self) -> usize {
        self.n_val.unwrap_or(self.n)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.m == 0 || self.p1 == 0 || self.p2 == 0 || self.b == 0 {
            return Err(Error::invalid("scenario needs n >= 2 and positive m, p1, p2, b"));
        }
        if self.p1 % self.b != 0 || self.p2 % self.b != 0 {
            return Err(Error::invalid(format!(
                "p1 = {} and p2 = {} must both be divisible by b = {}",
                self.p1, self.p2, self.b
            )));
        }
        if !(0.0..1.0).contains(&self.sigma) {
            return Err(Error::invalid(format!("sigma must lie in [0, 1), got {}", self.sigma)));
        }
        if !(self.noise_sd >= 0.0) || !self.noise_sd.is_finite() {
            return Err(Error::invalid(format!("noise_sd must be nonnegative, got {}", self.noise_sd)));
        }
        for (i, blk) in self.blocks.iter().enumerate() {
            let rows = match blk.source {
                1 => self.p1,
                2 => self.p2,
                s => return Err(Error::invalid(format!("block {i}: source must be 1 or 2, got {s}"))),
            };
            if blk.row_start >= blk.row_end || blk.row_end > rows || blk.col_start >= blk.col_end || blk.col_end > self.m {
                return Err(Error::invalid(format!("block {i} lies outside B{} ({rows}x{})", blk.source, self.m)));
            }
            if !blk.value.is_finite() {
                return Err(Error::invalid(format!("block {i} has a non-finite value")));
            }
        }
        Ok(())
    }

    /// Stacked coefficient matrix `[B₁; B₂]`; later blocks overwrite earlier ones.
    pub fn coefficients(&self) -> Array2<f64> {
        let mut b = Array2::zeros((self.p1 + self.p2, self.m));
        for blk in &self.blocks {
            let off = if blk.source == 1 { 0 } else { self.p1 };
            for j in blk.row_start..blk.row_end {
                for k in blk.col_start..blk.col_end {
                    b[[off + j, k]] = blk.value;
                }
            }
        }
        b
    }
}

/// Two-source covariance with `b` latent groups per source.
pub fn build_sigma(p1: usize, p2: usize, b: usize, sigma: f64) -> Result<Array2<f64>> {
    if b == 0 || p1 % b != 0 || p2 % b != 0 {
        return Err(Error::invalid(format!("p1 = {p1} and p2 = {p2} must be divisible by b = {b}")));
    }
    if !(0.0..1.0).contains(&sigma) {
        return Err(Error::invalid(format!("sigma must lie in [0, 1), got {sigma}")));
    }
    let p = p1 + p2;
    let (g1, g2) = (p1 / b, p2 / b);
    let group = |j: usize| if j < p1 { j / g1 } else { (j - p1) / g2 };
    let mut s = Array2::zeros((p, p));
    for i in 0..p {
        for j in 0..p {
            s[[i, j]] = if i == j {
                1.0
            } else if group(i) == group(j) {
                sigma
            } else {
                0.0
            };
        }
    }
    let min_eig = crate::linalg::min_eig_symmetric(s.view());
    if min_eig < -1e-10 {
        return Err(Error::Numerical(format!(
            "covariance is not positive semidefinite (smallest eigenvalue {min_eig})"
        )));
    }
    Ok(s)
}

/// Square-root factor `L` with `L Lᵀ = Σ`.
fn sqrt_factor(sigma: ArrayView2<f64>) -> Array2<f64> {
    if let Some(l) = cholesky_lower(sigma) {
        return l;
    }
    let eig = SymmetricEigen::new(to_dmatrix(sigma));
    let mut v = eig.eigenvectors.clone();
    for (k, lam) in eig.eigenvalues.iter().enumerate() {
        let r = lam.max(0.0).sqrt();
        v.column_mut(k).scale_mut(r);
    }
    from_dmatrix(&v)
}

/// Simulated training and validation sets with the true coefficients.
#[derive(Clone, Debug)]
pub struct SimData {
    pub train: Dataset,
    pub val: Dataset,
    pub b_true: Array2<f64>,
}

fn draw<R: Rng>(
    n: usize,
    spec: &ScenarioSpec,
    l: &Array2<f64>,
    b_true: &Array2<f64>,
    rng: &mut R,
) -> Result<Dataset> {
    let p = spec.p1 + spec.p2;
    let mut x = Array2::<f64>::zeros((n, p));
    let mut z = Array1::<f64>::zeros(p);
    for i in 0..n {
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        x.row_mut(i).assign(&l.dot(&z));
    }
    for v in x.slice_mut(ndarray::s![.., spec.p1..]).iter_mut() {
        *v = if *v > 0.0 { 1.0 } else { 0.0 };
    }
    let mut e = Array2::<f64>::zeros((n, spec.m));
    for v in e.iter_mut() {
        let g: f64 = rng.sample(StandardNormal);
        *v = spec.noise_sd * g;
    }
    let y = x.dot(b_true) + e;
    let x1 = x.slice(ndarray::s![.., ..spec.p1]).to_owned();
    let x2 = x.slice(ndarray::s![.., spec.p1..]).to_owned();
    Dataset::new(y, vec![x1, x2], None)
}

/// Draw a training set and an independent validation set.
///
/// Variates are generated in a fixed order: training features row by row,
/// training noise row by row, then the same for validation.
pub fn simulate_dataset(spec: &ScenarioSpec) -> Result<SimData> {
    spec.validate()?;
    let sigma = build_sigma(spec.p1, spec.p2, spec.b, spec.sigma)?;
    let l = sqrt_factor(sigma.view());
    let b_true = spec.coefficients();
    let mut rng = substream(spec.seed, Stream::Simulation, 0);
    let train = draw(spec.n, spec, &l, &b_true, &mut rng)?;
    let val = draw(spec.n_val(), spec, &l, &b_true, &mut rng)?;
    Ok(SimData { train, val, b_true })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimMetrics {
    pub mse_val: f64,
    pub r2_val: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub vs: usize,
    pub avg_abs_error: f64,
}

/// Prediction and recovery metrics of `fit` against the truth.
pub fn evaluate(fit: &FitResult, b_true: ArrayView2<f64>, val: &Dataset) -> Result<SimMetrics> {
    let b_hat = fit.coef_dense();
    if b_hat.dim() != b_true.dim() {
        return Err(Error::dims(format!(
            "estimate is {:?}, truth is {:?}",
            b_hat.dim(),
            b_true.dim()
        )));
    }
    let pred = fit.predict(val)?;
    let y = val.y();
    let (n, m) = y.dim();
    let sse: f64 = y.iter().zip(pred.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    let mut sst = 0.0;
    for col in y.columns() {
        let mean = col.mean().unwrap_or(0.0);
        sst += col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
    }
    let r2_val = if sst > 0.0 {
        1.0 - sse / sst
    } else if sse == 0.0 {
        1.0
    } else {
        f64::NEG_INFINITY
    };
    let (mut tp, mut fneg, mut tn, mut fp) = (0usize, 0usize, 0usize, 0usize);
    let mut abs_err = 0.0;
    for (bh, bt) in b_hat.iter().zip(b_true.iter()) {
        match (*bt != 0.0, *bh != 0.0) {
            (true, true) => tp += 1,
            (true, false) => fneg += 1,
            (false, false) => tn += 1,
            (false, true) => fp += 1,
        }
        abs_err += (bh - bt).abs();
    }
    let ratio = |a: usize, b: usize| if a + b == 0 { 1.0 } else { a as f64 / (a + b) as f64 };
    Ok(SimMetrics {
        mse_val: sse / (n * m) as f64,
        r2_val,
        sensitivity: ratio(tp, fneg),
        specificity: ratio(tn, fp),
        vs: tp + fp,
        avg_abs_error: abs_err / b_hat.len() as f64,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub rep: usize,
    pub method: Method,
    pub metrics: Option<SimMetrics>,
    pub error: Option<String>,
    pub wall_time_s: f64,
}

impl StudyRow {
    fn csv_fields(&self) -> Vec<String> {
        let mut out = vec![self.rep.to_string(), self.method.name().to_string()];
        match &self.metrics {
            Some(mt) => out.extend([
                mt.mse_val.to_string(),
                mt.r2_val.to_string(),
                mt.sensitivity.to_string(),
                mt.specificity.to_string(),
                mt.vs.to_string(),
                mt.avg_abs_error.to_string(),
            ]),
            None => out.extend(std::iter::repeat_n(String::new(), 6)),
        }
        out.push(format!("{:.3}", self.wall_time_s));
        out.push(self.error.clone().unwrap_or_default());
        out
    }
}

pub const STUDY_HEADER: [&str; 10] = [
    "rep",
    "method",
    "mse_val",
    "r2_val",
    "sensitivity",
    "specificity",
    "vs",
    "avg_abs_error",
    "wall_time_s",
    "error",
];

#[derive(Clone, Debug, Default)]
pub struct StudyOptions {
    pub tune: TuneOptions,
    /// Long-format CSV written as reps finish, then rewritten in sorted order.
    pub csv_path: Option<std::path::PathBuf>,
    pub parallel: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyTable {
    pub rows: Vec<StudyRow>,
}

/// Mean and sample standard deviation.
pub fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 {
        (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

impl StudyTable {
    pub fn successes(&self, method: Method) -> Vec<&SimMetrics> {
        self.rows
            .iter()
            .filter(|r| r.method == method)
            .filter_map(|r| r.metrics.as_ref())
            .collect()
    }

    pub fn metric(&self, method: Method, f: impl Fn(&SimMetrics) -> f64) -> Vec<f64> {
        self.successes(method).into_iter().map(f).collect()
    }

    pub fn methods(&self) -> Vec<Method> {
        let mut out: Vec<Method> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.method) {
                out.push(r.method);
            }
        }
        out
    }

    pub fn success_rate(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows.iter().filter(|r| r.metrics.is_some()).count() as f64 / self.rows.len() as f64
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(STUDY_HEADER)?;
        for r in &self.rows {
            w.write_record(r.csv_fields())?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Per-method `mean (sd)` of the coefficient-recovery metrics.
    pub fn write_summary_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["method", "avg_abs_error", "sensitivity", "specificity", "vs"])?;
        let cell = |v: Vec<f64>, digits: usize| {
            let (m, s) = mean_sd(&v);
            format!("{m:.digits$} ({s:.digits$})")
        };
        for method in self.methods() {
            w.write_record([
                method.name().to_string(),
                cell(self.metric(method, |x| x.avg_abs_error), 4),
                cell(self.metric(method, |x| x.sensitivity), 3),
                cell(self.metric(method, |x| x.specificity), 3),
                cell(self.metric(method, |x| x.vs as f64), 1),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// One row per rep and method with the validation error, for boxplots.
    pub fn write_plot_data(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["rep", "method", "mse_val"])?;
        for r in &self.rows {
            if let Some(mt) = &r.metrics {
                w.write_record([r.rep.to_string(), r.method.name().to_string(), mt.mse_val.to_string()])?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

fn run_rep(spec: &ScenarioSpec, methods: &[Method], rep: usize, seed: u64, opts: &StudyOptions) -> Vec<StudyRow> {
    let mut rep_spec = spec.clone();
    rep_spec.seed = derive_seed(seed, Stream::Study, rep as u64);
    let data = match simulate_dataset(&rep_spec) {
        Ok(d) => d,
        Err(e) => {
            return methods
                .iter()
                .map(|&method| StudyRow {
                    rep,
                    method,
                    metrics: None,
                    error: Some(format!("simulation failed: {e}")),
                    wall_time_s: 0.0,
                })
                .collect()
        }
    };
    let mut tune = opts.tune.clone();
    tune.seed = derive_seed(seed, Stream::Tuner, rep as u64);
    methods
        .iter()
        .map(|&method| {
            let start = Instant::now();
            let outcome = tune_and_fit(&data.train, method, &tune)
                .and_then(|o| evaluate(&o.fit, data.b_true.view(), &data.val));
            let wall_time_s = start.elapsed().as_secs_f64();
            match outcome {
                Ok(metrics) => StudyRow {
                    rep,
                    method,
                    metrics: Some(metrics),
                    error: None,
                    wall_time_s,
                },
                Err(e) => {
                    warn!("rep {rep}, {method}: {e}");
                    StudyRow {
                        rep,
                        method,
                        metrics: None,
                        error: Some(e.to_string()),
                        wall_time_s,
                    }
                }
            }
        })
        .collect()
}

/// Repeated simulate, tune and evaluate cycles; a failing method records a
/// failure row instead of aborting.
pub fn run_study(
    spec: &ScenarioSpec,
    methods: &[Method],
    reps: usize,
    seed: u64,
    opts: &StudyOptions,
) -> Result<StudyTable> {
    if reps == 0 {
        return Err(Error::invalid("reps must be at least 1"));
    }
    if methods.is_empty() {
        return Err(Error::invalid("no methods given"));
    }
    spec.validate()?;
    let sink = match &opts.csv_path {
        Some(path) => {
            let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
            writeln!(f, "{}", STUDY_HEADER.join(",")).map_err(|e| Error::io(path, e))?;
            Some(Mutex::new(csv::WriterBuilder::new().has_headers(false).from_writer(f)))
        }
        None => None,
    };
    let work = |rep: usize| {
        let rows = run_rep(spec, methods, rep, seed, opts);
        if let Some(sink) = &sink {
            let mut w = sink.lock().expect("study writer lock");
            for r in &rows {
                if let Err(e) = w.write_record(r.csv_fields()) {
                    warn!("could not append study row: {e}");
                }
            }
            if let Err(e) = w.flush() {
                warn!("could not flush study rows: {e}");
            }
        }
        rows
    };
    let per_rep: Vec<Vec<StudyRow>> = if opts.parallel {
        (1..=reps).into_par_iter().map(work).collect()
    } else {
        (1..=reps).map(work).collect()
    };
    drop(sink);
    let table = StudyTable {
        rows: per_rep.into_iter().flatten().collect(),
    };
    if let Some(path) = &opts.csv_path {
        table.write_csv(path)?;
    }
    Ok(table)
}
