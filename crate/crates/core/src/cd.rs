//! Cyclical coordinate descent for the multivariate lasso and elastic net.
//!
//! The loss `1/(2mn) ‖Y − 1β₀ᵀ − XB‖²_F` and the ℓ1/ℓ2 penalties separate
//! over response columns, so each feature row `b_j` is updated for all
//! responses at once from the shared inner products `x_jᵀR`.

use log::warn;
use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::data::{col_means, Dataset, FitResult, SparseCoefs};
use crate::error::{Error, Result};
use crate::ipf::{Method, PenaltyConfig};
use crate::linalg::to_col_major;

/// `sign(z) · max(|z| − γ, 0)`.
pub fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CdOptions {
    /// Stop when no coefficient moves by more than this in a sweep.
    pub tol: f64,
    pub max_sweeps: usize,
    pub active_set: bool,
    /// Largest KKT violation accepted at convergence; sweeps continue past
    /// `tol` until the certificate holds.
    pub kkt_tol: f64,
}

impl Default for CdOptions {
    fn default() -> Self {
        CdOptions {
            tol: 1e-5,
            max_sweeps: 10_000,
            active_set: true,
            kkt_tol: 1e-6,
        }
    }
}

impl CdOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::invalid(format!("tol must be positive, got {}", self.tol)));
        }
        if !(self.kkt_tol > 0.0) {
            return Err(Error::invalid(format!("kkt_tol must be positive, got {}", self.kkt_tol)));
        }
        if self.max_sweeps == 0 {
            return Err(Error::invalid("max_sweeps must be at least 1"));
        }
        Ok(())
    }
}

/// Decreasing, log-spaced penalty sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct PathSpec {
    pub lambda_max: f64,
    pub n_lambda: usize,
    pub min_ratio: f64,
    pub lambdas: Vec<f64>,
}

pub fn make_path(lambda_max: f64, n_lambda: usize, min_ratio: f64) -> Result<PathSpec> {
    if !(lambda_max > 0.0) || !lambda_max.is_finite() {
        return Err(Error::invalid(format!("lambda_max must be positive, got {lambda_max}")));
    }
    if n_lambda < 2 {
        return Err(Error::invalid(format!("n_lambda must be at least 2, got {n_lambda}")));
    }
    if !(min_ratio > 0.0 && min_ratio < 1.0) {
        return Err(Error::invalid(format!("min_ratio must lie in (0, 1), got {min_ratio}")));
    }
    let step = min_ratio.ln() / (n_lambda - 1) as f64;
    let mut lambdas: Vec<f64> = (0..n_lambda)
        .map(|t| lambda_max * (step * t as f64).exp())
        .collect();
    lambdas[0] = lambda_max;
    lambdas[n_lambda - 1] = lambda_max * min_ratio;
    Ok(PathSpec {
        lambda_max,
        n_lambda,
        min_ratio,
        lambdas,
    })
}

/// Default smallest-to-largest penalty ratio: 0.01, or 0.0001 when `n > p`.
pub fn default_min_ratio(n: usize, p: usize) -> f64 {
    if n > p {
        1e-4
    } else {
        1e-2
    }
}

pub const DEFAULT_N_LAMBDA: usize = 50;

/// Per-feature penalty `Σ_j l1_j ‖b_j‖₁ + ½ l2_j ‖b_j‖²`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoordPenalty {
    pub l1: Vec<f64>,
    pub l2: Vec<f64>,
}

impl CoordPenalty {
    pub fn uniform(p: usize, l1: f64, l2: f64) -> Self {
        CoordPenalty {
            l1: vec![l1; p],
            l2: vec![l2; p],
        }
    }

    pub fn value(&self, b: ArrayView2<f64>) -> f64 {
        b.outer_iter()
            .enumerate()
            .map(|(j, row)| {
                let a: f64 = row.iter().map(|v| v.abs()).sum();
                let q: f64 = row.iter().map(|v| v * v).sum();
                self.l1[j] * a + 0.5 * self.l2[j] * q
            })
            .sum()
    }
}

/// Output of the coordinate-descent kernel.
#[derive(Clone, Debug)]
pub struct CdSolution {
    pub coefficients: Array2<f64>,
    pub objective_trace: Vec<f64>,
    pub n_iter: usize,
    pub converged: bool,
}

/// A least-squares problem `1/(2m·rows) ‖Y − XB‖²_F` without intercept.
///
/// Callers center the data (or append augmentation rows) beforehand.
#[derive(Clone, Debug)]
pub struct CdProblem {
    x: Array2<f64>,
    y: Array2<f64>,
    col_sq: Vec<f64>,
}

impl CdProblem {
    pub fn new(x: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<Self> {
        if x.nrows() != y.nrows() {
            return Err(Error::dims(format!(
                "design has {} rows, responses have {}",
                x.nrows(),
                y.nrows()
            )));
        }
        let x = to_col_major(x);
        let col_sq = x.columns().into_iter().map(|c| c.dot(&c)).collect();
        Ok(CdProblem {
            x,
            y: y.as_standard_layout().into_owned(),
            col_sq,
        })
    }

    /// Center `X` and `Y` column-wise; returns the problem and the means.
    pub fn centered(x: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<(Self, Array1<f64>, Array1<f64>)> {
        let xm = col_means(x);
        let ym = col_means(y);
        let xc = &x - &xm.view().insert_axis(Axis(0));
        let yc = &y - &ym.view().insert_axis(Axis(0));
        Ok((CdProblem::new(xc.view(), yc.view())?, xm, ym))
    }

    pub fn n_rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_responses(&self) -> usize {
        self.y.ncols()
    }

    pub fn x(&self) -> ArrayView2<'_, f64> {
        self.x.view()
    }

    pub fn y(&self) -> ArrayView2<'_, f64> {
        self.y.view()
    }

    /// Replace the response target (same shape).
    pub fn set_y(&mut self, y: Array2<f64>) {
        assert_eq!(y.dim(), self.y.dim(), "replacement target has a different shape");
        self.y = y.as_standard_layout().into_owned();
    }

    fn scale(&self) -> f64 {
        (self.n_rows() * self.n_responses()) as f64
    }

    /// `XᵀY / (m·rows)`, the negative loss gradient at `B = 0`.
    pub fn gradient_at_zero(&self) -> Array2<f64> {
        self.x.t().dot(&self.y) / self.scale()
    }

    /// Largest `|x_jᵀy_k| / (m·rows)`.
    pub fn max_correlation(&self) -> f64 {
        self.gradient_at_zero().iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    pub fn residuals(&self, b: ArrayView2<f64>) -> Array2<f64> {
        &self.y - &self.x.dot(&b)
    }

    pub fn loss(&self, b: ArrayView2<f64>) -> f64 {
        let r = self.residuals(b);
        r.iter().map(|v| v * v).sum::<f64>() / (2.0 * self.scale())
    }

    pub fn objective(&self, b: ArrayView2<f64>, pen: &CoordPenalty) -> f64 {
        self.loss(b) + pen.value(b)
    }

    fn objective_from_residuals(&self, r: &Array2<f64>, b: &Array2<f64>, pen: &CoordPenalty) -> f64 {
        r.iter().map(|v| v * v).sum::<f64>() / (2.0 * self.scale()) + pen.value(b.view())
    }

    /// Largest violation of the optimality conditions at `b`, given its
    /// residuals `r`.
    pub fn kkt_violation(&self, b: ArrayView2<f64>, r: ArrayView2<f64>, pen: &CoordPenalty) -> f64 {
        let g = self.x.t().dot(&r) / self.scale();
        let mut worst = 0.0f64;
        for ((j, k), &gjk) in g.indexed_iter() {
            if self.col_sq[j] == 0.0 {
                continue;
            }
            let bjk = b[[j, k]];
            let v = if bjk == 0.0 {
                gjk.abs() - pen.l1[j]
            } else {
                (gjk - pen.l2[j] * bjk - pen.l1[j] * bjk.signum()).abs()
            };
            worst = worst.max(v);
        }
        worst
    }

    /// One pass over `feats`; returns the largest coefficient change.
    fn sweep(
        &self,
        feats: &[usize],
        pen: &CoordPenalty,
        b: &mut Array2<f64>,
        r: &mut Array2<f64>,
        g: &mut [f64],
        delta: &mut [f64],
    ) -> f64 {
        let n = self.n_rows();
        let m = self.n_responses();
        let scale = self.scale();
        let rs = r.as_slice_mut().expect("residuals are row-major");
        let mut max_change = 0.0f64;
        for &j in feats {
            let a = self.col_sq[j];
            let denom = a + scale * pen.l2[j];
            if a == 0.0 || denom == 0.0 {
                continue;
            }
            let xj = self.x.column(j);
            let xj = xj.as_slice().expect("design is column-major");
            g.iter_mut().for_each(|v| *v = 0.0);
            for i in 0..n {
                let xi = xj[i];
                if xi != 0.0 {
                    let row = &rs[i * m..(i + 1) * m];
                    for (gk, rk) in g.iter_mut().zip(row) {
                        *gk += xi * rk;
                    }
                }
            }
            let thr = scale * pen.l1[j];
            let mut moved = false;
            for k in 0..m {
                let old = b[[j, k]];
                let new = soft_threshold(g[k] + a * old, thr) / denom;
                let d = new - old;
                delta[k] = d;
                if d != 0.0 {
                    moved = true;
                    b[[j, k]] = new;
                    max_change = max_change.max(d.abs());
                }
            }
            if moved {
                for i in 0..n {
                    let xi = xj[i];
                    if xi != 0.0 {
                        let row = &mut rs[i * m..(i + 1) * m];
                        for (rk, dk) in row.iter_mut().zip(delta.iter()) {
                            *rk -= xi * dk;
                        }
                    }
                }
            }
        }
        max_change
    }

    /// Minimize `1/(2m·rows) ‖Y − XB‖² + pen(B)`.
    ///
    /// Sweeps run over features in index order and, within a feature, over
    /// responses. After two full sweeps only the active rows are cycled until
    /// they settle, then a full sweep verifies convergence, which also
    /// requires the KKT certificate to hold within `kkt_tol`.
    pub fn solve(&self, pen: &CoordPenalty, opts: &CdOptions, warm: Option<ArrayView2<f64>>) -> Result<CdSolution> {
        opts.validate()?;
        let (p, m) = (self.n_features(), self.n_responses());
        if pen.l1.len() != p || pen.l2.len() != p {
            return Err(Error::dims(format!("penalty has {} entries for {p} features", pen.l1.len())));
        }
        if pen.l1.iter().chain(&pen.l2).any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::invalid("penalty weights must be finite and nonnegative"));
        }
        let mut b = match warm {
            Some(w) => {
                if w.dim() != (p, m) {
                    return Err(Error::dims(format!("warm start is {:?}, expected {:?}", w.dim(), (p, m))));
                }
                let mut b = w.as_standard_layout().into_owned();
                for j in 0..p {
                    if self.col_sq[j] == 0.0 {
                        b.row_mut(j).fill(0.0);
                    }
                }
                b
            }
            None => Array2::zeros((p, m)),
        };
        let mut r = self.residuals(b.view()).as_standard_layout().into_owned();
        let all: Vec<usize> = (0..p).collect();
        let mut g = vec![0.0; m];
        let mut delta = vec![0.0; m];
        let mut trace = Vec::new();
        let mut n_iter = 0;
        let mut converged = false;

        'outer: while n_iter < opts.max_sweeps {
            let change = self.sweep(&all, pen, &mut b, &mut r, &mut g, &mut delta);
            n_iter += 1;
            trace.push(self.objective_from_residuals(&r, &b, pen));
            if change < opts.tol && self.kkt_violation(b.view(), r.view(), pen) <= opts.kkt_tol {
                converged = true;
                break;
            }
            if !opts.active_set || n_iter < 2 {
                continue;
            }
            loop {
                if n_iter >= opts.max_sweeps {
                    break 'outer;
                }
                let active: Vec<usize> = (0..p)
                    .filter(|&j| b.row(j).iter().any(|&v| v != 0.0))
                    .collect();
                let change = self.sweep(&active, pen, &mut b, &mut r, &mut g, &mut delta);
                n_iter += 1;
                trace.push(self.objective_from_residuals(&r, &b, pen));
                if change < opts.tol {
                    break;
                }
            }
        }
        Ok(CdSolution {
            coefficients: b,
            objective_trace: trace,
            n_iter,
            converged,
        })
    }
}

fn reject_covariates(ds: &Dataset) -> Result<()> {
    if ds.u().is_some() {
        return Err(Error::invalid(
            "dataset carries unpenalized covariates; fit it through estimator::fit",
        ));
    }
    Ok(())
}

/// Smallest λ at which `B = 0` solves the lasso (intercept handled by
/// centering).
pub fn lambda_max(ds: &Dataset) -> f64 {
    let (prob, _, _) = CdProblem::centered(ds.x(), ds.y()).expect("dataset shapes are consistent");
    prob.max_correlation()
}

/// Elastic-net analogue: the lasso value divided by `alpha`.
pub fn lambda_max_en(ds: &Dataset, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::invalid(format!(
            "lambda_max needs alpha in (0, 1], got {alpha} (the ridge limit has no finite value)"
        )));
    }
    Ok(lambda_max(ds) / alpha)
}

/// Assemble a [`FitResult`] from a solution on centered data.
pub(crate) fn finish_fit(
    b: &Array2<f64>,
    x_means: &Array1<f64>,
    y_means: &Array1<f64>,
    trace: Vec<f64>,
    n_iter: usize,
    converged: bool,
    penalty: PenaltyConfig,
) -> FitResult {
    let intercepts = (y_means - &b.t().dot(x_means)).to_vec();
    FitResult {
        intercepts,
        unpenalized: None,
        coefficients: SparseCoefs::from_dense(b.view()),
        objective_trace: trace,
        n_iter,
        converged,
        penalty,
        smoothing: None,
    }
}

fn fit_centered(
    prob: &CdProblem,
    x_means: &Array1<f64>,
    y_means: &Array1<f64>,
    lambda: f64,
    alpha: f64,
    opts: &CdOptions,
    warm: Option<ArrayView2<f64>>,
    penalty: PenaltyConfig,
) -> Result<FitResult> {
    let pen = CoordPenalty::uniform(prob.n_features(), lambda * alpha, lambda * (1.0 - alpha));
    let sol = prob.solve(&pen, opts, warm)?;
    if !sol.converged {
        warn!("coordinate descent stopped after {} sweeps without converging", sol.n_iter);
    }
    Ok(finish_fit(
        &sol.coefficients,
        x_means,
        y_means,
        sol.objective_trace,
        sol.n_iter,
        sol.converged,
        penalty,
    ))
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::invalid(format!("lambda must be finite and nonnegative, got {lambda}")));
    }
    Ok(())
}

/// Multivariate lasso at a single λ.
pub fn fit_lasso(ds: &Dataset, lambda: f64, opts: &CdOptions, warm: Option<ArrayView2<f64>>) -> Result<FitResult> {
    reject_covariates(ds)?;
    check_lambda(lambda)?;
    let (prob, xm, ym) = CdProblem::centered(ds.x(), ds.y())?;
    fit_centered(&prob, &xm, &ym, lambda, 1.0, opts, warm, PenaltyConfig::new(Method::Lasso, lambda))
}

/// Multivariate elastic net `λ(α‖B‖₁ + ½(1−α)‖B‖²)` at a single λ.
pub fn fit_elastic_net(
    ds: &Dataset,
    lambda: f64,
    alpha: f64,
    opts: &CdOptions,
    warm: Option<ArrayView2<f64>>,
) -> Result<FitResult> {
    reject_covariates(ds)?;
    check_lambda(lambda)?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let (prob, xm, ym) = CdProblem::centered(ds.x(), ds.y())?;
    let cfg = PenaltyConfig::new(Method::ElasticNet, lambda).with_alphas(vec![alpha]);
    fit_centered(&prob, &xm, &ym, lambda, alpha, opts, warm, cfg)
}

/// Warm-started fits along `path`, in path order.
pub fn fit_path(ds: &Dataset, path: &PathSpec, alpha: f64, opts: &CdOptions) -> Result<Vec<FitResult>> {
    reject_covariates(ds)?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let (prob, xm, ym) = CdProblem::centered(ds.x(), ds.y())?;
    let mut fits = Vec::with_capacity(path.lambdas.len());
    let mut warm: Option<Array2<f64>> = None;
    for &lambda in &path.lambdas {
        check_lambda(lambda)?;
        let cfg = if alpha == 1.0 {
            PenaltyConfig::new(Method::Lasso, lambda)
        } else {
            PenaltyConfig::new(Method::ElasticNet, lambda).with_alphas(vec![alpha])
        };
        let fit = fit_centered(&prob, &xm, &ym, lambda, alpha, opts, warm.as_ref().map(|w| w.view()), cfg)?;
        warm = Some(fit.coef_dense());
        fits.push(fit);
    }
    Ok(fits)
}
