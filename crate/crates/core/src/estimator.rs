//! One entry point for all seven methods.
//!
//! Every method is solved on transformed coefficients `B*` with
//! `B = c ⊙ B*` row-wise: the IPF variants scale the design columns of each
//! block, the elastic-net variants add a per-feature ridge term, and the
//! tree variants hand the scaled design to the SPG solver. Unpenalized
//! covariates are handled by block-coordinate descent between an exact
//! least-squares step and a penalized step.

use log::warn;
use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::cd::{finish_fit, CdOptions, CdProblem, CoordPenalty};
use crate::data::{col_means, Dataset, FitResult, Matrix, SparseCoefs};
use crate::error::{Error, Result};
use crate::ipf::{ipf_en_scaling, ipf_lasso_scaling, scale_rows, unscale_rows, DesignScaling, Method, PenaltyConfig};
use crate::linalg::min_norm_lstsq;
use crate::spg::{FlatGroups, SpgOptions, SpgProblem};
use crate::tree::{build_tree, TreeStructure};

#[derive(Clone, Debug, PartialEq)]
pub struct SolverOptions {
    pub cd: CdOptions,
    pub spg: SpgOptions,
    /// Relative objective change that ends the covariate/penalized alternation.
    pub outer_tol: f64,
    pub outer_max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            cd: CdOptions::default(),
            spg: SpgOptions::default(),
            outer_tol: 1e-7,
            outer_max_iter: 200,
        }
    }
}

enum Kernel {
    Cd(CdProblem),
    Spg(SpgProblem),
}

/// Penalty-level-free part of a fit: centered, transformed data and the
/// solver kernel, reused along a λ path.
pub struct Prepared {
    kernel: Kernel,
    cfg: PenaltyConfig,
    opts: SolverOptions,
    col_scales: Vec<f64>,
    l1_factor: Vec<f64>,
    l2_factor: Vec<f64>,
    x_means: Array1<f64>,
    y_means: Array1<f64>,
    yc: Array2<f64>,
    u: Option<(Array2<f64>, Array1<f64>)>,
    tree: Option<TreeStructure>,
}

fn center(a: ArrayView2<f64>) -> (Array2<f64>, Array1<f64>) {
    let means = col_means(a);
    (&a - &means.view().insert_axis(Axis(0)), means)
}

/// The tree used by a tree method: the supplied one, or one clustered from
/// the responses (a leaves-only tree when there is a single response).
pub fn resolve_tree(ds: &Dataset, cfg: &PenaltyConfig, tree: Option<&TreeStructure>) -> Result<TreeStructure> {
    match tree {
        Some(t) if t.m != ds.n_responses() => Err(Error::dims(format!(
            "tree has {} responses, dataset has {}",
            t.m,
            ds.n_responses()
        ))),
        Some(t) => Ok(t.clone()),
        None if ds.n_responses() < 2 => Ok(TreeStructure::leaves_only(ds.n_responses())),
        None => build_tree(ds.y(), cfg.rho_star),
    }
}

impl Prepared {
    pub fn new(ds: &Dataset, cfg: &PenaltyConfig, tree: Option<&TreeStructure>, opts: &SolverOptions) -> Result<Self> {
        cfg.validate(ds.n_blocks())?;
        let p = ds.n_features();
        let scaling = match cfg.method {
            Method::Lasso | Method::ElasticNet | Method::TreeLasso => DesignScaling::identity(p),
            Method::IpfLasso | Method::IpfTreeLasso => ipf_lasso_scaling(ds, cfg)?,
            Method::SipfElasticNet | Method::IpfElasticNet => ipf_en_scaling(ds, cfg, cfg.lambda1)?,
        };
        let mut l1_factor = vec![1.0; p];
        let mut l2_factor = vec![0.0; p];
        match cfg.method {
            Method::ElasticNet => {
                let a = cfg.alpha(0);
                l1_factor.fill(a);
                l2_factor.fill(1.0 - a);
            }
            Method::SipfElasticNet | Method::IpfElasticNet => {
                for j in 0..p {
                    let s = ds.block_of(j);
                    let c = scaling.col_scales[j];
                    l2_factor[j] = c * c * cfg.ratio(s) * (1.0 - cfg.alpha(s));
                }
            }
            _ => {}
        }
        let (xc, x_means) = center(ds.x());
        let xs = if scaling.is_identity() { xc } else { scaling.scale_columns(xc.view()) };
        let (yc, y_means) = center(ds.y());
        let u = ds.u().map(center);
        let (kernel, tree) = if cfg.method.is_tree() {
            let tree = resolve_tree(ds, cfg, tree)?;
            let groups = FlatGroups::from_tree(&tree, p);
            (Kernel::Spg(SpgProblem::new(xs.view(), yc.view(), groups)?), Some(tree))
        } else {
            (Kernel::Cd(CdProblem::new(xs.view(), yc.view())?), None)
        };
        Ok(Prepared {
            kernel,
            cfg: cfg.clone(),
            opts: opts.clone(),
            col_scales: scaling.col_scales,
            l1_factor,
            l2_factor,
            x_means,
            y_means,
            yc,
            u,
            tree,
        })
    }

    pub fn tree(&self) -> Option<&TreeStructure> {
        self.tree.as_ref()
    }

    pub fn config(&self) -> &PenaltyConfig {
        &self.cfg
    }

    fn set_target(&mut self, y: &Array2<f64>) {
        match &mut self.kernel {
            Kernel::Cd(k) => k.set_y(y.clone()),
            Kernel::Spg(k) => k.set_y(y.clone()),
        }
    }

    fn ols_covariates(&self, target: &Array2<f64>) -> Result<Option<Array2<f64>>> {
        match &self.u {
            None => Ok(None),
            Some((uc, _)) => {
                let (b0, rank) = min_norm_lstsq(uc.view(), target.view())?;
                if rank < uc.ncols() {
                    warn!(
                        "unpenalized covariates are rank deficient ({rank} of {}); using the minimum-norm solution",
                        uc.ncols()
                    );
                }
                Ok(Some(b0))
            }
        }
    }

    /// Smallest λ₁ at which all penalized coefficients vanish.
    pub fn lambda_max(&mut self) -> Result<f64> {
        let target = match self.ols_covariates(&self.yc)? {
            Some(b0) => &self.yc - &self.u.as_ref().unwrap().0.dot(&b0),
            None => self.yc.clone(),
        };
        self.set_target(&target);
        Ok(match &self.kernel {
            Kernel::Cd(k) => {
                let g = k.gradient_at_zero();
                let mut best = 0.0f64;
                for ((j, _), v) in g.indexed_iter() {
                    if self.l1_factor[j] > 0.0 {
                        best = best.max(v.abs() / self.l1_factor[j]);
                    }
                }
                best
            }
            Kernel::Spg(k) => k.lambda_max(),
        })
    }

    /// One penalized solve on the current target, in transformed units.
    fn inner(&self, lambda: f64, warm: Option<ArrayView2<f64>>) -> Result<InnerSolution> {
        match &self.kernel {
            Kernel::Cd(k) => {
                let pen = CoordPenalty {
                    l1: self.l1_factor.iter().map(|f| f * lambda).collect(),
                    l2: self.l2_factor.iter().map(|f| f * lambda).collect(),
                };
                let sol = k.solve(&pen, &self.opts.cd, warm)?;
                Ok(InnerSolution {
                    bstar: sol.coefficients,
                    trace: sol.objective_trace,
                    n_iter: sol.n_iter,
                    converged: sol.converged,
                    smoothing: None,
                })
            }
            Kernel::Spg(k) => {
                let sol = k.solve(lambda, &self.opts.spg, warm)?;
                Ok(InnerSolution {
                    bstar: sol.coefficients,
                    trace: sol.objective_trace,
                    n_iter: sol.n_iter,
                    converged: sol.converged,
                    smoothing: Some(crate::data::SmoothingInfo {
                        mu: sol.mu,
                        n_groups: k.groups().n_smoothed(),
                        lipschitz: sol.lipschitz,
                        gap_bound: sol.gap_bound,
                        smoothed_trace: sol.smoothed_trace,
                    }),
                })
            }
        }
    }

    fn objective(&self, target: &Array2<f64>, bstar: &Array2<f64>, lambda: f64) -> f64 {
        match &self.kernel {
            Kernel::Cd(k) => {
                let pen = CoordPenalty {
                    l1: self.l1_factor.iter().map(|f| f * lambda).collect(),
                    l2: self.l2_factor.iter().map(|f| f * lambda).collect(),
                };
                let r = target - &k.x().dot(bstar);
                let (n, m) = r.dim();
                r.iter().map(|v| v * v).sum::<f64>() / (2.0 * (n * m) as f64) + pen.value(bstar.view())
            }
            Kernel::Spg(k) => {
                let r = target - &k.x().dot(bstar);
                let (n, m) = r.dim();
                r.iter().map(|v| v * v).sum::<f64>() / (2.0 * (n * m) as f64) + k.groups().penalty(bstar.view(), lambda)
            }
        }
    }

    /// Fit at `lambda`; `warm` is an earlier fit on the same data.
    pub fn fit(&mut self, lambda: f64, warm: Option<&FitResult>) -> Result<FitResult> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::invalid(format!("lambda must be finite and nonnegative, got {lambda}")));
        }
        let warm_b = match warm {
            Some(w) => Some(unscale_rows(w.coef_dense().view(), &self.col_scales)?),
            None => None,
        };
        let warm_b0 = warm.and_then(|w| w.unpenalized_dense());
        let cfg = self.cfg.with_lambda(lambda.max(f64::MIN_POSITIVE));
        if self.u.is_none() {
            let yc = self.yc.clone();
            self.set_target(&yc);
            let sol = self.inner(lambda, warm_b.as_ref().map(|b| b.view()))?;
            let b = scale_rows(sol.bstar.view(), &self.col_scales)?;
            let mut fit = finish_fit(&b, &self.x_means, &self.y_means, sol.trace, sol.n_iter, sol.converged, cfg);
            fit.smoothing = sol.smoothing;
            return Ok(fit);
        }
        self.fit_alternating(lambda, warm_b, warm_b0, cfg)
    }

    fn fit_alternating(
        &mut self,
        lambda: f64,
        warm_b: Option<Array2<f64>>,
        warm_b0: Option<Array2<f64>>,
        cfg: PenaltyConfig,
    ) -> Result<FitResult> {
        let (uc, u_means) = self.u.clone().expect("covariates present");
        let (p, m) = (self.col_scales.len(), self.yc.ncols());
        let mut bstar = warm_b.unwrap_or_else(|| Array2::zeros((p, m)));
        let mut b0 = match warm_b0 {
            Some(b0) if b0.dim() == (uc.ncols(), m) => b0,
            _ => Array2::zeros((uc.ncols(), m)),
        };
        let x = match &self.kernel {
            Kernel::Cd(k) => k.x().to_owned(),
            Kernel::Spg(k) => k.x().to_owned(),
        };
        let mut trace = Vec::new();
        let mut n_iter = 0;
        let mut inner_ok = true;
        let mut converged = false;
        let mut smoothing = None;
        let mut prev = f64::INFINITY;
        for _ in 0..self.opts.outer_max_iter {
            let partial = &self.yc - &x.dot(&bstar);
            b0 = self.ols_covariates(&partial)?.expect("covariates present");
            let target = &self.yc - &uc.dot(&b0);
            self.set_target(&target);
            let sol = self.inner(lambda, Some(bstar.view()))?;
            n_iter += sol.n_iter;
            inner_ok = sol.converged;
            smoothing = sol.smoothing;
            bstar = sol.bstar;
            let obj = self.objective(&target, &bstar, lambda);
            trace.push(obj);
            if (prev - obj).abs() <= self.opts.outer_tol * obj.abs().max(1e-300) {
                converged = true;
                break;
            }
            prev = obj;
        }
        if !converged {
            warn!("covariate alternation stopped after {} rounds without converging", trace.len());
        }
        let b = scale_rows(bstar.view(), &self.col_scales)?;
        let intercepts = (&self.y_means - &b.t().dot(&self.x_means) - &b0.t().dot(&u_means)).to_vec();
        Ok(FitResult {
            intercepts,
            unpenalized: Some(Matrix::from_array(b0.view())),
            coefficients: SparseCoefs::from_dense(b.view()),
            objective_trace: trace,
            n_iter,
            converged: converged && inner_ok,
            penalty: cfg,
            smoothing,
        })
    }

    /// Warm-started fits along `lambdas` (in the given order).
    pub fn path(&mut self, lambdas: &[f64]) -> Result<Vec<FitResult>> {
        let mut fits: Vec<FitResult> = Vec::with_capacity(lambdas.len());
        for &lambda in lambdas {
            let fit = self.fit(lambda, fits.last())?;
            fits.push(fit);
        }
        Ok(fits)
    }
}

struct InnerSolution {
    bstar: Array2<f64>,
    trace: Vec<f64>,
    n_iter: usize,
    converged: bool,
    smoothing: Option<crate::data::SmoothingInfo>,
}

/// Fit any method at `cfg.lambda1`.
pub fn fit(
    ds: &Dataset,
    cfg: &PenaltyConfig,
    tree: Option<&TreeStructure>,
    opts: &SolverOptions,
    warm: Option<&FitResult>,
) -> Result<FitResult> {
    Prepared::new(ds, cfg, tree, opts)?.fit(cfg.lambda1, warm)
}

/// Standardize `ds`, fit at `cfg.lambda1` and report coefficients on the
/// original scale.
pub fn fit_standardized(
    ds: &Dataset,
    cfg: &PenaltyConfig,
    tree: Option<&TreeStructure>,
    opts: &SolverOptions,
    std_opts: &crate::data::StandardizeOptions,
) -> Result<FitResult> {
    let (sd, st) = crate::data::standardize_with(ds, std_opts)?;
    Ok(st.to_original(&fit(&sd, cfg, tree, opts, None)?))
}

/// λ₁ above which every penalized coefficient is zero for `cfg`.
pub fn lambda_max(ds: &Dataset, cfg: &PenaltyConfig, tree: Option<&TreeStructure>) -> Result<f64> {
    Prepared::new(ds, cfg, tree, &SolverOptions::default())?.lambda_max()
}

/// Penalized fit with unpenalized covariates `U` (any method).
pub fn fit_with_unpenalized(
    ds: &Dataset,
    tree: Option<&TreeStructure>,
    cfg: &PenaltyConfig,
    opts: &SolverOptions,
) -> Result<FitResult> {
    if ds.u().is_none() {
        return Err(Error::invalid("fit_with_unpenalized needs a covariate block U"));
    }
    fit(ds, cfg, tree, opts, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cd::fit_lasso;
    use ndarray::Array2;

    fn toy(seed: u64) -> Dataset {
        let mut s = seed;
        let mut next = move || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let x1 = Array2::from_shape_fn((15, 4), |_| next());
        let x2 = Array2::from_shape_fn((15, 3), |_| next());
        let y = Array2::from_shape_fn((15, 2), |_| next());
        Dataset::new(y, vec![x1, x2], None).unwrap()
    }

    #[test]
    fn lasso_dispatch_matches_direct_solver() {
        let ds = toy(3);
        let lmax = crate::cd::lambda_max(&ds);
        let cfg = PenaltyConfig::new(Method::Lasso, 0.3 * lmax);
        let a = fit(&ds, &cfg, None, &SolverOptions::default(), None).unwrap();
        let b = fit_lasso(&ds, 0.3 * lmax, &CdOptions::default(), None).unwrap();
        assert_eq!(a.coef_dense(), b.coef_dense());
        assert!((lambda_max(&ds, &cfg, None).unwrap() - lmax).abs() < 1e-15);
    }

    #[test]
    fn ipf_with_unit_ratios_is_lasso() {
        let ds = toy(5);
        let lmax = crate::cd::lambda_max(&ds);
        let cfg = PenaltyConfig::new(Method::IpfLasso, 0.2 * lmax).with_ratios(vec![1.0, 1.0]);
        let a = fit(&ds, &cfg, None, &SolverOptions::default(), None).unwrap();
        let b = fit_lasso(&ds, 0.2 * lmax, &CdOptions::default(), None).unwrap();
        assert_eq!(a.coef_dense(), b.coef_dense());
    }
}
