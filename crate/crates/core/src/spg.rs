//! Smoothing proximal gradient solver for the tree-lasso.
//!
//! Leaf terms `λ A_k |β_jk|` are handled exactly by soft-thresholding.
//! Each internal group term `λ ω ‖β_j^G‖` is replaced by the Huber envelope
//! `λ H_μ(ω ‖β_j^G‖)`, whose gradient is Lipschitz with constant `λω²/μ` and
//! which underestimates the group term by at most `λμ/2`. The smooth part is
//! minimized with accelerated proximal gradient steps, a sufficient-decrease
//! line search capped by the computed global Lipschitz constant, and a
//! restart whenever the smoothed objective would increase.

use log::warn;
use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};

use crate::cd::soft_threshold;
use crate::data::{col_means, Dataset, FitResult, SmoothingInfo, SparseCoefs};
use crate::error::{Error, Result};
use crate::ipf::{Method, PenaltyConfig};
use crate::linalg::max_eig_gram;
use crate::tree::TreeStructure;

pub use crate::estimator::fit_with_unpenalized;

#[derive(Clone, Debug, PartialEq)]
pub struct SpgOptions {
    /// Smoothing parameter; `None` selects it from the problem.
    pub mu: Option<f64>,
    /// Stop when the relative change of the smoothed objective drops below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Use momentum (with restarts).
    pub accel: bool,
    /// Solve a sequence of decreasing smoothing parameters ending at `mu`.
    pub continuation: bool,
}

impl Default for SpgOptions {
    fn default() -> Self {
        SpgOptions {
            mu: None,
            tol: 1e-5,
            max_iter: 5000,
            accel: true,
            continuation: true,
        }
    }
}

/// Relative accuracy used by the automatic smoothing parameter.
pub const AUTO_MU_SCALE: f64 = 1e-3;

/// The flattened tree penalty over a `p × m` coefficient grid:
/// `λ Σ_j r_j [Σ_k A_k |β_jk| + Σ_g ω_g ‖β_j^g‖]`.
///
/// `r_j` are per-feature multipliers (all one for the plain tree-lasso).
#[derive(Clone, Debug, PartialEq)]
pub struct FlatGroups {
    pub leaf_weights: Vec<f64>,
    pub groups: Vec<(Vec<usize>, f64)>,
    pub row_scales: Vec<f64>,
}

impl FlatGroups {
    pub fn from_tree(tree: &TreeStructure, p: usize) -> Self {
        FlatGroups {
            leaf_weights: tree.leaf_weights(),
            groups: tree.internal_groups(),
            row_scales: vec![1.0; p],
        }
    }

    pub fn with_row_scales(mut self, scales: Vec<f64>) -> Self {
        self.row_scales = scales;
        self
    }

    pub fn n_features(&self) -> usize {
        self.row_scales.len()
    }

    pub fn n_responses(&self) -> usize {
        self.leaf_weights.len()
    }

    /// Number of smoothed `(feature, group)` terms.
    pub fn n_smoothed(&self) -> usize {
        self.n_features() * self.groups.len()
    }

    fn check(&self, b: ArrayView2<f64>) -> Result<()> {
        if b.dim() != (self.n_features(), self.n_responses()) {
            return Err(Error::dims(format!(
                "coefficients are {:?}, groups expect {:?}",
                b.dim(),
                (self.n_features(), self.n_responses())
            )));
        }
        Ok(())
    }

    /// Exact penalty value.
    pub fn penalty(&self, b: ArrayView2<f64>, lambda: f64) -> f64 {
        self.leaf_penalty(b, lambda) + self.group_penalty(b, lambda)
    }

    fn leaf_penalty(&self, b: ArrayView2<f64>, lambda: f64) -> f64 {
        let mut total = 0.0;
        for (j, row) in b.outer_iter().enumerate() {
            let s: f64 = row.iter().zip(&self.leaf_weights).map(|(v, w)| w * v.abs()).sum();
            total += self.row_scales[j] * s;
        }
        lambda * total
    }

    fn group_penalty(&self, b: ArrayView2<f64>, lambda: f64) -> f64 {
        let mut total = 0.0;
        for (j, row) in b.outer_iter().enumerate() {
            for (g, w) in &self.groups {
                let nrm = g.iter().map(|&k| row[k] * row[k]).sum::<f64>().sqrt();
                total += self.row_scales[j] * w * nrm;
            }
        }
        lambda * total
    }

    /// `λ max_j r_j² max_k Σ_{g ∋ k} ω_g² / μ`.
    pub fn smoothing_lipschitz(&self, lambda: f64, mu: f64) -> f64 {
        let mut per_k = vec![0.0; self.n_responses()];
        for (g, w) in &self.groups {
            for &k in g {
                per_k[k] += w * w;
            }
        }
        let kmax = per_k.iter().fold(0.0f64, |a, &v| a.max(v));
        let rmax = self.row_scales.iter().fold(0.0f64, |a, &r| a.max(r * r));
        lambda * rmax * kmax / mu
    }
}

fn huber(t: f64, mu: f64) -> f64 {
    if t >= mu {
        t - 0.5 * mu
    } else {
        t * t / (2.0 * mu)
    }
}

/// Value and gradient of `λ Σ_j Σ_g H_μ(r_j ω_g ‖β_j^g‖)`.
pub fn smoothed_penalty_grad(
    b: ArrayView2<f64>,
    groups: &FlatGroups,
    lambda: f64,
    mu: f64,
) -> Result<(f64, Array2<f64>)> {
    if !(mu > 0.0) {
        return Err(Error::invalid(format!("smoothing parameter must be positive, got {mu}")));
    }
    groups.check(b)?;
    let mut grad = Array2::zeros(b.dim());
    let value = smoothed_into(b, groups, lambda, mu, Some(&mut grad));
    Ok((value, grad))
}

fn smoothed_into(
    b: ArrayView2<f64>,
    groups: &FlatGroups,
    lambda: f64,
    mu: f64,
    mut grad: Option<&mut Array2<f64>>,
) -> f64 {
    let mut value = 0.0;
    for (j, row) in b.outer_iter().enumerate() {
        let r = groups.row_scales[j];
        for (g, w) in &groups.groups {
            let nrm = g.iter().map(|&k| row[k] * row[k]).sum::<f64>().sqrt();
            if nrm == 0.0 {
                continue;
            }
            let rw = r * w;
            let t = rw * nrm;
            value += huber(t, mu);
            if let Some(gr) = grad.as_deref_mut() {
                let coef = if t >= mu { lambda * rw / nrm } else { lambda * rw * rw / mu };
                for &k in g {
                    gr[[j, k]] += coef * row[k];
                }
            }
        }
    }
    lambda * value
}

/// Output of one SPG solve.
#[derive(Clone, Debug)]
pub struct SpgSolution {
    pub coefficients: Array2<f64>,
    /// True (non-smoothed) objective per accepted iterate.
    pub objective_trace: Vec<f64>,
    /// Smoothed objective per iterate of the final (target-μ) stage; aligned
    /// with the tail of `objective_trace`.
    pub smoothed_trace: Vec<f64>,
    pub n_iter: usize,
    pub converged: bool,
    pub mu: f64,
    pub lipschitz: f64,
    pub gap_bound: f64,
}

/// Centered least-squares problem with a flat tree penalty.
#[derive(Clone, Debug)]
pub struct SpgProblem {
    x: Array2<f64>,
    y: Array2<f64>,
    groups: FlatGroups,
    design_lipschitz: f64,
}

impl SpgProblem {
    /// `x` and `y` must already be centered (or otherwise intercept-free).
    pub fn new(x: ArrayView2<f64>, y: ArrayView2<f64>, groups: FlatGroups) -> Result<Self> {
        let (n, p) = x.dim();
        let m = y.ncols();
        if y.nrows() != n {
            return Err(Error::dims(format!("design has {n} rows, responses have {}", y.nrows())));
        }
        if groups.n_features() != p || groups.n_responses() != m {
            return Err(Error::dims(format!(
                "groups cover {}x{}, problem is {p}x{m}",
                groups.n_features(),
                groups.n_responses()
            )));
        }
        let design_lipschitz = max_eig_gram(x) / (m * n) as f64;
        Ok(SpgProblem {
            x: x.as_standard_layout().into_owned(),
            y: y.as_standard_layout().into_owned(),
            groups,
            design_lipschitz,
        })
    }

    pub fn groups(&self) -> &FlatGroups {
        &self.groups
    }

    pub fn x(&self) -> ArrayView2<'_, f64> {
        self.x.view()
    }

    /// Replace the response target (same shape).
    pub fn set_y(&mut self, y: Array2<f64>) {
        assert_eq!(y.dim(), self.y.dim(), "replacement target has a different shape");
        self.y = y.as_standard_layout().into_owned();
    }

    fn scale(&self) -> f64 {
        (self.x.nrows() * self.y.ncols()) as f64
    }

    /// Penalty level above which `B = 0` is optimal: the leaf terms alone
    /// already satisfy the subgradient condition there.
    pub fn lambda_max(&self) -> f64 {
        let g = self.x.t().dot(&self.y) / self.scale();
        let mut best = 0.0f64;
        for ((j, k), v) in g.indexed_iter() {
            let w = self.groups.row_scales[j] * self.groups.leaf_weights[k];
            if w > 0.0 {
                best = best.max(v.abs() / w);
            }
        }
        best
    }

    /// Automatic smoothing parameter: a fixed fraction of the typical
    /// coefficient scale `max|XᵀY|/(mn) / L_design`.
    pub fn auto_mu(&self) -> f64 {
        let g = self.x.t().dot(&self.y) / self.scale();
        let gmax = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let scale = if self.design_lipschitz > 0.0 { gmax / self.design_lipschitz } else { 0.0 };
        if scale > 0.0 {
            AUTO_MU_SCALE * scale
        } else {
            AUTO_MU_SCALE
        }
    }

    fn xb(&self, b: &Array2<f64>) -> Array2<f64> {
        let active: Vec<usize> = (0..b.nrows()).filter(|&j| b.row(j).iter().any(|&v| v != 0.0)).collect();
        if active.len() * 2 < b.nrows() {
            let mut out = Array2::zeros((self.x.nrows(), b.ncols()));
            for &j in &active {
                let xj = self.x.column(j);
                let bj = b.row(j);
                Zip::from(out.rows_mut()).and(&xj).for_each(|mut row, &xv| {
                    if xv != 0.0 {
                        row.scaled_add(xv, &bj);
                    }
                });
            }
            out
        } else {
            self.x.dot(b)
        }
    }

    fn loss_from_fit(&self, xb: &Array2<f64>) -> f64 {
        let mut s = 0.0;
        Zip::from(xb).and(&self.y).for_each(|&f, &y| {
            let r = y - f;
            s += r * r;
        });
        s / (2.0 * self.scale())
    }

    /// True objective `1/(2mn)‖Y − XB‖² + pen(B)`.
    pub fn objective(&self, b: ArrayView2<f64>, lambda: f64) -> f64 {
        let xb = self.x.dot(&b);
        self.loss_from_fit(&xb) + self.groups.penalty(b, lambda)
    }

    fn leaf_prox(&self, z: &Array2<f64>, lambda: f64, step: f64) -> Array2<f64> {
        let mut out = z.clone();
        for (j, mut row) in out.outer_iter_mut().enumerate() {
            let r = self.groups.row_scales[j];
            for (k, v) in row.iter_mut().enumerate() {
                *v = soft_threshold(*v, step * lambda * r * self.groups.leaf_weights[k]);
            }
        }
        out
    }

    pub fn solve(&self, lambda: f64, opts: &SpgOptions, warm: Option<ArrayView2<f64>>) -> Result<SpgSolution> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::invalid(format!("lambda must be finite and nonnegative, got {lambda}")));
        }
        if !(opts.tol > 0.0) || opts.max_iter == 0 {
            return Err(Error::invalid("SPG needs tol > 0 and max_iter >= 1"));
        }
        let mu = match opts.mu {
            Some(mu) if mu > 0.0 => mu,
            Some(mu) => return Err(Error::invalid(format!("smoothing parameter must be positive, got {mu}"))),
            None => self.auto_mu(),
        };
        let (p, m) = (self.x.ncols(), self.y.ncols());
        let mut b = match warm {
            Some(w) if w.dim() == (p, m) => w.to_owned(),
            Some(w) => return Err(Error::dims(format!("warm start is {:?}, expected {:?}", w.dim(), (p, m)))),
            None => Array2::zeros((p, m)),
        };

        // Continuation: start where the smoothing curvature matches the
        // design curvature and shrink μ tenfold per stage.
        let mut mus = Vec::new();
        if opts.continuation && self.design_lipschitz > 0.0 {
            let mut cur = self.groups.smoothing_lipschitz(lambda, 1.0) / self.design_lipschitz;
            while cur > 10.0 * mu {
                mus.push(cur);
                cur /= 10.0;
            }
        }
        mus.push(mu);

        let mut trace = Vec::new();
        let mut n_iter = 0;
        let mut last = None;
        for (i, &stage_mu) in mus.iter().enumerate() {
            let final_stage = i + 1 == mus.len();
            let tol = if final_stage { opts.tol } else { (10.0 * opts.tol).max(1e-4) };
            let budget = opts.max_iter.saturating_sub(n_iter).max(1);
            let st = self.solve_stage(lambda, stage_mu, tol, budget, opts.accel, b);
            n_iter += st.n_iter;
            trace.extend_from_slice(&st.trace);
            b = st.b.clone();
            last = Some(st);
        }
        let st = last.expect("at least one stage");
        Ok(SpgSolution {
            coefficients: b,
            objective_trace: trace,
            smoothed_trace: st.smoothed_trace,
            n_iter,
            converged: st.converged,
            mu,
            lipschitz: st.l_cap,
            gap_bound: lambda * mu / 2.0 * self.groups.n_smoothed() as f64,
        })
    }

    fn solve_stage(&self, lambda: f64, mu: f64, tol: f64, max_iter: usize, accel: bool, mut b: Array2<f64>) -> Stage {
        let l_cap = 1.01 * self.design_lipschitz + self.groups.smoothing_lipschitz(lambda, mu);
        let mut xb = self.xb(&b);
        let smooth_part = |bb: &Array2<f64>, xbb: &Array2<f64>| {
            self.loss_from_fit(xbb) + smoothed_into(bb.view(), &self.groups, lambda, mu, None)
        };
        let mut big_f = smooth_part(&b, &xb) + self.groups.leaf_penalty(b.view(), lambda);

        let mut z = b.clone();
        let mut xz = xb.clone();
        let mut t = 1.0f64;
        let mut l = (self.design_lipschitz * 1.01).max(l_cap * 1e-6).max(f64::MIN_POSITIVE);
        let mut trace = Vec::new();
        let mut smoothed_trace = Vec::new();
        let mut converged = false;
        let mut n_iter = 0;

        while n_iter < max_iter {
            n_iter += 1;
            let resid = &xz - &self.y;
            let mut grad = self.x.t().dot(&resid) / self.scale();
            let f_z = self.loss_from_fit(&xz) + smoothed_into(z.view(), &self.groups, lambda, mu, Some(&mut grad));

            let (b_new, xb_new, f_new) = loop {
                let step = 1.0 / l;
                let cand = self.leaf_prox(&(&z - &(&grad * step)), lambda, step);
                let xc = self.xb(&cand);
                let f_c = smooth_part(&cand, &xc);
                let d = &cand - &z;
                let lin: f64 = Zip::from(&grad).and(&d).fold(0.0, |a, &g, &dv| a + g * dv);
                let quad: f64 = d.iter().map(|v| v * v).sum();
                let bound = f_z + lin + 0.5 * l * quad;
                if f_c <= bound + 1e-12 * bound.abs().max(1e-300) || l >= l_cap {
                    break (cand, xc, f_c);
                }
                l = (2.0 * l).min(l_cap);
            };
            let big_f_new = f_new + self.groups.leaf_penalty(b_new.view(), lambda);

            if accel && big_f_new > big_f && z != b {
                // Momentum overshot: restart from the last accepted point.
                t = 1.0;
                z = b.clone();
                xz = xb.clone();
                continue;
            }

            let t_new = if accel { 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt()) } else { 1.0 };
            let beta = if accel { (t - 1.0) / t_new } else { 0.0 };
            z = &b_new + &((&b_new - &b) * beta);
            xz = &xb_new + &((&xb_new - &xb) * beta);
            t = t_new;

            let rel = (big_f - big_f_new).abs() / big_f_new.abs().max(1e-300);
            b = b_new;
            xb = xb_new;
            big_f = big_f_new;
            smoothed_trace.push(big_f);
            trace.push(self.loss_from_fit(&xb) + self.groups.penalty(b.view(), lambda));
            if rel < tol && trace.len() > 1 {
                converged = true;
                break;
            }
            // Let the step grow back when the local curvature allows it.
            l = (l * 0.8).max(self.design_lipschitz * 1.01).max(f64::MIN_POSITIVE);
        }
        Stage {
            b,
            trace,
            smoothed_trace,
            n_iter,
            converged,
            l_cap,
        }
    }
}

struct Stage {
    b: Array2<f64>,
    trace: Vec<f64>,
    smoothed_trace: Vec<f64>,
    n_iter: usize,
    converged: bool,
    l_cap: f64,
}

/// Centered problem plus the means needed to recover intercepts.
pub(crate) struct CenteredSpg {
    pub problem: SpgProblem,
    pub x_means: Array1<f64>,
    pub y_means: Array1<f64>,
}

impl CenteredSpg {
    pub fn new(x: ArrayView2<f64>, y: ArrayView2<f64>, groups: FlatGroups) -> Result<Self> {
        let x_means = col_means(x);
        let y_means = col_means(y);
        let xc = &x - &x_means.view().insert_axis(Axis(0));
        let yc = &y - &y_means.view().insert_axis(Axis(0));
        Ok(CenteredSpg {
            problem: SpgProblem::new(xc.view(), yc.view(), groups)?,
            x_means,
            y_means,
        })
    }

    pub fn fit(
        &self,
        lambda: f64,
        opts: &SpgOptions,
        warm: Option<ArrayView2<f64>>,
        penalty: PenaltyConfig,
    ) -> Result<(FitResult, Array2<f64>)> {
        let sol = self.problem.solve(lambda, opts, warm)?;
        if !sol.converged {
            warn!("SPG stopped after {} iterations without converging", sol.n_iter);
        }
        let b = sol.coefficients;
        let intercepts = (&self.y_means - &b.t().dot(&self.x_means)).to_vec();
        let fit = FitResult {
            intercepts,
            unpenalized: None,
            coefficients: SparseCoefs::from_dense(b.view()),
            objective_trace: sol.objective_trace,
            n_iter: sol.n_iter,
            converged: sol.converged,
            penalty,
            smoothing: Some(SmoothingInfo {
                mu: sol.mu,
                n_groups: self.problem.groups.n_smoothed(),
                lipschitz: sol.lipschitz,
                gap_bound: sol.gap_bound,
                smoothed_trace: sol.smoothed_trace,
            }),
        };
        Ok((fit, b))
    }
}

/// Tree-lasso at a single λ.
pub fn fit_tree_lasso(
    ds: &Dataset,
    tree: &TreeStructure,
    lambda: f64,
    opts: &SpgOptions,
    warm: Option<ArrayView2<f64>>,
) -> Result<FitResult> {
    if ds.u().is_some() {
        return Err(Error::invalid(
            "dataset carries unpenalized covariates; fit it through estimator::fit",
        ));
    }
    if tree.m != ds.n_responses() {
        return Err(Error::dims(format!(
            "tree has {} responses, dataset has {}",
            tree.m,
            ds.n_responses()
        )));
    }
    let groups = FlatGroups::from_tree(tree, ds.n_features());
    let c = CenteredSpg::new(ds.x(), ds.y(), groups)?;
    Ok(c.fit(lambda, opts, warm, PenaltyConfig::new(Method::TreeLasso, lambda))?.0)
}
