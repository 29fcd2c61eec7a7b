//! K-fold cross-validation over a λ₁ path, tuner dispatch per method, and
//! the final refit on all training data.

use std::collections::BTreeMap;
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cd::{default_min_ratio, make_path, PathSpec, DEFAULT_N_LAMBDA};
use crate::data::{standardize_with, Dataset, FitResult, StandardizeOptions, Standardization};
use crate::epsgo::{epsgo_minimize, Dim, EpsgoOptions, Scale, SearchSpace, TunerState};
use crate::error::{Error, Result};
use crate::estimator::{resolve_tree, Prepared, SolverOptions};
use crate::ipf::{Method, PenaltyConfig};
use crate::rng::{substream, Stream};
use crate::tree::TreeStructure;

/// Assignment of samples to folds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub assignments: Vec<usize>,
    pub strata: Option<Vec<String>>,
    pub seed: u64,
}

impl FoldPlan {
    pub fn test_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len()).filter(|&i| self.assignments[i] == fold).collect()
    }

    pub fn train_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len()).filter(|&i| self.assignments[i] != fold).collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }
}

/// Seeded partition of `n` samples into `k` folds, split proportionally
/// within each stratum.
pub fn make_folds(n: usize, k: usize, strata: Option<&[String]>, seed: u64) -> Result<FoldPlan> {
    if k < 2 || k > n {
        return Err(Error::invalid(format!("need 2 <= k <= n, got k = {k}, n = {n}")));
    }
    if let Some(s) = strata {
        if s.len() != n {
            return Err(Error::dims(format!("{} stratum labels for {n} samples", s.len())));
        }
    }
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    match strata {
        Some(s) => {
            for (i, label) in s.iter().enumerate() {
                groups.entry(label.as_str()).or_default().push(i);
            }
        }
        None => {
            groups.insert("", (0..n).collect());
        }
    }
    let mut rng = substream(seed, Stream::Folds, 0);
    let mut assignments = vec![0; n];
    let mut offset = 0;
    for (label, mut members) in groups {
        if strata.is_some() && members.len() < k {
            warn!("stratum '{label}' has {} samples for {k} folds; assigned round-robin", members.len());
        }
        members.shuffle(&mut rng);
        for (t, i) in members.iter().enumerate() {
            assignments[*i] = (offset + t) % k;
        }
        offset += members.len();
    }
    Ok(FoldPlan {
        k,
        assignments,
        strata: strata.map(|s| s.to_vec()),
        seed,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StandardizeMode {
    /// Each training fold computes its own centering and scaling.
    LeakFree,
    /// Standardize the whole dataset once before splitting.
    Global,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeMode {
    /// One tree from all training responses, shared by the folds.
    Global,
    /// A tree per training fold.
    PerFold,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvOptions {
    pub standardize: StandardizeMode,
    pub scale_x: bool,
    pub tree_mode: TreeMode,
    pub solver: SolverOptions,
    pub parallel: bool,
}

impl Default for CvOptions {
    fn default() -> Self {
        CvOptions {
            standardize: StandardizeMode::LeakFree,
            scale_x: true,
            tree_mode: TreeMode::Global,
            solver: SolverOptions::default(),
            parallel: true,
        }
    }
}

impl CvOptions {
    pub fn standardize_options(&self) -> StandardizeOptions {
        StandardizeOptions {
            center_y: true,
            scale_y: false,
            scale_x: self.scale_x,
            unscaled_blocks: Vec::new(),
        }
    }
}

/// Cross-validated loss along a λ₁ path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub lambdas: Vec<f64>,
    /// Mean over folds of `‖Y_f − Ŷ_f‖²_F / (m n_f)`.
    pub mean_mse: Vec<f64>,
    pub se: Vec<f64>,
    /// Fold-averaged count of nonzero coefficients.
    pub n_nonzero: Vec<f64>,
    pub fold_mse: Vec<Vec<f64>>,
    pub folds_used: Vec<usize>,
    pub best_index: usize,
    pub best_lambda: f64,
}

impl CvResult {
    pub fn best_mse(&self) -> f64 {
        self.mean_mse[self.best_index]
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["lambda", "mean_mse_cv", "se", "n_nonzero"])?;
        for i in 0..self.lambdas.len() {
            w.write_record([
                self.lambdas[i].to_string(),
                self.mean_mse[i].to_string(),
                self.se[i].to_string(),
                self.n_nonzero[i].to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

fn mse(y: ndarray::ArrayView2<f64>, yhat: &ndarray::Array2<f64>) -> f64 {
    let n = y.len() as f64;
    y.iter().zip(yhat.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n
}

/// Tree shared by every fold, when the method needs one and the mode is global.
fn shared_tree(
    ds: &Dataset,
    cfg: &PenaltyConfig,
    tree: Option<&TreeStructure>,
    mode: TreeMode,
) -> Result<Option<TreeStructure>> {
    if !cfg.method.is_tree() {
        return Ok(None);
    }
    match (tree, mode) {
        (Some(t), _) => Ok(Some(t.clone())),
        (None, TreeMode::Global) => Ok(Some(resolve_tree(ds, cfg, None)?)),
        (None, TreeMode::PerFold) => Ok(None),
    }
}

/// Path from the λ_max of the standardized full data.
pub fn cv_path(
    ds: &Dataset,
    cfg: &PenaltyConfig,
    tree: Option<&TreeStructure>,
    opts: &CvOptions,
    n_lambda: usize,
    min_ratio: Option<f64>,
) -> Result<PathSpec> {
    let (std_ds, _) = standardize_with(ds, &opts.standardize_options())?;
    let tree = shared_tree(ds, cfg, tree, TreeMode::Global)?;
    let lmax = Prepared::new(&std_ds, cfg, tree.as_ref(), &opts.solver)?.lambda_max()?;
    if !(lmax > 0.0) {
        return Err(Error::Numerical("lambda_max is zero: the responses carry no signal".into()));
    }
    let ratio = min_ratio.unwrap_or_else(|| default_min_ratio(ds.n_samples(), ds.n_features()));
    make_path(lmax, n_lambda, ratio)
}

struct FoldOutcome {
    mse: Vec<f64>,
    nnz: Vec<usize>,
}

fn run_fold(
    base: &Dataset,
    fold: usize,
    folds: &FoldPlan,
    cfg: &PenaltyConfig,
    lambdas: &[f64],
    tree: Option<&TreeStructure>,
    opts: &CvOptions,
) -> Result<FoldOutcome> {
    let train = base.select_rows(&folds.train_rows(fold));
    let test = base.select_rows(&folds.test_rows(fold));
    let (train_fit, st): (Dataset, Option<Standardization>) = match opts.standardize {
        StandardizeMode::LeakFree => {
            let (d, s) = standardize_with(&train, &opts.standardize_options())?;
            (d, Some(s))
        }
        StandardizeMode::Global => (train, None),
    };
    let fold_tree = match tree {
        Some(t) => Some(t.clone()),
        None if cfg.method.is_tree() => Some(resolve_tree(&train_fit, cfg, None)?),
        None => None,
    };
    let cfg0 = cfg.with_lambda(lambdas[0]);
    let mut prep = Prepared::new(&train_fit, &cfg0, fold_tree.as_ref(), &opts.solver)?;
    let mut out = FoldOutcome {
        mse: Vec::with_capacity(lambdas.len()),
        nnz: Vec::with_capacity(lambdas.len()),
    };
    let mut prev: Option<FitResult> = None;
    for &lambda in lambdas {
        let fit = prep.fit(lambda, prev.as_ref())?;
        let pred = match &st {
            Some(s) => s.to_original(&fit).predict(&test)?,
            None => fit.predict(&test)?,
        };
        out.mse.push(mse(test.y(), &pred));
        out.nnz.push(fit.nnz());
        prev = Some(fit);
    }
    Ok(out)
}

/// Cross-validated loss of `cfg` (ratios and α fixed) along `path`.
pub fn cv_loss(
    ds: &Dataset,
    cfg: &PenaltyConfig,
    folds: &FoldPlan,
    path: &PathSpec,
    tree: Option<&TreeStructure>,
    opts: &CvOptions,
) -> Result<CvResult> {
    if folds.assignments.len() != ds.n_samples() {
        return Err(Error::dims(format!(
            "fold plan covers {} samples, dataset has {}",
            folds.assignments.len(),
            ds.n_samples()
        )));
    }
    if path.lambdas.is_empty() {
        return Err(Error::invalid("empty lambda path"));
    }
    let global;
    let base = match opts.standardize {
        StandardizeMode::Global => {
            global = standardize_with(ds, &opts.standardize_options())?.0;
            &global
        }
        StandardizeMode::LeakFree => ds,
    };
    let tree = shared_tree(ds, cfg, tree, opts.tree_mode)?;
    let lambdas = &path.lambdas;
    let work = |f: usize| run_fold(base, f, folds, cfg, lambdas, tree.as_ref(), opts);
    let outcomes: Vec<Result<FoldOutcome>> = if opts.parallel {
        (0..folds.k).into_par_iter().map(work).collect()
    } else {
        (0..folds.k).map(work).collect()
    };
    let mut fold_mse = Vec::new();
    let mut fold_nnz = Vec::new();
    let mut folds_used = Vec::new();
    let mut first_err = None;
    for (f, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(o) => {
                fold_mse.push(o.mse);
                fold_nnz.push(o.nnz);
                folds_used.push(f);
            }
            Err(e) => {
                warn!("fold {} failed: {e}", f + 1);
                first_err.get_or_insert(e);
            }
        }
    }
    if folds_used.len() + 1 < folds.k || folds_used.is_empty() {
        return Err(first_err.expect("a fold failed"));
    }
    let kf = folds_used.len() as f64;
    let nl = lambdas.len();
    let mut mean_mse = vec![0.0; nl];
    let mut se = vec![0.0; nl];
    let mut n_nonzero = vec![0.0; nl];
    for i in 0..nl {
        let vals: Vec<f64> = fold_mse.iter().map(|v| v[i]).collect();
        let mean = vals.iter().sum::<f64>() / kf;
        mean_mse[i] = mean;
        se[i] = if vals.len() > 1 {
            (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (kf - 1.0)).sqrt() / kf.sqrt()
        } else {
            0.0
        };
        n_nonzero[i] = fold_nnz.iter().map(|v| v[i] as f64).sum::<f64>() / kf;
    }
    let best_index = (0..nl).fold(0, |b, i| if mean_mse[i] < mean_mse[b] { i } else { b });
    Ok(CvResult {
        lambdas: lambdas.clone(),
        mean_mse,
        se,
        n_nonzero,
        fold_mse,
        folds_used,
        best_index,
        best_lambda: lambdas[best_index],
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TuneOptions {
    pub folds: usize,
    pub strata: Option<Vec<String>>,
    pub seed: u64,
    pub n_lambda: usize,
    pub min_ratio: Option<f64>,
    pub cv: CvOptions,
    pub epsgo: EpsgoOptions,
    /// Search interval of each ratio `λ_s/λ₁`, searched on a log10 scale.
    pub ratio_bounds: (f64, f64),
    pub alpha_bounds: (f64, f64),
    pub rho_star: f64,
    pub tree: Option<TreeStructure>,
    /// Evaluate the point with all ratios 1 and α at its upper bound (the
    /// plain lasso or tree-lasso) before the space-filling design.
    pub seed_unit_ratio: bool,
}

impl Default for TuneOptions {
    fn default() -> Self {
        TuneOptions {
            folds: 5,
            strata: None,
            seed: 0,
            n_lambda: DEFAULT_N_LAMBDA,
            min_ratio: None,
            cv: CvOptions::default(),
            epsgo: EpsgoOptions::default(),
            ratio_bounds: (1e-3, 1e3),
            alpha_bounds: (0.01, 1.0),
            rho_star: 0.95,
            tree: None,
            seed_unit_ratio: true,
        }
    }
}

/// Selected parameters, cross-validation curve and final model.
#[derive(Clone, Debug)]
pub struct TuneOutcome {
    /// Final model in original units, fit on all training data.
    pub fit: FitResult,
    /// `None` for path-only methods.
    pub tuner: Option<TunerState>,
    pub cv: CvResult,
    pub selected: PenaltyConfig,
    pub tree: Option<TreeStructure>,
}

/// Tuned dimensions for `method` with `n_blocks` blocks; `None` when only
/// λ₁ is tuned.
pub fn search_space(method: Method, n_blocks: usize, opts: &TuneOptions) -> Option<SearchSpace> {
    let mut dims = Vec::new();
    let (alo, ahi) = opts.alpha_bounds;
    match method {
        Method::ElasticNet | Method::SipfElasticNet => dims.push(Dim::linear("alpha", alo, ahi)),
        Method::IpfElasticNet => {
            for s in 1..=n_blocks {
                dims.push(Dim::linear(&format!("alpha_{s}"), alo, ahi));
            }
        }
        _ => {}
    }
    if method.is_ipf() {
        let (rlo, rhi) = opts.ratio_bounds;
        for s in 2..=n_blocks {
            dims.push(Dim::log10(&format!("ratio_{s}"), rlo, rhi));
        }
    }
    (!dims.is_empty()).then_some(SearchSpace { dims })
}

/// Ratios 1 and mixing parameters at their upper bound, clamped to the space.
fn baseline_point(space: &SearchSpace) -> Vec<f64> {
    space
        .dims
        .iter()
        .map(|d| match d.scale {
            Scale::Log10 => 1.0f64.clamp(d.lower, d.upper),
            Scale::Linear => d.upper,
        })
        .collect()
}

/// Penalty configuration at a tuner point (λ₁ is a placeholder).
pub fn config_from_point(method: Method, n_blocks: usize, point: &[f64], rho_star: f64) -> PenaltyConfig {
    let mut cfg = PenaltyConfig::new(method, 1.0);
    cfg.rho_star = rho_star;
    let mut it = point.iter().copied();
    match method {
        Method::ElasticNet | Method::SipfElasticNet => cfg.alphas = vec![it.next().expect("alpha")],
        Method::IpfElasticNet => cfg.alphas = it.by_ref().take(n_blocks).collect(),
        _ => {}
    }
    if method.is_ipf() {
        cfg.ratios = std::iter::once(1.0).chain(it).collect();
    }
    cfg
}

/// Cross-validated tuning of every penalty parameter of `method`, then a
/// refit on all of `ds` at the selected values.
pub fn tune_and_fit(ds: &Dataset, method: Method, opts: &TuneOptions) -> Result<TuneOutcome> {
    if ds.n_blocks() > 1 && method == Method::IpfElasticNet {
        warn!("tuning a separate alpha per block is unreliable; consider sipf_elastic_net");
    }
    let folds = make_folds(ds.n_samples(), opts.folds, opts.strata.as_deref(), opts.seed)?;
    let mut base_cfg = PenaltyConfig::new(method, 1.0);
    base_cfg.rho_star = opts.rho_star;
    let tree = shared_tree(ds, &base_cfg, opts.tree.as_ref(), TreeMode::Global)?;
    let s = ds.n_blocks();

    let evaluate = |cfg: &PenaltyConfig| -> Result<CvResult> {
        let path = cv_path(ds, cfg, tree.as_ref(), &opts.cv, opts.n_lambda, opts.min_ratio)?;
        let cv_tree = match opts.cv.tree_mode {
            TreeMode::Global => tree.as_ref(),
            TreeMode::PerFold => opts.tree.as_ref(),
        };
        cv_loss(ds, cfg, &folds, &path, cv_tree, &opts.cv)
    };

    let (selected_base, cv, tuner) = match search_space(method, s, opts) {
        None => {
            let mut cfg = base_cfg.clone();
            if method.is_ipf() {
                cfg.ratios = vec![1.0; s];
            }
            let cv = evaluate(&cfg)?;
            (cfg, cv, None)
        }
        Some(space) => {
            let mut best: Option<(f64, CvResult, PenaltyConfig)> = None;
            let mut eopts = opts.epsgo.clone();
            eopts.seed = opts.seed;
            if opts.seed_unit_ratio && eopts.initial_points.is_empty() {
                eopts.initial_points.push(baseline_point(&space));
            }
            let state = epsgo_minimize(
                |point| {
                    let cfg = config_from_point(method, s, point, opts.rho_star);
                    let cv = evaluate(&cfg)?;
                    let loss = cv.best_mse();
                    if best.as_ref().map_or(true, |b| loss < b.0) {
                        best = Some((loss, cv, cfg));
                    }
                    Ok(loss)
                },
                &space,
                &eopts,
            )?;
            let (_, cv, cfg) = best.ok_or_else(|| Error::Numerical("every tuner evaluation failed".into()))?;
            (cfg, cv, Some(state))
        }
    };

    let selected = selected_base.with_lambda(cv.best_lambda);
    let (std_ds, st) = standardize_with(ds, &opts.cv.standardize_options())?;
    let mut prep = Prepared::new(&std_ds, &selected, tree.as_ref(), &opts.cv.solver)?;
    let mut prev: Option<FitResult> = None;
    for &lambda in &cv.lambdas[..=cv.best_index] {
        prev = Some(prep.fit(lambda, prev.as_ref())?);
    }
    let fit = st.to_original(&prev.expect("nonempty path"));
    Ok(TuneOutcome {
        fit,
        tuner,
        cv,
        selected,
        tree,
    })
}

/// One row per evaluation: index, coordinates (log10 for log-scale
/// dimensions), loss and incumbent loss.
pub fn write_tuner_trace(state: &TunerState, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["eval".to_string()];
    for d in &state.space.dims {
        header.push(match d.scale {
            Scale::Linear => d.name.clone(),
            Scale::Log10 => format!("log10_{}", d.name),
        });
    }
    header.extend(["loss", "incumbent_loss", "failed"].map(String::from));
    w.write_record(&header)?;
    for (i, point) in state.points.iter().enumerate() {
        let mut row = vec![(i + 1).to_string()];
        for (d, v) in state.space.dims.iter().zip(point) {
            row.push(match d.scale {
                Scale::Linear => v.to_string(),
                Scale::Log10 => v.log10().to_string(),
            });
        }
        row.push(state.losses[i].to_string());
        row.push(state.incumbent_trace[i].to_string());
        row.push(u8::from(state.failed[i]).to_string());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folds_balanced_and_stratified() {
        let f = make_folds(10, 5, None, 3).unwrap();
        assert_eq!(f.fold_sizes(), vec![2; 5]);
        let strata: Vec<String> = (0..10).map(|i| if i < 6 { "A" } else { "B" }.to_string()).collect();
        let f = make_folds(10, 2, Some(&strata), 3).unwrap();
        for fold in 0..2 {
            let rows = f.test_rows(fold);
            assert_eq!(rows.iter().filter(|&&i| i < 6).count(), 3);
            assert_eq!(rows.iter().filter(|&&i| i >= 6).count(), 2);
        }
        assert_eq!(make_folds(10, 2, Some(&strata), 3).unwrap(), f);
        assert!(make_folds(3, 4, None, 0).is_err());
    }

    #[test]
    fn point_mapping() {
        let opts = TuneOptions::default();
        let sp = search_space(Method::IpfElasticNet, 3, &opts).unwrap();
        assert_eq!(sp.d(), 5);
        let cfg = config_from_point(Method::IpfElasticNet, 3, &[0.5, 0.6, 0.7, 2.0, 3.0], 0.9);
        assert_eq!(cfg.alphas, vec![0.5, 0.6, 0.7]);
        assert_eq!(cfg.ratios, vec![1.0, 2.0, 3.0]);
        assert!(search_space(Method::IpfLasso, 1, &opts).is_none());
        assert!(search_space(Method::Lasso, 3, &opts).is_none());
    }
}
