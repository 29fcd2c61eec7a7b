//! The `structpen` command-line tool.
//!
//! Exit codes: 0 on success, 2 for usage, configuration and input errors,
//! 3 for numerical failures (including non-converged fits, whose outputs
//! are still written).

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use ndarray::Array2;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::cd::DEFAULT_N_LAMBDA;
use crate::data::{standardize_with, Dataset, FitResult, Matrix, SparseCoefs, StandardizeOptions};
use crate::error::{Error, Result};
use crate::estimator::{Prepared, SolverOptions};
use crate::io::{read_json, read_matrix_csv, write_json, write_matrix_csv, LabeledMatrix};
use crate::ipf::{Method, PenaltyConfig};
use crate::selection::{tune_and_fit, write_tuner_trace, CvOptions, TuneOptions};
use crate::simulation::{evaluate, run_study, simulate_dataset, ScenarioSpec, StudyOptions};
use crate::tree::TreeStructure;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "structpen", version, about = "Structured penalized multivariate regression")]
pub struct Cli {
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true, env = "STRUCTPEN_THREADS")]
    pub threads: Option<usize>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate training and validation data from a scenario.
    Simulate(SimulateArgs),
    /// Fit one method at fixed penalty parameters.
    Fit(FitArgs),
    /// Tune a method by cross-validation and refit on all data.
    Tune(TuneArgs),
    /// Score a saved fit on new data.
    Evaluate(EvaluateArgs),
    /// Repeated simulation study over several methods.
    Study(StudyArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct DataArgs {
    /// Response matrix CSV (rows = samples, first column = sample ids).
    #[arg(long)]
    pub y: PathBuf,
    /// Feature block CSV; repeat once per block, in block order.
    #[arg(long, required = true)]
    pub x: Vec<PathBuf>,
    /// Unpenalized covariates CSV.
    #[arg(long)]
    pub u: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SolverArgs {
    /// Convergence tolerance of the inner solver.
    #[arg(long, default_value_t = 1e-5)]
    pub tol: f64,
    /// Iteration cap of the inner solver (CD sweeps or SPG iterations).
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Smoothing parameter for tree methods (default: automatic).
    #[arg(long)]
    pub mu: Option<f64>,
    /// Keep features on their original scale instead of unit variance.
    #[arg(long)]
    pub no_scale: bool,
}

impl SolverArgs {
    fn solver_options(&self) -> SolverOptions {
        let mut o = SolverOptions::default();
        o.cd.tol = self.tol;
        o.spg.tol = self.tol;
        o.spg.mu = self.mu;
        if let Some(n) = self.max_iter {
            o.cd.max_sweeps = n;
            o.spg.max_iter = n;
        }
        o
    }

    fn standardize_options(&self) -> StandardizeOptions {
        StandardizeOptions {
            scale_x: !self.no_scale,
            ..StandardizeOptions::default()
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    /// Scenario JSON file, or 1, 2, 3 for a shipped scenario.
    #[arg(long)]
    pub scenario: String,
    /// Override the size of the first source.
    #[arg(long)]
    pub p1: Option<usize>,
    /// Override the size of the second source.
    #[arg(long)]
    pub p2: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[serde(skip)]
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    #[arg(long)]
    pub method: Method,
    #[command(flatten)]
    pub data: DataArgs,
    /// Penalty level of the first block.
    #[arg(long)]
    pub lambda: f64,
    /// Comma-separated ratios λ_s/λ₁ for every block (first is 1).
    #[arg(long, value_delimiter = ',')]
    pub ratios: Vec<f64>,
    /// Comma-separated mixing parameters.
    #[arg(long, value_delimiter = ',')]
    pub alphas: Vec<f64>,
    /// Response tree JSON for tree methods (default: cluster the responses).
    #[arg(long)]
    pub tree: Option<PathBuf>,
    #[arg(long, default_value_t = 0.95)]
    pub rho_star: f64,
    /// Earlier fit JSON used as a warm start.
    #[arg(long)]
    pub warm: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[serde(skip)]
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct TunerArgs {
    /// Number of cross-validation folds.
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = DEFAULT_N_LAMBDA)]
    pub n_lambda: usize,
    /// Smallest λ as a fraction of λ_max (default depends on n and p).
    #[arg(long)]
    pub min_ratio: Option<f64>,
    #[arg(long, default_value_t = 1e-2)]
    pub ei_tol: f64,
    /// Initial design size (default max(2d + 2, 10)).
    #[arg(long)]
    pub n_init: Option<usize>,
    #[arg(long, default_value_t = 30)]
    pub max_evals: usize,
    #[arg(long, default_value_t = 0.95)]
    pub rho_star: f64,
    #[command(flatten)]
    pub solver: SolverArgs,
}

impl TunerArgs {
    fn tune_options(&self, seed: u64) -> TuneOptions {
        let mut t = TuneOptions {
            folds: self.folds,
            seed,
            n_lambda: self.n_lambda,
            min_ratio: self.min_ratio,
            rho_star: self.rho_star,
            cv: CvOptions {
                scale_x: !self.solver.no_scale,
                solver: self.solver.solver_options(),
                ..CvOptions::default()
            },
            ..TuneOptions::default()
        };
        t.epsgo.ei_tol = self.ei_tol;
        t.epsgo.n_init = self.n_init;
        t.epsgo.max_evals = self.max_evals;
        t
    }
}

#[derive(Debug, Args, Serialize)]
pub struct TuneArgs {
    #[arg(long)]
    pub method: Method,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub tree: Option<PathBuf>,
    /// CSV of stratum labels (sample id, label) for stratified folds.
    #[arg(long)]
    pub strata: Option<PathBuf>,
    #[command(flatten)]
    pub tuner: TunerArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[serde(skip)]
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    /// Fit JSON written by `fit` or `tune`.
    #[arg(long)]
    pub fit: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// True coefficient matrix CSV, for recovery metrics.
    #[arg(long)]
    pub b_true: Option<PathBuf>,
    #[serde(skip)]
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct StudyArgs {
    /// Scenario JSON file, or 1, 2, 3 for a shipped scenario.
    #[arg(long)]
    pub scenario: String,
    /// Comma-separated methods.
    #[arg(long, value_delimiter = ',', default_value = "lasso,ipf_lasso,tree_lasso,ipf_tree_lasso")]
    pub methods: Vec<Method>,
    #[arg(long, default_value_t = 10)]
    pub reps: usize,
    #[arg(long)]
    pub p1: Option<usize>,
    #[arg(long)]
    pub p2: Option<usize>,
    #[command(flatten)]
    pub tuner: TunerArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[serde(skip)]
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct Manifest<'a, C: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    seed: u64,
    config_hash: String,
    config: &'a C,
    artifacts: Vec<String>,
    #[serde(skip_serializing_if = "serde_json::Value::is_null")]
    details: serde_json::Value,
}

fn config_hash<C: Serialize>(cfg: &C) -> Result<String> {
    let text = serde_json::to_string(cfg)?;
    Ok(format!("{:x}", Sha256::digest(text.as_bytes())))
}

fn write_manifest<C: Serialize>(
    out: &Path,
    command: &'static str,
    seed: u64,
    cfg: &C,
    artifacts: &[&str],
    details: serde_json::Value,
) -> Result<()> {
    let manifest = Manifest {
        tool: "structpen",
        version: env!("CARGO_PKG_VERSION"),
        command,
        seed,
        config_hash: config_hash(cfg)?,
        config: cfg,
        artifacts: artifacts.iter().map(|s| s.to_string()).collect(),
        details,
    };
    write_json(&out.join("manifest.json"), &manifest)
}

fn ensure_dir(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))
}

fn load_scenario(arg: &str, p1: Option<usize>, p2: Option<usize>) -> Result<ScenarioSpec> {
    let spec = match arg.parse::<usize>() {
        Ok(k) => ScenarioSpec::builtin(k)?,
        Err(_) => ScenarioSpec::read(Path::new(arg))?,
    };
    match (p1, p2) {
        (None, None) => Ok(spec),
        _ => spec.with_sizes(p1.unwrap_or(spec.p1), p2.unwrap_or(spec.p2)),
    }
}

/// Read responses, feature blocks and covariates; all files must list the
/// same sample ids in the same order.
pub fn load_dataset(data: &DataArgs) -> Result<Dataset> {
    let y = read_matrix_csv(&data.y)?;
    let mut blocks = Vec::with_capacity(data.x.len());
    let mut feature_ids = Vec::new();
    for path in &data.x {
        let b = read_matrix_csv(path)?;
        check_rows(&y, &b, path)?;
        feature_ids.extend(b.col_ids.iter().cloned());
        blocks.push(b.data);
    }
    let u = match &data.u {
        Some(path) => {
            let u = read_matrix_csv(path)?;
            check_rows(&y, &u, path)?;
            Some(u)
        }
        None => None,
    };
    let covariate_ids = u.as_ref().map(|u| u.col_ids.clone()).unwrap_or_default();
    let mut ds = Dataset::new(y.data, blocks, u.map(|u| u.data))?;
    ds.row_ids = y.row_ids;
    ds.response_ids = y.col_ids;
    ds.feature_ids = feature_ids;
    ds.covariate_ids = covariate_ids;
    Ok(ds)
}

fn check_rows(y: &LabeledMatrix, other: &LabeledMatrix, path: &Path) -> Result<()> {
    if y.row_ids != other.row_ids {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            msg: "sample ids differ from the response file (same ids in the same order are required)".into(),
        });
    }
    Ok(())
}

fn write_dataset(out: &Path, prefix: &str, ds: &Dataset) -> Result<Vec<String>> {
    let mut files = Vec::new();
    let name = format!("{prefix}_y.csv");
    write_matrix_csv(&out.join(&name), &ds.row_ids, &ds.response_ids, ds.y())?;
    files.push(name);
    let offsets = ds.block_offsets();
    for s in 0..ds.n_blocks() {
        let name = format!("{prefix}_x{}.csv", s + 1);
        let ids = &ds.feature_ids[offsets[s]..offsets[s + 1]];
        write_matrix_csv(&out.join(&name), &ds.row_ids, ids, ds.block(s))?;
        files.push(name);
    }
    Ok(files)
}

fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let mut spec = load_scenario(&a.scenario, a.p1, a.p2)?;
    spec.seed = a.seed;
    let sim = simulate_dataset(&spec)?;
    ensure_dir(&a.out)?;
    let mut files = write_dataset(&a.out, "train", &sim.train)?;
    files.extend(write_dataset(&a.out, "val", &sim.val)?);
    write_matrix_csv(
        &a.out.join("b_true.csv"),
        &sim.train.feature_ids,
        &sim.train.response_ids,
        sim.b_true.view(),
    )?;
    files.push("b_true.csv".into());
    let nonzeros = sim.b_true.iter().filter(|v| **v != 0.0).count();
    let refs: Vec<&str> = files.iter().map(String::as_str).collect();
    write_manifest(
        &a.out,
        "simulate",
        a.seed,
        &(a, &spec),
        &refs,
        serde_json::json!({ "true_nonzeros": nonzeros, "scenario": spec.name }),
    )?;
    info!("wrote {} files to {}", files.len() + 1, a.out.display());
    Ok(())
}

fn write_predictions(out: &Path, fit: &FitResult, ds: &Dataset) -> Result<()> {
    let pred = fit.predict(ds)?;
    write_matrix_csv(&out.join("predictions.csv"), &ds.row_ids, &ds.response_ids, pred.view())
}

/// Warm-start fit expressed in standardized units.
fn warm_to_standardized(
    warm: &FitResult,
    st: &crate::data::Standardization,
    p: usize,
    m: usize,
) -> Result<FitResult> {
    let b = warm.coef_dense();
    if b.dim() != (p, m) {
        return Err(Error::dims(format!("warm start is {:?}, expected {:?}", b.dim(), (p, m))));
    }
    let mut out = warm.clone();
    out.coefficients = SparseCoefs::from_dense(st.coefs_to_standardized(b.view()).view());
    if let Some(b0) = warm.unpenalized_dense() {
        let mut b0s: Array2<f64> = b0.clone();
        for (k, mut col) in b0s.columns_mut().into_iter().enumerate() {
            col.mapv_inplace(|v| v / st.response_sds[k]);
        }
        out.unpenalized = Some(Matrix::from_array(b0s.view()));
    }
    Ok(out)
}

/// Outcome of a fit command: Ok(true) when the solver converged.
fn cmd_fit(a: &FitArgs) -> Result<bool> {
    let ds = load_dataset(&a.data)?;
    let mut cfg = PenaltyConfig::new(a.method, a.lambda);
    cfg.rho_star = a.rho_star;
    if !a.ratios.is_empty() {
        cfg.ratios = a.ratios.clone();
    }
    if !a.alphas.is_empty() {
        cfg.alphas = a.alphas.clone();
    }
    cfg.validate(ds.n_blocks())?;
    let tree = match &a.tree {
        Some(path) => Some(TreeStructure::read(path)?),
        None => None,
    };
    let (std_ds, st) = standardize_with(&ds, &a.solver.standardize_options())?;
    let mut prep = Prepared::new(&std_ds, &cfg, tree.as_ref(), &a.solver.solver_options())?;
    let lambda_max = prep.lambda_max()?;
    let warm = match &a.warm {
        Some(path) => {
            let w: FitResult = read_json(path)?;
            Some(warm_to_standardized(&w, &st, ds.n_features(), ds.n_responses())?)
        }
        None => None,
    };
    let fit_std = prep.fit(a.lambda, warm.as_ref())?;
    let fit = st.to_original(&fit_std);
    ensure_dir(&a.out)?;
    write_json(&a.out.join("fit.json"), &fit)?;
    write_predictions(&a.out, &fit, &ds)?;
    let mut artifacts = vec!["fit.json", "predictions.csv"];
    if let Some(t) = prep.tree() {
        if a.tree.is_none() {
            std::fs::write(a.out.join("tree.json"), t.to_json_string()? + "\n")
                .map_err(|e| Error::io(a.out.join("tree.json"), e))?;
            artifacts.push("tree.json");
        }
    }
    write_manifest(
        &a.out,
        "fit",
        a.seed,
        a,
        &artifacts,
        serde_json::json!({
            "lambda_max": lambda_max,
            "converged": fit.converged,
            "n_iter": fit.n_iter,
            "nonzeros": fit.nnz(),
        }),
    )?;
    if !fit.converged {
        warn!("solver did not converge in {} iterations", fit.n_iter);
    }
    Ok(fit.converged)
}

fn read_strata(path: &Path, ds: &Dataset) -> Result<Vec<String>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
    let mut by_id = std::collections::HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() < 2 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                msg: "expected two columns: sample id, stratum".into(),
            });
        }
        by_id.insert(rec[0].to_string(), rec[1].to_string());
    }
    ds.row_ids
        .iter()
        .map(|id| {
            by_id.get(id).cloned().ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                msg: format!("no stratum for sample {id}"),
            })
        })
        .collect()
}

#[derive(Serialize)]
struct Selected<'a> {
    penalty: &'a PenaltyConfig,
    lambda1: f64,
    mse_cv: f64,
    se: f64,
}

fn cmd_tune(a: &TuneArgs) -> Result<bool> {
    let ds = load_dataset(&a.data)?;
    let mut opts = a.tuner.tune_options(a.seed);
    if let Some(path) = &a.tree {
        opts.tree = Some(TreeStructure::read(path)?);
    }
    if let Some(path) = &a.strata {
        opts.strata = Some(read_strata(path, &ds)?);
    }
    let outcome = tune_and_fit(&ds, a.method, &opts)?;
    ensure_dir(&a.out)?;
    let mut artifacts = vec!["cv_curve.csv", "selected.json", "fit.json", "predictions.csv"];
    outcome.cv.write_csv(&a.out.join("cv_curve.csv"))?;
    let selected = Selected {
        penalty: &outcome.selected,
        lambda1: outcome.cv.best_lambda,
        mse_cv: outcome.cv.best_mse(),
        se: outcome.cv.se[outcome.cv.best_index],
    };
    write_json(&a.out.join("selected.json"), &selected)?;
    write_json(&a.out.join("fit.json"), &outcome.fit)?;
    write_predictions(&a.out, &outcome.fit, &ds)?;
    if let Some(state) = &outcome.tuner {
        write_tuner_trace(state, &a.out.join("tuner_trace.csv"))?;
        artifacts.push("tuner_trace.csv");
    }
    if let Some(t) = &outcome.tree {
        std::fs::write(a.out.join("tree.json"), t.to_json_string()? + "\n")
            .map_err(|e| Error::io(a.out.join("tree.json"), e))?;
        artifacts.push("tree.json");
    }
    write_manifest(
        &a.out,
        "tune",
        a.seed,
        a,
        &artifacts,
        serde_json::json!({ "converged": outcome.fit.converged }),
    )?;
    Ok(outcome.fit.converged)
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let fit: FitResult = read_json(&a.fit)?;
    let ds = load_dataset(&a.data)?;
    ensure_dir(&a.out)?;
    let value = match &a.b_true {
        Some(path) => {
            let b = read_matrix_csv(path)?;
            serde_json::to_value(evaluate(&fit, b.data.view(), &ds)?)?
        }
        None => {
            let pred = fit.predict(&ds)?;
            let y = ds.y();
            let sse: f64 = y.iter().zip(pred.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
            let mut sst = 0.0;
            for col in y.columns() {
                let mean = col.mean().unwrap_or(0.0);
                sst += col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
            }
            serde_json::json!({
                "mse_val": sse / y.len() as f64,
                "r2_val": if sst > 0.0 { 1.0 - sse / sst } else { f64::NAN },
                "vs": fit.nnz(),
            })
        }
    };
    write_json(&a.out.join("metrics.json"), &value)?;
    write_predictions(&a.out, &fit, &ds)?;
    write_manifest(&a.out, "evaluate", 0, a, &["metrics.json", "predictions.csv"], serde_json::Value::Null)
}

/// Study result: Ok(true) when at least 80% of the rows succeeded.
fn cmd_study(a: &StudyArgs) -> Result<bool> {
    let spec = load_scenario(&a.scenario, a.p1, a.p2)?;
    ensure_dir(&a.out)?;
    let opts = StudyOptions {
        tune: a.tuner.tune_options(a.seed),
        csv_path: Some(a.out.join("study.csv")),
        parallel: true,
    };
    let table = run_study(&spec, &a.methods, a.reps, a.seed, &opts)?;
    table.write_summary_csv(&a.out.join("summary.csv"))?;
    table.write_plot_data(&a.out.join("plot_data.csv"))?;
    let rate = table.success_rate();
    write_manifest(
        &a.out,
        "study",
        a.seed,
        &(a, &spec),
        &["study.csv", "summary.csv", "plot_data.csv"],
        serde_json::json!({ "success_rate": rate }),
    )?;
    Ok(rate >= 0.8)
}

fn exit_code(err: &Error) -> i32 {
    if err.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_USAGE
    }
}

fn init_threads(threads: Option<usize>) {
    if let Some(n) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            warn!("could not configure {n} threads: {e}");
        }
    }
}

/// Run the tool on `args` (including the program name) and return the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    init_threads(cli.threads);
    let result = match &cli.command {
        Command::Simulate(a) => cmd_simulate(a).map(|_| true),
        Command::Fit(a) => cmd_fit(a),
        Command::Tune(a) => cmd_tune(a),
        Command::Evaluate(a) => cmd_evaluate(a).map(|_| true),
        Command::Study(a) => cmd_study(a),
    };
    match result {
        Ok(true) => EXIT_OK,
        Ok(false) => EXIT_NUMERICAL,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
