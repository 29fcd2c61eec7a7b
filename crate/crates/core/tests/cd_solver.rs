mod common;

use common::*;
use ndarray::{array, Array2, Axis};
use proptest::prelude::*;
use structpen::cd::{fit_elastic_net, fit_lasso, fit_path, lambda_max, make_path, CdOptions};
use structpen::Dataset;

fn tight() -> CdOptions {
    CdOptions {
        tol: 1e-10,
        ..CdOptions::default()
    }
}

/// Largest `|X_jᵀR_k|/(mn) − λα` over zero coefficients of a fit.
fn zero_kkt_excess(ds: &Dataset, fit: &structpen::FitResult, l1: f64) -> f64 {
    let x = centered(ds.x());
    let y = centered(ds.y());
    let b = fit.coef_dense();
    let (n, m) = (ds.n_samples() as f64, ds.n_responses() as f64);
    let g = x.t().dot(&(&y - &x.dot(&b))) / (m * n);
    g.indexed_iter()
        .filter(|((j, k), _)| b[[*j, *k]] == 0.0)
        .fold(f64::NEG_INFINITY, |a, (_, v)| a.max(v.abs() - l1))
}

fn assert_non_increasing(trace: &[f64]) {
    for w in trace.windows(2) {
        assert!(w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0), "trace increased: {} -> {}", w[0], w[1]);
    }
}

#[test]
fn kkt_certificate_at_fraction_of_lambda_max() {
    let mut r = rng(1);
    let ds = standardized(&random_dataset(&mut r, 40, &[25], 3, 0.2));
    let lmax = lambda_max(&ds);
    let lambda = 0.3 * lmax;
    let fit = fit_lasso(&ds, lambda, &tight(), None).unwrap();
    assert!(fit.converged);
    let x = centered(ds.x());
    let y = centered(ds.y());
    let p = ds.n_features();
    let viol = kkt_violation(x.view(), y.view(), fit.coef_dense().view(), &vec![lambda; p], &vec![0.0; p]);
    assert!(viol < 1e-6, "KKT violation {viol}");
    assert!(zero_kkt_excess(&ds, &fit, lambda) <= 1e-8);
    assert_non_increasing(&fit.objective_trace);
}

#[test]
fn kkt_certificate_holds_at_default_tolerance() {
    for seed in 0..5 {
        let mut r = rng(100 + seed);
        let ds = standardized(&random_dataset(&mut r, 30, &[12, 8], 4, 0.15));
        let lmax = lambda_max(&ds);
        for frac in [0.8, 0.4, 0.1, 0.02] {
            let lambda = frac * lmax;
            let (x, y, p) = (centered(ds.x()), centered(ds.y()), ds.n_features());
            let fit = fit_lasso(&ds, lambda, &CdOptions::default(), None).unwrap();
            assert!(fit.converged);
            let viol = kkt_violation(x.view(), y.view(), fit.coef_dense().view(), &vec![lambda; p], &vec![0.0; p]);
            assert!(viol <= 1e-6, "lasso KKT violation {viol}");
            assert_non_increasing(&fit.objective_trace);
            let en = fit_elastic_net(&ds, lambda, 0.5, &CdOptions::default(), None).unwrap();
            let half = vec![0.5 * lambda; p];
            let viol = kkt_violation(x.view(), y.view(), en.coef_dense().view(), &half, &half);
            assert!(viol <= 1e-6, "elastic net KKT violation {viol}");
            assert_non_increasing(&en.objective_trace);
        }
    }
}

#[test]
fn lambda_max_shuts_off_and_just_below_activates() {
    let mut r = rng(2);
    let ds = standardized(&random_dataset(&mut r, 30, &[10], 1, 0.3));
    let lmax = lambda_max(&ds);
    let at = fit_lasso(&ds, lmax, &tight(), None).unwrap();
    assert_eq!(at.nnz(), 0);
    let means = ds.y().mean_axis(Axis(0)).unwrap();
    for (a, b) in at.intercepts.iter().zip(means.iter()) {
        assert!((a - b).abs() < 1e-12);
    }
    let below = fit_lasso(&ds, 0.99 * lmax, &tight(), None).unwrap();
    assert!(below.nnz() >= 1);
}

#[test]
fn lambda_max_hand_value_and_zero_column() {
    let ds = Dataset::new(array![[1.0], [-1.0]], vec![array![[1.0], [-1.0]]], None).unwrap();
    assert!((lambda_max(&ds) - 1.0).abs() < 1e-15);
    let ds = Dataset::new(array![[1.0], [-1.0]], vec![array![[0.0], [0.0]]], None).unwrap();
    assert_eq!(lambda_max(&ds), 0.0);
}

#[test]
fn orthonormal_design_closed_form() {
    // Columns with XᵀX = nI and zero mean: coefficient = S(XᵀY/n, λ).
    let n = 8;
    let h = [
        [1.0, 1.0, 1.0],
        [1.0, -1.0, 1.0],
        [1.0, 1.0, -1.0],
        [1.0, -1.0, -1.0],
        [-1.0, 1.0, 1.0],
        [-1.0, -1.0, 1.0],
        [-1.0, 1.0, -1.0],
        [-1.0, -1.0, -1.0],
    ];
    let x = Array2::from_shape_fn((n, 3), |(i, j)| h[i][j]);
    assert_eq!(x.t().dot(&x), Array2::<f64>::eye(3) * n as f64);
    let mut r = rng(3);
    let y = centered(normal_matrix(&mut r, n, 1).view());
    let ds = Dataset::new(y.clone(), vec![x.clone()], None).unwrap();
    let lambda = 0.2;
    let fit = fit_lasso(&ds, lambda, &tight(), None).unwrap();
    let b = fit.coef_dense();
    for j in 0..3 {
        let z = x.column(j).dot(&y.column(0)) / n as f64;
        let expect = structpen::cd::soft_threshold(z, lambda);
        assert!((b[[j, 0]] - expect).abs() < 1e-12, "{} vs {expect}", b[[j, 0]]);
    }
    // Along a path the active set only grows on this design.
    let path = make_path(lambda_max(&ds), 20, 0.01).unwrap();
    let fits = fit_path(&ds, &path, 1.0, &tight()).unwrap();
    assert_eq!(fits[0].nnz(), 0);
    for w in fits.windows(2) {
        assert!(w[1].nnz() >= w[0].nnz());
    }
}

#[test]
fn elastic_net_alpha_one_is_lasso_and_matches_augmentation() {
    let mut r = rng(4);
    let ds = standardized(&random_dataset(&mut r, 20, &[10], 2, 0.3));
    let lambda = 0.2 * lambda_max(&ds);
    let lasso = fit_lasso(&ds, lambda, &tight(), None).unwrap();
    let en1 = fit_elastic_net(&ds, lambda, 1.0, &tight(), None).unwrap();
    assert!(max_abs_diff(lasso.coef_dense().view(), en1.coef_dense().view()) < 1e-10);

    // Row augmentation: X appended with √(mnλ(1−α)) I, Y with zeros; the
    // solver's 1/(2m(n+p)) normalization needs λ scaled by n/(n+p).
    let alpha = 0.5;
    let en = fit_elastic_net(&ds, lambda, alpha, &tight(), None).unwrap();
    let (n, p, m) = (ds.n_samples(), ds.n_features(), ds.n_responses());
    let x = centered(ds.x());
    let y = centered(ds.y());
    let d = ((m * n) as f64 * lambda * (1.0 - alpha)).sqrt();
    let mut xa = Array2::zeros((n + p, p));
    xa.slice_mut(ndarray::s![..n, ..]).assign(&x);
    for j in 0..p {
        xa[[n + j, j]] = d;
    }
    let mut ya = Array2::zeros((n + p, m));
    ya.slice_mut(ndarray::s![..n, ..]).assign(&y);
    let l1 = vec![alpha * lambda * n as f64 / (n + p) as f64; p];
    let aug = weighted_cd_oracle(xa.view(), ya.view(), &l1, &vec![0.0; p]);
    assert!(max_abs_diff(en.coef_dense().view(), aug.view()) < 1e-6);
}

#[test]
fn warm_path_needs_fewer_sweeps_than_cold_fits() {
    let mut r = rng(5);
    let ds = standardized(&random_dataset(&mut r, 100, &[200], 24, 0.02));
    let path = make_path(lambda_max(&ds), 20, 0.05).unwrap();
    let opts = CdOptions::default();
    let warm: usize = fit_path(&ds, &path, 1.0, &opts).unwrap().iter().map(|f| f.n_iter).sum();
    let cold: usize = path
        .lambdas
        .iter()
        .map(|&l| fit_lasso(&ds, l, &opts, None).unwrap().n_iter)
        .sum();
    assert!(warm < cold, "warm {warm} cold {cold}");
}

#[test]
fn feature_permutation_permutes_coefficients() {
    let mut r = rng(6);
    let ds = standardized(&random_dataset(&mut r, 30, &[9], 2, 0.3));
    let lambda = 0.1 * lambda_max(&ds);
    let fit = fit_lasso(&ds, lambda, &tight(), None).unwrap().coef_dense();
    let perm = [4, 0, 8, 2, 7, 1, 6, 3, 5];
    let xp = Array2::from_shape_fn((30, 9), |(i, j)| ds.x()[[i, perm[j]]]);
    let dsp = Dataset::new(ds.y().to_owned(), vec![xp], None).unwrap();
    let fitp = fit_lasso(&dsp, lambda, &tight(), None).unwrap().coef_dense();
    for j in 0..9 {
        for k in 0..2 {
            assert!((fitp[[j, k]] - fit[[perm[j], k]]).abs() < 1e-9);
        }
    }
}

#[test]
fn single_response_scaling_scales_fit() {
    let mut r = rng(7);
    let ds = standardized(&random_dataset(&mut r, 30, &[8], 1, 0.4));
    let lambda = 0.1 * lambda_max(&ds);
    let c = 3.0;
    let fit = fit_lasso(&ds, lambda, &tight(), None).unwrap();
    let scaled = ds.with_y(ds.y().to_owned() * c).unwrap();
    let fit_c = fit_lasso(&scaled, c * lambda, &tight(), None).unwrap();
    assert!(max_abs_diff((fit.coef_dense() * c).view(), fit_c.coef_dense().view()) < 1e-8);
    assert!((fit.intercepts[0] * c - fit_c.intercepts[0]).abs() < 1e-8);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fits_satisfy_kkt_and_monotone_traces(seed in 0u64..10_000, frac in 0.02f64..1.0, m in 1usize..4) {
        let mut r = rng(seed);
        let ds = standardized(&random_dataset(&mut r, 25, &[7, 5], m, 0.3));
        let lambda = frac * lambda_max(&ds);
        let fit = fit_lasso(&ds, lambda, &CdOptions::default(), None).unwrap();
        prop_assert!(zero_kkt_excess(&ds, &fit, lambda) <= 1e-6);
        for w in fit.objective_trace.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0));
        }
    }

    #[test]
    fn path_is_log_spaced(lmax in 0.01f64..100.0, n in 2usize..120, ratio in 1e-4f64..0.9) {
        let path = make_path(lmax, n, ratio).unwrap();
        prop_assert_eq!(path.lambdas.len(), n);
        prop_assert!((path.lambdas[0] - lmax).abs() <= 1e-12 * lmax);
        prop_assert!((path.lambdas[n - 1] - lmax * ratio).abs() <= 1e-10 * lmax);
        let q = path.lambdas[1] / path.lambdas[0];
        for w in path.lambdas.windows(2) {
            prop_assert!(w[1] < w[0]);
            prop_assert!((w[1] / w[0] - q).abs() < 1e-12);
        }
    }
}
