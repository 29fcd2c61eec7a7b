mod common;

use common::rng;
use proptest::prelude::*;
use rand::Rng;
use structpen::epsgo::{
    epsgo_minimize, expected_improvement, gp_posterior, Dim, EpsgoOptions, KernelHyper, SearchSpace, TunerState,
};
use structpen::Error;

/// Solve `a x = b` by Gaussian elimination with partial pivoting.
fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// GP posterior from the textbook formulas on unit-cube coordinates.
fn dense_posterior(x: &[Vec<f64>], y: &[f64], h: &KernelHyper, q: &[f64]) -> (f64, f64) {
    let k = |a: &[f64], b: &[f64]| {
        let s: f64 = a
            .iter()
            .zip(b)
            .zip(&h.length_scales)
            .map(|((u, v), l)| ((u - v) / l).powi(2))
            .sum();
        h.signal_var * (-0.5 * s).exp()
    };
    let n = x.len();
    let kmat: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| k(&x[i], &x[j]) + if i == j { h.noise_var } else { 0.0 }).collect())
        .collect();
    let kq: Vec<f64> = x.iter().map(|xi| k(xi, q)).collect();
    let alpha = dense_solve(kmat.clone(), y.iter().map(|v| v - h.prior_mean).collect());
    let v = dense_solve(kmat, kq.clone());
    let mean = h.prior_mean + kq.iter().zip(&alpha).map(|(a, b)| a * b).sum::<f64>();
    let var = h.signal_var - kq.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
    (mean, var)
}

fn space_2d() -> SearchSpace {
    SearchSpace::new(vec![Dim::linear("a", 0.0, 2.0), Dim::log10("r", 1e-2, 1e2)]).unwrap()
}

#[test]
fn posterior_matches_dense_oracle() {
    for seed in 0..5 {
        let mut r = rng(seed);
        let space = space_2d();
        let mut state = TunerState::new(space.clone());
        for _ in 0..5 {
            let p = vec![r.random_range(0.0..2.0), 10f64.powf(r.random_range(-2.0..2.0))];
            let loss = (p[0] - 1.0).powi(2) + p[1].log10().powi(2) + r.random_range(0.0..0.1);
            state.record(p, Some(loss));
        }
        state.fit_hyper().unwrap();
        let unit: Vec<Vec<f64>> = state
            .points
            .iter()
            .map(|p| vec![p[0] / 2.0, (p[1].log10() + 2.0) / 4.0])
            .collect();
        for _ in 0..10 {
            let q = vec![r.random_range(0.0..2.0), 10f64.powf(r.random_range(-2.0..2.0))];
            let qu = vec![q[0] / 2.0, (q[1].log10() + 2.0) / 4.0];
            let (m, v) = gp_posterior(&state, &q).unwrap();
            let (mo, vo) = dense_posterior(&unit, &state.losses, &state.kernel_hyper, &qu);
            assert!((m - mo).abs() <= 1e-10, "mean {m} vs {mo}");
            assert!((v - vo.max(0.0)).abs() <= 1e-10, "variance {v} vs {vo}");
            assert!(v >= 0.0);
        }
    }
}

#[test]
fn noiseless_posterior_interpolates_and_decays() {
    let space = SearchSpace::new(vec![Dim::linear("x", 0.0, 100.0)]).unwrap();
    let mut state = TunerState::new(space);
    for (x, y) in [(10.0, 1.0), (12.0, 3.0), (15.0, 2.0)] {
        state.record(vec![x], Some(y));
    }
    state.kernel_hyper = KernelHyper {
        signal_var: 2.0,
        length_scales: vec![0.02],
        noise_var: 0.0,
        prior_mean: 0.5,
    };
    for (x, y) in [(10.0, 1.0), (12.0, 3.0), (15.0, 2.0)] {
        let (m, v) = gp_posterior(&state, &[x]).unwrap();
        assert!((m - y).abs() < 1e-8 && v < 1e-8);
    }
    let (m, v) = gp_posterior(&state, &[95.0]).unwrap();
    assert!((m - 0.5).abs() <= 0.01 * 0.5);
    assert!((v - 2.0).abs() <= 0.01 * 2.0);
}

#[test]
fn gp_needs_two_points() {
    let mut state = TunerState::new(SearchSpace::new(vec![Dim::linear("x", 0.0, 1.0)]).unwrap());
    state.record(vec![0.5], Some(1.0));
    assert!(gp_posterior(&state, &[0.2]).is_err());
}

#[test]
fn expected_improvement_hand_values_and_monotone_in_sigma() {
    assert_eq!(expected_improvement(1.0, 0.0, 1.0), 0.0);
    assert_eq!(expected_improvement(0.0, 0.0, 1.0), 1.0);
    let mut prev = 0.0;
    for i in 1..200 {
        let s = i as f64 * 0.05;
        let e = expected_improvement(3.0, s * s, 3.0);
        assert!(e > prev);
        prev = e;
    }
}

fn quadratic_options(seed: u64) -> EpsgoOptions {
    EpsgoOptions {
        n_init: Some(5),
        max_evals: 15,
        seed,
        ..EpsgoOptions::default()
    }
}

#[test]
fn finds_quadratic_minimizer_across_seeds() {
    let f = |x: f64| (x - 0.3).powi(2);
    let grid_best = (0..1000)
        .map(|i| i as f64 / 999.0)
        .min_by(|a, b| f(*a).total_cmp(&f(*b)))
        .unwrap();
    let space = SearchSpace::new(vec![Dim::linear("x", 0.0, 1.0)]).unwrap();
    for seed in 0..5 {
        let state = epsgo_minimize(|p| Ok(f(p[0])), &space, &quadratic_options(seed)).unwrap();
        assert!(state.n_evals <= 15);
        assert!((state.incumbent.0[0] - grid_best).abs() <= 0.05, "seed {seed}: {:?}", state.incumbent);
    }
}

#[test]
fn constant_objective_stops_after_one_acquisition() {
    let space = SearchSpace::new(vec![Dim::linear("x", 0.0, 1.0)]).unwrap();
    let state = epsgo_minimize(|_| Ok(1.0), &space, &quadratic_options(3)).unwrap();
    assert_eq!(state.n_evals, 6);
    assert!(state.max_ei[0] < 1e-2);
}

#[test]
fn failures_are_recorded_and_search_continues() {
    let space = SearchSpace::new(vec![Dim::linear("x", 0.0, 1.0)]).unwrap();
    let state = epsgo_minimize(
        |p| {
            if p[0] > 0.8 {
                Err(Error::Numerical("diverged".into()))
            } else {
                Ok((p[0] - 0.3).powi(2))
            }
        },
        &space,
        &EpsgoOptions {
            n_init: Some(10),
            max_evals: 15,
            seed: 1,
            ..EpsgoOptions::default()
        },
    )
    .unwrap();
    assert!(state.failed.iter().any(|&f| f));
    assert!(state.incumbent.1 < 1e-2);
}

#[test]
fn rejects_inconsistent_budgets() {
    let space = SearchSpace::new(vec![Dim::linear("x", 0.0, 1.0), Dim::linear("y", 0.0, 1.0)]).unwrap();
    let small_init = EpsgoOptions {
        n_init: Some(2),
        ..EpsgoOptions::default()
    };
    assert!(epsgo_minimize(|_| Ok(0.0), &space, &small_init).is_err());
    let small_budget = EpsgoOptions {
        n_init: Some(6),
        max_evals: 5,
        ..EpsgoOptions::default()
    };
    assert!(epsgo_minimize(|_| Ok(0.0), &space, &small_budget).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn incumbent_is_monotone_and_runs_are_reproducible(seed in 0u64..1000, cx in 0.1f64..0.9, cy in -1.5f64..1.5) {
        let f = |p: &[f64]| Ok((p[0] - 2.0 * cx).powi(2) + (p[1].log10() - cy).powi(2));
        let opts = EpsgoOptions { max_evals: 16, seed, n_candidates: 512, ..EpsgoOptions::default() };
        let a = epsgo_minimize(f, &space_2d(), &opts).unwrap();
        let b = epsgo_minimize(f, &space_2d(), &opts).unwrap();
        prop_assert_eq!(&a.points, &b.points);
        prop_assert_eq!(&a.losses, &b.losses);
        for w in a.incumbent_trace.windows(2) {
            prop_assert!(w[1] <= w[0]);
        }
        let min = a.losses.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assert_eq!(a.incumbent.1, min);
    }
}
