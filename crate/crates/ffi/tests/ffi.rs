use std::ffi::{CStr, CString};
use std::ptr;

use ndarray::Array2;
use structpen::data::StandardizeOptions;
use structpen::estimator::{fit_standardized, SolverOptions};
use structpen::{Dataset, Method, PenaltyConfig};
use structpen_ffi::*;

fn lcg(seed: u64) -> impl FnMut() -> f64 {
    let mut s = seed;
    move || {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    }
}

struct Toy {
    n: usize,
    m: usize,
    p: usize,
    sizes: Vec<usize>,
    x: Vec<f64>,
    y: Vec<f64>,
}

fn toy() -> Toy {
    let (n, m, sizes) = (30, 3, vec![5, 7]);
    let p = sizes.iter().sum();
    let mut r = lcg(11);
    let x: Vec<f64> = (0..n * p).map(|_| r()).collect();
    let mut y = vec![0.0; n * m];
    for i in 0..n {
        for k in 0..m {
            y[i * m + k] = 2.0 * x[i * p + k] - x[i * p + 6] + 0.1 * r();
        }
    }
    Toy { n, m, p, sizes, x, y }
}

fn dataset(t: &Toy) -> *mut SpDataset {
    let mut ds = ptr::null_mut();
    let st = unsafe { sp_dataset_new(t.y.as_ptr(), t.n, t.m, t.x.as_ptr(), t.p, t.sizes.as_ptr(), 2, &mut ds) };
    assert_eq!(st, SpStatus::Ok);
    assert!(!ds.is_null());
    ds
}

fn last_error() -> String {
    let p = sp_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn fit_matches_library_route() {
    let t = toy();
    let ds = dataset(&t);
    let method = CString::new("ipf_lasso").unwrap();
    let ratios = [1.0, 2.5];
    let mut fit = ptr::null_mut();
    let st = unsafe { sp_fit(ds, method.as_ptr(), 0.05, ratios.as_ptr(), 2, ptr::null(), 0, &mut fit) };
    assert_eq!(st, SpStatus::Ok);

    let (mut p, mut m) = (0, 0);
    assert_eq!(unsafe { sp_fit_dims(fit, &mut p, &mut m) }, SpStatus::Ok);
    assert_eq!((p, m), (t.p, t.m));
    let mut b = vec![0.0; p * m];
    assert_eq!(unsafe { sp_fit_coefficients(fit, b.as_mut_ptr(), b.len()) }, SpStatus::Ok);
    let mut conv = 0;
    assert_eq!(unsafe { sp_fit_converged(fit, &mut conv) }, SpStatus::Ok);
    assert_eq!(conv, 1);

    let xa = Array2::from_shape_vec((t.n, t.p), t.x.clone()).unwrap();
    let blocks = vec![
        xa.slice(ndarray::s![.., 0..5]).to_owned(),
        xa.slice(ndarray::s![.., 5..12]).to_owned(),
    ];
    let lib_ds = Dataset::new(Array2::from_shape_vec((t.n, t.m), t.y.clone()).unwrap(), blocks, None).unwrap();
    let cfg = PenaltyConfig::new(Method::IpfLasso, 0.05).with_ratios(ratios.to_vec());
    let direct = fit_standardized(&lib_ds, &cfg, None, &SolverOptions::default(), &StandardizeOptions::default())
        .unwrap()
        .coef_dense();
    for (a, d) in b.iter().zip(direct.iter()) {
        assert_eq!(a, d);
    }

    let mut pred = vec![0.0; t.n * t.m];
    assert_eq!(unsafe { sp_fit_predict(fit, ds, pred.as_mut_ptr(), pred.len()) }, SpStatus::Ok);
    let mut b0 = vec![0.0; t.m];
    assert_eq!(unsafe { sp_fit_intercepts(fit, b0.as_mut_ptr(), t.m) }, SpStatus::Ok);
    for i in 0..t.n {
        for k in 0..t.m {
            let manual: f64 = b0[k] + (0..t.p).map(|j| t.x[i * t.p + j] * b[j * t.m + k]).sum::<f64>();
            assert!((manual - pred[i * t.m + k]).abs() < 1e-10);
        }
    }

    let mut json = ptr::null_mut();
    assert_eq!(unsafe { sp_fit_to_json(fit, &mut json) }, SpStatus::Ok);
    let text = unsafe { CStr::from_ptr(json) }.to_str().unwrap().to_owned();
    let back: structpen::FitResult = serde_json::from_str(&text).unwrap();
    assert_eq!(back.coef_dense().iter().copied().collect::<Vec<_>>(), b);
    unsafe {
        sp_string_free(json);
        sp_fit_free(fit);
        sp_dataset_free(ds);
    }
}

#[test]
fn errors_map_to_status_codes() {
    let t = toy();
    let mut ds = ptr::null_mut();
    let bad_sizes = [5usize, 5];
    let st = unsafe { sp_dataset_new(t.y.as_ptr(), t.n, t.m, t.x.as_ptr(), t.p, bad_sizes.as_ptr(), 2, &mut ds) };
    assert_eq!(st, SpStatus::DimensionMismatch);
    assert!(ds.is_null());
    assert!(last_error().contains("block sizes"));

    let st = unsafe { sp_dataset_new(ptr::null(), t.n, t.m, t.x.as_ptr(), t.p, t.sizes.as_ptr(), 2, &mut ds) };
    assert_eq!(st, SpStatus::NullPointer);

    let mut xnan = t.x.clone();
    xnan[3] = f64::NAN;
    let st = unsafe { sp_dataset_new(t.y.as_ptr(), t.n, t.m, xnan.as_ptr(), t.p, t.sizes.as_ptr(), 2, &mut ds) };
    assert_eq!(st, SpStatus::NonFinite);

    let ds = dataset(&t);
    let mut fit = ptr::null_mut();
    let unknown = CString::new("ridge_forest").unwrap();
    let st = unsafe { sp_fit(ds, unknown.as_ptr(), 0.1, ptr::null(), 0, ptr::null(), 0, &mut fit) };
    assert_eq!(st, SpStatus::InvalidArgument);
    assert!(fit.is_null());

    let lasso = CString::new("lasso").unwrap();
    let st = unsafe { sp_fit(ds, lasso.as_ptr(), -1.0, ptr::null(), 0, ptr::null(), 0, &mut fit) };
    assert_eq!(st, SpStatus::InvalidArgument);

    let st = unsafe { sp_fit(ds, lasso.as_ptr(), 0.1, ptr::null(), 0, ptr::null(), 0, &mut fit) };
    assert_eq!(st, SpStatus::Ok);
    let mut small = vec![0.0; 3];
    assert_eq!(
        unsafe { sp_fit_coefficients(fit, small.as_mut_ptr(), small.len()) },
        SpStatus::DimensionMismatch
    );
    assert_eq!(unsafe { sp_fit_dims(ptr::null(), ptr::null_mut(), ptr::null_mut()) }, SpStatus::NullPointer);
    unsafe {
        sp_fit_free(fit);
        sp_dataset_free(ds);
        sp_fit_free(ptr::null_mut());
        sp_dataset_free(ptr::null_mut());
    }
}

#[test]
fn tune_runs_through_the_interface() {
    let t = toy();
    let ds = dataset(&t);
    let method = CString::new("lasso").unwrap();
    let mut fit = ptr::null_mut();
    let st = unsafe { sp_tune(ds, method.as_ptr(), 3, 10, 10, 5, &mut fit) };
    assert_eq!(st, SpStatus::Ok, "{}", last_error());
    let mut lambda = 0.0;
    assert_eq!(unsafe { sp_fit_lambda(fit, &mut lambda) }, SpStatus::Ok);
    assert!(lambda > 0.0);
    unsafe {
        sp_fit_free(fit);
        sp_dataset_free(ds);
    }
}

#[test]
fn version_is_package_version() {
    let v = unsafe { CStr::from_ptr(sp_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}
