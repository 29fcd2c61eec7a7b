//! Gaussian-process interval search for penalty ratios and mixing parameters.
//!
//! Points live in the unit cube internally (log10 dimensions are mapped
//! through their exponent). A squared-exponential ARD kernel with a noise
//! term models the loss surface; its hyperparameters maximize the marginal
//! likelihood. New points maximize expected improvement over a quasi-random
//! candidate set followed by a local polish.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::rng::{substream, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Linear,
    Log10,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dim {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub scale: Scale,
}

impl Dim {
    pub fn linear(name: &str, lower: f64, upper: f64) -> Self {
        Dim {
            name: name.into(),
            lower,
            upper,
            scale: Scale::Linear,
        }
    }

    pub fn log10(name: &str, lower: f64, upper: f64) -> Self {
        Dim {
            name: name.into(),
            lower,
            upper,
            scale: Scale::Log10,
        }
    }

    fn to_unit(&self, v: f64) -> f64 {
        match self.scale {
            Scale::Linear => (v - self.lower) / (self.upper - self.lower),
            Scale::Log10 => (v.log10() - self.lower.log10()) / (self.upper.log10() - self.lower.log10()),
        }
    }

    fn from_unit(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        match self.scale {
            Scale::Linear => self.lower + u * (self.upper - self.lower),
            Scale::Log10 => {
                let (a, b) = (self.lower.log10(), self.upper.log10());
                10f64.powf(a + u * (b - a))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub dims: Vec<Dim>,
}

impl SearchSpace {
    pub fn new(dims: Vec<Dim>) -> Result<Self> {
        let s = SearchSpace { dims };
        s.validate()?;
        Ok(s)
    }

    pub fn d(&self) -> usize {
        self.dims.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() {
            return Err(Error::invalid("search space needs at least one dimension"));
        }
        for d in &self.dims {
            if !(d.lower < d.upper) || !d.lower.is_finite() || !d.upper.is_finite() {
                return Err(Error::invalid(format!("dimension {} has bounds [{}, {}]", d.name, d.lower, d.upper)));
            }
            if d.scale == Scale::Log10 && !(d.lower > 0.0) {
                return Err(Error::invalid(format!("log-scale dimension {} needs a positive lower bound", d.name)));
            }
        }
        Ok(())
    }

    pub fn to_unit(&self, point: &[f64]) -> Vec<f64> {
        self.dims.iter().zip(point).map(|(d, &v)| d.to_unit(v)).collect()
    }

    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        self.dims.iter().zip(u).map(|(d, &v)| d.from_unit(v)).collect()
    }
}

/// Kernel `s² exp(−½ Σ_i (x_i − x'_i)²/ℓ_i²) + σ² δ` over unit-cube points,
/// with constant prior mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelHyper {
    pub signal_var: f64,
    pub length_scales: Vec<f64>,
    pub noise_var: f64,
    pub prior_mean: f64,
}

impl KernelHyper {
    fn k(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut s = 0.0;
        for ((x, y), l) in a.iter().zip(b).zip(&self.length_scales) {
            let d = (x - y) / l;
            s += d * d;
        }
        self.signal_var * (-0.5 * s).exp()
    }
}

/// Fitted Gaussian-process regression model.
#[derive(Clone, Debug)]
pub struct Gp {
    x: Vec<Vec<f64>>,
    hyper: KernelHyper,
    chol: DMatrix<f64>,
    alpha: DVector<f64>,
}

const JITTERS: [f64; 6] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

impl Gp {
    pub fn fit(x: &[Vec<f64>], y: &[f64], hyper: &KernelHyper) -> Result<Self> {
        let n = x.len();
        if n == 0 || y.len() != n {
            return Err(Error::dims(format!("{} points with {} values", n, y.len())));
        }
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = hyper.k(&x[i], &x[j]);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
            k[(i, i)] += hyper.noise_var;
        }
        let scale = hyper.signal_var + hyper.noise_var;
        for jitter in JITTERS {
            let mut kj = k.clone();
            for i in 0..n {
                kj[(i, i)] += jitter * scale;
            }
            if let Some(ch) = kj.cholesky() {
                let resid = DVector::from_iterator(n, y.iter().map(|v| v - hyper.prior_mean));
                let alpha = ch.solve(&resid);
                return Ok(Gp {
                    x: x.to_vec(),
                    hyper: hyper.clone(),
                    chol: ch.l(),
                    alpha,
                });
            }
        }
        Err(Error::Numerical("GP covariance is singular even with 1e-6 jitter".into()))
    }

    /// Posterior mean and variance of the latent function at `q`.
    pub fn predict(&self, q: &[f64]) -> (f64, f64) {
        let n = self.x.len();
        let kq = DVector::from_iterator(n, self.x.iter().map(|xi| self.hyper.k(xi, q)));
        let mean = self.hyper.prior_mean + kq.dot(&self.alpha);
        let v = self
            .chol
            .solve_lower_triangular(&kq)
            .expect("Cholesky factor has a nonzero diagonal");
        let var = (self.hyper.signal_var - v.dot(&v)).max(0.0);
        (mean, var)
    }

    /// Log marginal likelihood of the training values.
    pub fn log_marginal_likelihood(&self, y: &[f64]) -> f64 {
        let n = y.len() as f64;
        let resid = DVector::from_iterator(y.len(), y.iter().map(|v| v - self.hyper.prior_mean));
        let logdet: f64 = self.chol.diagonal().iter().map(|d| d.ln()).sum();
        -0.5 * resid.dot(&self.alpha) - logdet - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
    }
}

/// Closed-form expected improvement below `best` for a Gaussian prediction.
pub fn expected_improvement(mean: f64, variance: f64, best: f64) -> f64 {
    let sigma = variance.max(0.0).sqrt();
    let diff = best - mean;
    if sigma <= 0.0 {
        return diff.max(0.0);
    }
    let z = diff / sigma;
    let n = Normal::standard();
    (diff * n.cdf(z) + sigma * n.pdf(z)).max(0.0)
}

/// Loss recorded for a failed objective evaluation.
pub const FAILED_LOSS: f64 = 1e300;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsgoOptions {
    /// Initial Latin-hypercube size; `None` means `max(2d + 2, 10)`.
    pub n_init: Option<usize>,
    pub max_evals: usize,
    pub ei_tol: f64,
    pub seed: u64,
    pub n_candidates: usize,
    /// Points (native coordinates) evaluated before the Latin hypercube;
    /// they count toward `n_init`.
    pub initial_points: Vec<Vec<f64>>,
}

impl Default for EpsgoOptions {
    fn default() -> Self {
        EpsgoOptions {
            n_init: None,
            max_evals: 30,
            ei_tol: 1e-2,
            seed: 0,
            n_candidates: 4096,
            initial_points: Vec::new(),
        }
    }
}

impl EpsgoOptions {
    pub fn resolved_n_init(&self, d: usize) -> usize {
        self.n_init.unwrap_or((2 * d + 2).max(10))
    }
}

/// Everything the tuner has seen so far.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TunerState {
    pub space: SearchSpace,
    /// Visited points in native coordinates.
    pub points: Vec<Vec<f64>>,
    pub losses: Vec<f64>,
    pub failed: Vec<bool>,
    pub kernel_hyper: KernelHyper,
    pub incumbent: (Vec<f64>, f64),
    pub n_evals: usize,
    /// Incumbent loss after each evaluation.
    pub incumbent_trace: Vec<f64>,
    /// Largest expected improvement at each acquisition step.
    pub max_ei: Vec<f64>,
}

impl TunerState {
    pub fn new(space: SearchSpace) -> Self {
        let d = space.d();
        TunerState {
            space,
            points: Vec::new(),
            losses: Vec::new(),
            failed: Vec::new(),
            kernel_hyper: KernelHyper {
                signal_var: 1.0,
                length_scales: vec![0.3; d],
                noise_var: 1e-6,
                prior_mean: 0.0,
            },
            incumbent: (Vec::new(), f64::INFINITY),
            n_evals: 0,
            incumbent_trace: Vec::new(),
            max_ei: Vec::new(),
        }
    }

    pub fn record(&mut self, point: Vec<f64>, loss: Option<f64>) {
        let (value, failed) = match loss {
            Some(v) if v.is_finite() => (v, false),
            _ => (FAILED_LOSS, true),
        };
        if !failed && value < self.incumbent.1 {
            self.incumbent = (point.clone(), value);
        }
        self.points.push(point);
        self.losses.push(value);
        self.failed.push(failed);
        self.n_evals += 1;
        self.incumbent_trace.push(self.incumbent.1);
    }

    fn unit_points(&self) -> Vec<Vec<f64>> {
        self.points.iter().map(|p| self.space.to_unit(p)).collect()
    }

    /// Losses with failures replaced by the worst successful loss.
    fn model_losses(&self) -> Vec<f64> {
        let worst = self
            .losses
            .iter()
            .zip(&self.failed)
            .filter(|(_, f)| !**f)
            .map(|(l, _)| *l)
            .fold(f64::NEG_INFINITY, f64::max);
        let fill = if worst.is_finite() { worst } else { 0.0 };
        self.losses
            .iter()
            .zip(&self.failed)
            .map(|(l, f)| if *f { fill } else { *l })
            .collect()
    }

    /// Refit the kernel hyperparameters by maximizing the marginal likelihood.
    pub fn fit_hyper(&mut self) -> Result<()> {
        let x = self.unit_points();
        let y = self.model_losses();
        self.kernel_hyper = fit_kernel_hyper(&x, &y, self.space.d())?;
        Ok(())
    }

    pub fn gp(&self) -> Result<Gp> {
        Gp::fit(&self.unit_points(), &self.model_losses(), &self.kernel_hyper)
    }
}

/// Posterior at a native-coordinate query using the state's current kernel.
pub fn gp_posterior(state: &TunerState, query: &[f64]) -> Result<(f64, f64)> {
    if state.points.len() < 2 {
        return Err(Error::invalid("the GP needs at least 2 visited points"));
    }
    let gp = state.gp()?;
    Ok(gp.predict(&state.space.to_unit(query)))
}

const LOG_SIGNAL: (f64, f64) = (-13.8, 4.6);
const LOG_LENGTH: (f64, f64) = (-4.6, 2.3);
const LOG_NOISE: (f64, f64) = (-13.8, 0.0);

fn fit_kernel_hyper(x: &[Vec<f64>], y: &[f64], d: usize) -> Result<KernelHyper> {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    if !(sd > 1e-12 * mean.abs().max(1e-300)) {
        return Ok(KernelHyper {
            signal_var: (1e-6 * mean.abs().max(1e-12)).powi(2),
            length_scales: vec![1.0; d],
            noise_var: 0.0,
            prior_mean: mean,
        });
    }
    let ys: Vec<f64> = y.iter().map(|v| (v - mean) / sd).collect();
    let bounds: Vec<(f64, f64)> = std::iter::once(LOG_SIGNAL)
        .chain(std::iter::repeat(LOG_LENGTH).take(d))
        .chain(std::iter::once(LOG_NOISE))
        .collect();
    let decode = |theta: &[f64]| KernelHyper {
        signal_var: theta[0].exp(),
        length_scales: theta[1..=d].iter().map(|t| t.exp()).collect(),
        noise_var: theta[d + 1].exp(),
        prior_mean: 0.0,
    };
    let objective = |theta: &[f64]| -> f64 {
        let mut clamped = theta.to_vec();
        let mut excess = 0.0;
        for (t, (lo, hi)) in clamped.iter_mut().zip(&bounds) {
            let c = t.clamp(*lo, *hi);
            excess += (*t - c) * (*t - c);
            *t = c;
        }
        match Gp::fit(x, &ys, &decode(&clamped)) {
            Ok(gp) => -gp.log_marginal_likelihood(&ys) + 10.0 * excess,
            Err(_) => 1e10 + excess,
        }
    };
    let starts = [
        [0.0, 0.3f64.ln(), (1e-3f64).ln()],
        [0.0, 0.1f64.ln(), (1e-2f64).ln()],
        [0.0, 1.0f64.ln(), (1e-4f64).ln()],
    ];
    let mut best: Option<(Vec<f64>, f64)> = None;
    for s in starts {
        let mut x0 = vec![s[0]];
        x0.extend(std::iter::repeat(s[1]).take(d));
        x0.push(s[2]);
        let (theta, f) = nelder_mead(objective, &x0, 0.5, 300, 1e-8);
        if best.as_ref().map_or(true, |b| f < b.1) {
            best = Some((theta, f));
        }
    }
    let (theta, _) = best.expect("at least one start");
    let clamped: Vec<f64> = theta.iter().zip(&bounds).map(|(t, (lo, hi))| t.clamp(*lo, *hi)).collect();
    let h = decode(&clamped);
    Ok(KernelHyper {
        signal_var: h.signal_var * var,
        length_scales: h.length_scales,
        noise_var: h.noise_var * var,
        prior_mean: mean,
    })
}

/// Minimize `f` with the Nelder–Mead simplex method.
fn nelder_mead<F: Fn(&[f64]) -> f64>(f: F, x0: &[f64], step: f64, max_iter: usize, ftol: f64) -> (Vec<f64>, f64) {
    let n = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), f(x0)));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += step;
        let v = f(&x);
        simplex.push((x, v));
    }
    for _ in 0..max_iter {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (best, worst) = (simplex[0].1, simplex[n].1);
        if (worst - best).abs() <= ftol * (best.abs() + worst.abs() + 1e-12) {
            break;
        }
        let centroid: Vec<f64> = (0..n)
            .map(|k| simplex[..n].iter().map(|(x, _)| x[k]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n].0)
                .map(|(c, w)| c + t * (w - c))
                .collect()
        };
        let xr = along(-1.0);
        let fr = f(&xr);
        if fr < simplex[0].1 {
            let xe = along(-2.0);
            let fe = f(&xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let xc = if fr < simplex[n].1 { along(-0.5) } else { along(0.5) };
            let fc = f(&xc);
            if fc < simplex[n].1.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                let x_best = simplex[0].0.clone();
                for item in simplex.iter_mut().skip(1) {
                    let x: Vec<f64> = item.0.iter().zip(&x_best).map(|(a, b)| b + 0.5 * (a - b)).collect();
                    let v = f(&x);
                    *item = (x, v);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    simplex.swap_remove(0)
}

/// Latin-hypercube sample of `n` points in `[0, 1]^d`.
pub fn latin_hypercube<R: Rng>(n: usize, d: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut pts = vec![vec![0.0; d]; n];
    for k in 0..d {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(rng);
        for (i, s) in strata.into_iter().enumerate() {
            pts[i][k] = (s as f64 + rng.random::<f64>()) / n as f64;
        }
    }
    pts
}

const PRIMES: [u64; 8] = [2, 3, 5, 7, 11, 13, 17, 19];

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// Randomly shifted Halton points in `[0, 1]^d`.
fn candidates<R: Rng>(n: usize, d: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let shift: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
    (1..=n as u64)
        .map(|i| {
            (0..d)
                .map(|k| {
                    let base = PRIMES[k % PRIMES.len()] + 2 * (k / PRIMES.len()) as u64 * 23;
                    (radical_inverse(i, base) + shift[k]).fract()
                })
                .collect()
        })
        .collect()
}

/// Point maximizing expected improvement, and that improvement.
fn acquire<R: Rng>(gp: &Gp, best: f64, d: usize, n_candidates: usize, rng: &mut R) -> (Vec<f64>, f64) {
    let ei = |u: &[f64]| {
        let (m, v) = gp.predict(u);
        expected_improvement(m, v, best)
    };
    let mut scored: Vec<(Vec<f64>, f64)> = candidates(n_candidates, d, rng)
        .into_iter()
        .map(|u| {
            let e = ei(&u);
            (u, e)
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1));
    let mut winner = scored[0].clone();
    for (start, _) in scored.iter().take(3) {
        let neg = |u: &[f64]| {
            let c: Vec<f64> = u.iter().map(|v| v.clamp(0.0, 1.0)).collect();
            -ei(&c)
        };
        let (u, f) = nelder_mead(neg, start, 0.02, 60, 1e-10);
        let u: Vec<f64> = u.iter().map(|v| v.clamp(0.0, 1.0)).collect();
        if -f > winner.1 {
            winner = (u, -f);
        }
    }
    winner
}

/// Minimize `objective` over `space`.
///
/// The objective receives native coordinates; errors and non-finite values
/// are recorded as failures and the search continues.
pub fn epsgo_minimize<F>(mut objective: F, space: &SearchSpace, opts: &EpsgoOptions) -> Result<TunerState>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    space.validate()?;
    let d = space.d();
    let n_init = opts.resolved_n_init(d);
    if n_init < d + 1 {
        return Err(Error::invalid(format!("n_init must be at least d + 1 = {}", d + 1)));
    }
    if opts.max_evals < n_init {
        return Err(Error::invalid(format!(
            "max_evals ({}) must be at least n_init ({n_init})",
            opts.max_evals
        )));
    }
    let mut rng = substream(opts.seed, Stream::Tuner, 0);
    let mut state = TunerState::new(space.clone());
    if opts.initial_points.len() > n_init {
        return Err(Error::invalid("more initial points than n_init"));
    }
    for point in &opts.initial_points {
        if point.len() != d {
            return Err(Error::dims(format!("initial point has {} coordinates, expected {d}", point.len())));
        }
        let u = space.to_unit(point);
        if u.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid(format!("initial point {point:?} lies outside the search space")));
        }
        let loss = objective(point).ok();
        state.record(point.clone(), loss);
    }
    for u in latin_hypercube(n_init - opts.initial_points.len(), d, &mut rng) {
        let point = space.from_unit(&u);
        let loss = objective(&point).ok();
        state.record(point, loss);
    }
    while state.n_evals < opts.max_evals {
        state.fit_hyper()?;
        let gp = state.gp()?;
        let best = if state.incumbent.1.is_finite() {
            state.incumbent.1
        } else {
            state.model_losses().iter().cloned().fold(f64::INFINITY, f64::min)
        };
        let (u, max_ei) = acquire(&gp, best, d, opts.n_candidates, &mut rng);
        state.max_ei.push(max_ei);
        let point = space.from_unit(&u);
        let loss = objective(&point).ok();
        state.record(point, loss);
        if max_ei < opts.ei_tol * best.abs().max(1e-10) {
            break;
        }
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ei_hand_values() {
        assert_eq!(expected_improvement(1.0, 0.0, 1.0), 0.0);
        assert_eq!(expected_improvement(0.0, 0.0, 1.0), 1.0);
        let mut prev = 0.0;
        for i in 1..50 {
            let s = i as f64 * 0.1;
            let e = expected_improvement(2.0, s * s, 2.0);
            assert!(e > prev);
            prev = e;
        }
    }

    #[test]
    fn unit_mapping_roundtrip() {
        let s = SearchSpace::new(vec![Dim::log10("r", 1e-3, 1e3), Dim::linear("a", 0.0, 1.0)]).unwrap();
        let p = vec![10.0, 0.25];
        let u = s.to_unit(&p);
        assert!((u[0] - 4.0 / 6.0).abs() < 1e-12);
        let back = s.from_unit(&u);
        assert!((back[0] - 10.0).abs() < 1e-9 && (back[1] - 0.25).abs() < 1e-12);
        assert!(SearchSpace::new(vec![Dim::linear("x", 1.0, 1.0)]).is_err());
    }

    #[test]
    fn lhs_has_one_point_per_stratum() {
        let mut rng = substream(1, Stream::Tuner, 0);
        let pts = latin_hypercube(7, 3, &mut rng);
        for k in 0..3 {
            let mut strata: Vec<usize> = pts.iter().map(|p| (p[k] * 7.0) as usize).collect();
            strata.sort_unstable();
            assert_eq!(strata, (0..7).collect::<Vec<_>>());
        }
    }

    #[test]
    fn nelder_mead_finds_quadratic_minimum() {
        let (x, f) = nelder_mead(|v| (v[0] - 1.0).powi(2) + 3.0 * (v[1] + 2.0).powi(2), &[0.0, 0.0], 0.5, 500, 1e-14);
        assert!((x[0] - 1.0).abs() < 1e-4 && (x[1] + 2.0).abs() < 1e-4 && f < 1e-8);
    }

    #[test]
    fn quadratic_and_constant_objectives() {
        let space = SearchSpace::new(vec![Dim::linear("x", 0.0, 1.0)]).unwrap();
        for seed in 0..5 {
            let opts = EpsgoOptions { n_init: Some(5), max_evals: 15, seed, ..Default::default() };
            let st = epsgo_minimize(|p| Ok((p[0] - 0.3).powi(2)), &space, &opts).unwrap();
            assert!((st.incumbent.0[0] - 0.3).abs() < 0.05, "seed {seed}: {:?}", st.incumbent);
            assert!(st.n_evals <= 15);
        }
        let opts = EpsgoOptions { n_init: Some(5), max_evals: 15, ..Default::default() };
        let st = epsgo_minimize(|_| Ok(2.0), &space, &opts).unwrap();
        assert_eq!(st.n_evals, 6);
        assert!(st.max_ei[0] < 1e-6);
    }
}
