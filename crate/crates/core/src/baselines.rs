//! Comparison models: day-ahead persistence, Gaussian-process regression and
//! lower-upper bound estimation (LUBE) networks.

use std::f64::consts::PI;
use std::path::Path;

use chrono::{Duration, NaiveDateTime};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use ndarray::ArrayView2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::RawSeries;
use crate::dists::DistParams;
use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

/// Days searched backwards when the previous day's value is missing.
pub const PERSISTENCE_MAX_DAYS: i64 = 7;

/// Power observed at the same time of day on the most recent earlier day,
/// looking back at most [`PERSISTENCE_MAX_DAYS`] days.
pub fn persistence_forecast(series: &RawSeries, t: &NaiveDateTime) -> Result<f64> {
    persistence_forecast_known(series, t, t)
}

/// Like [`persistence_forecast`], but only reads values observed at or
/// before `known_until` (the forecast origin in a day-ahead setting).
pub fn persistence_forecast_known(
    series: &RawSeries,
    t: &NaiveDateTime,
    known_until: &NaiveDateTime,
) -> Result<f64> {
    for days in 1..=PERSISTENCE_MAX_DAYS {
        let past = *t - Duration::days(days);
        if past > *known_until {
            continue;
        }
        if let Some(p) = series.power_at(&past) {
            if p.is_finite() {
                return Ok(p);
            }
        }
    }
    Err(Error::Data(format!(
        "no power value at the same time of day within {PERSISTENCE_MAX_DAYS} days before {t}"
    )))
}

// ---------------------------------------------------------------------------
// Kernels
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Rbf,
    Rq,
    Periodic,
    /// Rational quadratic plus periodic.
    Sum,
    /// Rational quadratic times periodic.
    Product,
}

impl KernelKind {
    pub const ALL: [KernelKind; 5] = [
        KernelKind::Rbf,
        KernelKind::Rq,
        KernelKind::Periodic,
        KernelKind::Sum,
        KernelKind::Product,
    ];

    /// Number of log hyperparameters, excluding the noise variance.
    pub fn n_params(self) -> usize {
        match self {
            KernelKind::Rbf => 2,
            KernelKind::Rq | KernelKind::Periodic => 3,
            KernelKind::Sum | KernelKind::Product => 6,
        }
    }
}

impl std::fmt::Display for KernelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            KernelKind::Rbf => "rbf",
            KernelKind::Rq => "rq",
            KernelKind::Periodic => "per",
            KernelKind::Sum => "rq+per",
            KernelKind::Product => "rq*per",
        })
    }
}

impl std::str::FromStr for KernelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(' ', "").as_str() {
            "rbf" => Ok(KernelKind::Rbf),
            "rq" => Ok(KernelKind::Rq),
            "per" | "periodic" => Ok(KernelKind::Periodic),
            "rq+per" | "sum" => Ok(KernelKind::Sum),
            "rq*per" | "rq·per" | "product" => Ok(KernelKind::Product),
            other => Err(Error::Domain(format!("unknown kernel '{other}'"))),
        }
    }
}

/// Covariance function with log-parametrized hyperparameters.
///
/// Parameter layout in `log_params`:
/// - RBF: `[ln σ², ln l]`
/// - RQ: `[ln σ², ln l, ln α]`
/// - Periodic: `[ln σ², ln l, ln p]`
/// - Sum / Product: RQ parameters followed by periodic parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub log_params: Vec<f64>,
    pub log_noise: f64,
}

impl KernelSpec {
    pub fn rbf(variance: f64, lengthscale: f64, noise: f64) -> Result<Self> {
        Self::from_natural(KernelKind::Rbf, &[variance, lengthscale], noise)
    }

    pub fn rq(variance: f64, lengthscale: f64, alpha: f64, noise: f64) -> Result<Self> {
        Self::from_natural(KernelKind::Rq, &[variance, lengthscale, alpha], noise)
    }

    pub fn periodic(variance: f64, lengthscale: f64, period: f64, noise: f64) -> Result<Self> {
        Self::from_natural(KernelKind::Periodic, &[variance, lengthscale, period], noise)
    }

    /// Builds a spec from positive natural-scale parameters.
    pub fn from_natural(kind: KernelKind, params: &[f64], noise: f64) -> Result<Self> {
        if params.len() != kind.n_params() {
            return Err(Error::Dimension {
                expected: kind.n_params(),
                got: params.len(),
            });
        }
        if params.iter().chain([&noise]).any(|&p| !(p > 0.0 && p.is_finite())) {
            return Err(Error::Domain(
                "kernel parameters and noise variance must be positive".into(),
            ));
        }
        Ok(Self {
            kind,
            log_params: params.iter().map(|p| p.ln()).collect(),
            log_noise: noise.ln(),
        })
    }

    /// Starting point for optimization on standardized data with `d` features.
    pub fn default_for(kind: KernelKind, d: usize) -> Self {
        let l = (d.max(1) as f64).sqrt().ln();
        let rq = [0.0, l, 0.0];
        let per = [0.0, l, (2.0 * (d.max(1) as f64).sqrt()).ln()];
        let log_params = match kind {
            KernelKind::Rbf => vec![0.0, l],
            KernelKind::Rq => rq.to_vec(),
            KernelKind::Periodic => per.to_vec(),
            KernelKind::Sum | KernelKind::Product => rq.iter().chain(&per).copied().collect(),
        };
        Self {
            kind,
            log_params,
            log_noise: 0.1f64.ln(),
        }
    }

    pub fn noise_variance(&self) -> f64 {
        self.log_noise.exp()
    }

    /// Kernel variance hyperparameters, lengthscales etc. on their natural scale.
    pub fn natural_params(&self) -> Vec<f64> {
        self.log_params.iter().map(|p| p.exp()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.log_params.len() != self.kind.n_params() {
            return Err(Error::Dimension {
                expected: self.kind.n_params(),
                got: self.log_params.len(),
            });
        }
        if self.log_params.iter().chain([&self.log_noise]).any(|p| !p.is_finite()) {
            return Err(Error::Domain("non-finite kernel hyperparameter".into()));
        }
        Ok(())
    }

    /// Total number of optimized parameters, noise included.
    fn n_opt(&self) -> usize {
        self.log_params.len() + 1
    }

    fn opt_vector(&self) -> Vec<f64> {
        let mut v = self.log_params.clone();
        v.push(self.log_noise);
        v
    }

    fn set_opt_vector(&mut self, v: &[f64]) {
        let n = self.log_params.len();
        self.log_params.copy_from_slice(&v[..n]);
        self.log_noise = v[n];
    }
}

fn rbf(p: &[f64], r2: f64, grad: Option<&mut [f64]>) -> f64 {
    let (s, l2) = (p[0].exp(), (2.0 * p[1]).exp());
    let k = s * (-0.5 * r2 / l2).exp();
    if let Some(g) = grad {
        g[0] = k;
        g[1] = k * r2 / l2;
    }
    k
}

fn rq(p: &[f64], r2: f64, grad: Option<&mut [f64]>) -> f64 {
    let (s, l2, a) = (p[0].exp(), (2.0 * p[1]).exp(), p[2].exp());
    let v = r2 / (2.0 * a * l2);
    let u = 1.0 + v;
    let k = s * (-a * u.ln()).exp();
    if let Some(g) = grad {
        g[0] = k;
        g[1] = k * r2 / (l2 * u);
        g[2] = k * a * (v / u - v.ln_1p());
    }
    k
}

fn periodic(p: &[f64], diff: &[f64], grad: Option<&mut [f64]>) -> f64 {
    let (s, l2, per) = (p[0].exp(), (2.0 * p[1]).exp(), p[2].exp());
    let (mut s2, mut dp) = (0.0, 0.0);
    for &d in diff {
        let a = PI * d / per;
        let sn = a.sin();
        s2 += sn * sn;
        dp += a * (2.0 * a).sin();
    }
    let k = s * (-2.0 * s2 / l2).exp();
    if let Some(g) = grad {
        g[0] = k;
        g[1] = k * 4.0 * s2 / l2;
        g[2] = k * 2.0 * dp / l2;
    }
    k
}

/// Kernel value from the coordinate differences `xi - xj`, optionally with
/// the gradient with respect to every log hyperparameter.
fn kernel_from_diff(kind: KernelKind, p: &[f64], diff: &[f64], grad: Option<&mut [f64]>) -> f64 {
    let r2 = || diff.iter().map(|d| d * d).sum::<f64>();
    match kind {
        KernelKind::Rbf => rbf(p, r2(), grad),
        KernelKind::Rq => rq(p, r2(), grad),
        KernelKind::Periodic => periodic(p, diff, grad),
        KernelKind::Sum => match grad {
            None => rq(&p[..3], r2(), None) + periodic(&p[3..], diff, None),
            Some(g) => {
                let (ga, gb) = g.split_at_mut(3);
                rq(&p[..3], r2(), Some(ga)) + periodic(&p[3..], diff, Some(gb))
            }
        },
        KernelKind::Product => match grad {
            None => rq(&p[..3], r2(), None) * periodic(&p[3..], diff, None),
            Some(g) => {
                let (ga, gb) = g.split_at_mut(3);
                let ka = rq(&p[..3], r2(), Some(ga));
                let kb = periodic(&p[3..], diff, Some(gb));
                ga.iter_mut().for_each(|v| *v *= kb);
                gb.iter_mut().for_each(|v| *v *= ka);
                ka * kb
            }
        },
    }
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Covariance between two inputs (noise excluded). RBF and RQ use the
/// Euclidean distance; the periodic kernel sums `sin²` over coordinates,
/// which equals the scalar form in one dimension and stays positive
/// semi-definite in several.
pub fn kernel_eval(spec: &KernelSpec, xi: &[f64], xj: &[f64]) -> f64 {
    kernel_from_diff(spec.kind, &spec.log_params, &diff(xi, xj), None)
}

/// Kernel value and its gradient with respect to `spec.log_params`.
pub fn kernel_eval_grad(spec: &KernelSpec, xi: &[f64], xj: &[f64]) -> (f64, Vec<f64>) {
    let mut g = vec![0.0; spec.log_params.len()];
    let k = kernel_from_diff(spec.kind, &spec.log_params, &diff(xi, xj), Some(&mut g));
    (k, g)
}

// ---------------------------------------------------------------------------
// Gaussian process
// ---------------------------------------------------------------------------

/// Jitter levels tried, in order, when the covariance is not numerically PD.
const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-4;
const REFINE_ROUNDS: usize = 20;

/// Initial LUBE bounds lie this fraction of the target range outside it.
const INIT_RIDGE: f64 = 1e-1;
const INIT_MIN_HALF_WIDTH: f64 = 1e-9;
/// Log hyperparameters are kept inside this box during optimization.
const LOG_PARAM_BOUND: f64 = 12.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpSettings {
    pub steps: usize,
    pub learning_rate: f64,
    /// At most this many of the most recent rows are used.
    pub max_rows: usize,
    /// Standardize targets before fitting (prior mean at the target mean).
    pub standardize_targets: bool,
    /// Standardize each feature before fitting.
    pub standardize_features: bool,
}

impl Default for GpSettings {
    fn default() -> Self {
        Self {
            steps: 500,
            learning_rate: 0.01,
            max_rows: 5000,
            standardize_targets: true,
            standardize_features: true,
        }
    }
}

/// Least squares with a small ridge on the non-intercept weights; the last
/// column of `h` is the intercept. Returns `(weights, intercept)`.
fn ridge_fit(h: &DMatrix<f64>, y: &[f64]) -> Option<(Vec<f64>, f64)> {
    let p = h.ncols();
    let mut gram = h.transpose() * h;
    let scale = gram.diagonal().max().max(1.0);
    for i in 0..p - 1 {
        gram[(i, i)] += INIT_RIDGE * scale;
    }
    let rhs = h.transpose() * DVector::from_column_slice(y);
    let sol = Cholesky::new(gram)?.solve(&rhs);
    sol.iter().all(|v| v.is_finite()).then(|| (sol.rows(0, p - 1).iter().copied().collect(), sol[p - 1]))
}

fn column_stats(x: &[Vec<f64>], d: usize) -> (Vec<f64>, Vec<f64>) {
    let n = x.len().max(1) as f64;
    let mut mean = vec![0.0; d];
    for row in x {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut sd = vec![0.0; d];
    for row in x {
        for k in 0..d {
            sd[k] += (row[k] - mean[k]).powi(2);
        }
    }
    let sd = sd
        .into_iter()
        .map(|s| {
            let s = (s / n).sqrt();
            if s > 1e-12 {
                s
            } else {
                1.0
            }
        })
        .collect();
    (mean, sd)
}

fn covariance(spec: &KernelSpec, x: &[Vec<f64>]) -> DMatrix<f64> {
    let n = x.len();
    let noise = spec.noise_variance();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = kernel_eval(spec, &x[i], &x[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
        k[(i, i)] += noise;
    }
    k
}

/// Cholesky factor with escalating diagonal jitter.
fn robust_cholesky(k: DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if let Some(c) = Cholesky::new(k.clone()) {
        return Ok((c, 0.0));
    }
    let mut jitter = JITTER_START;
    while jitter <= JITTER_MAX * (1.0 + 1e-9) {
        let mut kj = k.clone();
        for i in 0..kj.nrows() {
            kj[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(kj) {
            return Ok((c, jitter));
        }
        jitter *= 10.0;
    }
    Err(Error::Numerical(format!(
        "covariance matrix not positive definite with jitter up to {JITTER_MAX}"
    )))
}

/// Solves `k · α = y` with the (possibly jittered) factor of `k`, then runs a
/// few rounds of iterative refinement against the exact `k`. This recovers
/// near-exact interpolation when the noise variance is tiny and jitter was
/// needed for the factorization.
fn refine_solution(k: &DMatrix<f64>, chol: &Cholesky<f64, Dyn>, y: &DVector<f64>) -> DVector<f64> {
    let mut alpha = chol.solve(y);
    let mut best = (y - k * &alpha).amax();
    for _ in 0..REFINE_ROUNDS {
        let r = y - k * &alpha;
        let candidate = &alpha + chol.solve(&r);
        let err = (y - k * &candidate).amax();
        if !(err < best) {
            break;
        }
        best = err;
        alpha = candidate;
    }
    alpha
}

/// Negative log marginal likelihood and, if requested, its gradient with
/// respect to the log hyperparameters followed by the log noise variance.
fn nlml(spec: &KernelSpec, x: &[Vec<f64>], y: &DVector<f64>, with_grad: bool) -> Result<(f64, Vec<f64>)> {
    let n = x.len();
    let (chol, _) = robust_cholesky(covariance(spec, x))?;
    let alpha = chol.solve(y);
    let log_det: f64 = chol.l_dirty().diagonal().iter().take(n).map(|v| v.ln()).sum::<f64>() * 2.0;
    let value = 0.5 * y.dot(&alpha) + 0.5 * log_det + 0.5 * n as f64 * (2.0 * PI).ln();
    if !value.is_finite() {
        return Err(Error::Numerical("non-finite marginal likelihood".into()));
    }
    if !with_grad {
        return Ok((value, Vec::new()));
    }
    // dNLML/dθ = ½ tr((K⁻¹ − ααᵀ) ∂K/∂θ)
    let mut w = chol.inverse();
    w -= &alpha * alpha.transpose();
    let p = spec.log_params.len();
    let mut grad = vec![0.0; p + 1];
    let mut g = vec![0.0; p];
    for i in 0..n {
        for j in 0..=i {
            let dij = diff(&x[i], &x[j]);
            kernel_from_diff(spec.kind, &spec.log_params, &dij, Some(&mut g));
            let factor = if i == j { 0.5 * w[(i, i)] } else { w[(i, j)] };
            for (acc, gk) in grad.iter_mut().zip(&g) {
                *acc += factor * gk;
            }
        }
    }
    grad[p] = 0.5 * spec.noise_variance() * w.trace();
    Ok((value, grad))
}

/// Fitted Gaussian-process regressor. Inputs and targets are stored in the
/// standardized space used for fitting.
#[derive(Debug, Clone)]
pub struct GpModel {
    pub kernel: KernelSpec,
    x: Vec<Vec<f64>>,
    y: DVector<f64>,
    x_mean: Vec<f64>,
    x_scale: Vec<f64>,
    y_mean: f64,
    y_scale: f64,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    /// Diagonal jitter that was needed for the factorization.
    pub jitter: f64,
}

/// Serialized form of a [`GpModel`]; the factorization is rebuilt on load.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GpModelFile {
    pub kernel: KernelSpec,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub x_mean: Vec<f64>,
    pub x_scale: Vec<f64>,
    pub y_mean: f64,
    pub y_scale: f64,
}

/// Result of [`gp_fit`], including the objective after every optimizer step.
#[derive(Debug, Clone)]
pub struct GpFitOutcome {
    pub model: GpModel,
    /// Negative log marginal likelihood before optimization and after each step.
    pub nlml_trace: Vec<f64>,
    /// Rows dropped because of the training-size cap.
    pub rows_dropped: usize,
}

impl GpModel {
    fn from_standardized(file: GpModelFile) -> Result<Self> {
        file.kernel.validate()?;
        if file.x.len() != file.y.len() || file.x.is_empty() {
            return Err(Error::Data("GP needs matching, nonempty inputs and targets".into()));
        }
        let y = DVector::from_vec(file.y);
        let k = covariance(&file.kernel, &file.x);
        let (chol, jitter) = robust_cholesky(k.clone())?;
        let alpha = refine_solution(&k, &chol, &y);
        Ok(Self {
            kernel: file.kernel,
            x: file.x,
            y,
            x_mean: file.x_mean,
            x_scale: file.x_scale,
            y_mean: file.y_mean,
            y_scale: file.y_scale,
            chol,
            alpha,
            jitter,
        })
    }

    pub fn n_train(&self) -> usize {
        self.x.len()
    }

    pub fn n_features(&self) -> usize {
        self.x_mean.len()
    }

    fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.x_mean.iter().zip(&self.x_scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    /// Predictive mean and variance, the variance including observation noise.
    pub fn predict_moments(&self, x: &[f64]) -> Result<(f64, f64)> {
        if x.len() != self.n_features() {
            return Err(Error::Dimension {
                expected: self.n_features(),
                got: x.len(),
            });
        }
        let z = self.standardize(x);
        let kstar = DVector::from_iterator(
            self.x.len(),
            self.x.iter().map(|xi| kernel_eval(&self.kernel, &z, xi)),
        );
        let mean = kstar.dot(&self.alpha);
        let v = self.chol.l().solve_lower_triangular(&kstar).ok_or_else(|| {
            Error::Numerical("triangular solve failed in GP prediction".into())
        })?;
        let prior = kernel_eval(&self.kernel, &z, &z);
        let var = (prior - v.dot(&v)).max(0.0) + self.kernel.noise_variance();
        Ok((
            self.y_mean + self.y_scale * mean,
            self.y_scale * self.y_scale * var,
        ))
    }

    pub fn to_file(&self) -> GpModelFile {
        GpModelFile {
            kernel: self.kernel.clone(),
            x: self.x.clone(),
            y: self.y.iter().copied().collect(),
            x_mean: self.x_mean.clone(),
            x_scale: self.x_scale.clone(),
            y_mean: self.y_mean,
            y_scale: self.y_scale,
        }
    }

    pub fn from_file(file: GpModelFile) -> Result<Self> {
        Self::from_standardized(file)
    }

    /// Fits with fixed hyperparameters (no optimization).
    pub fn fit_fixed(x: ArrayView2<'_, f64>, y: &[f64], kernel: &KernelSpec, settings: &GpSettings) -> Result<Self> {
        let prepared = prepare_gp_data(x, y, kernel, settings)?;
        Self::from_standardized(prepared.0)
    }
}

/// Applies the row cap and standardization.
fn prepare_gp_data(
    x: ArrayView2<'_, f64>,
    y: &[f64],
    kernel: &KernelSpec,
    settings: &GpSettings,
) -> Result<(GpModelFile, usize)> {
    kernel.validate()?;
    if x.nrows() != y.len() {
        return Err(Error::Dimension {
            expected: x.nrows(),
            got: y.len(),
        });
    }
    if y.is_empty() {
        return Err(Error::Data("GP training set is empty".into()));
    }
    if settings.max_rows == 0 {
        return Err(Error::Domain("GP row cap must be positive".into()));
    }
    let m = x.nrows();
    let start = m.saturating_sub(settings.max_rows);
    if start > 0 {
        log::warn!("GP training capped at the {} most recent of {m} rows", settings.max_rows);
    }
    let d = x.ncols();
    let rows: Vec<Vec<f64>> = (start..m).map(|i| x.row(i).to_vec()).collect();
    let ys = &y[start..];
    let (x_mean, x_scale) = if settings.standardize_features {
        column_stats(&rows, d)
    } else {
        (vec![0.0; d], vec![1.0; d])
    };
    let (y_mean, y_scale) = if settings.standardize_targets {
        let n = ys.len() as f64;
        let mean = ys.iter().sum::<f64>() / n;
        let sd = (ys.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        (mean, if sd > 1e-12 { sd } else { 1.0 })
    } else {
        (0.0, 1.0)
    };
    let xs = rows
        .iter()
        .map(|r| {
            r.iter()
                .zip(x_mean.iter().zip(&x_scale))
                .map(|(v, (mu, s))| (v - mu) / s)
                .collect()
        })
        .collect();
    Ok((
        GpModelFile {
            kernel: kernel.clone(),
            x: xs,
            y: ys.iter().map(|v| (v - y_mean) / y_scale).collect(),
            x_mean,
            x_scale,
            y_mean,
            y_scale,
        },
        start,
    ))
}

/// Fits a GP by minimizing the negative log marginal likelihood with Adam in
/// log-hyperparameter space, starting from `init`.
///
/// A step that would raise the objective is rejected and the step size is
/// halved, so the recorded trace never increases.
pub fn gp_fit(
    x: ArrayView2<'_, f64>,
    y: &[f64],
    init: &KernelSpec,
    settings: &GpSettings,
) -> Result<GpFitOutcome> {
    let (mut file, rows_dropped) = prepare_gp_data(x, y, init, settings)?;
    let yv = DVector::from_column_slice(&file.y);
    let mut spec = file.kernel.clone();
    let n = spec.n_opt();
    let (mut m, mut v) = (vec![0.0; n], vec![0.0; n]);
    let (b1, b2, eps) = (0.9, 0.999, 1e-8);
    let mut lr = settings.learning_rate;
    let (mut current, mut grad) = nlml(&spec, &file.x, &yv, true)?;
    let mut trace = vec![current];
    let mut t = 0i32;
    for _ in 0..settings.steps {
        t += 1;
        for k in 0..n {
            m[k] = b1 * m[k] + (1.0 - b1) * grad[k];
            v[k] = b2 * v[k] + (1.0 - b2) * grad[k] * grad[k];
        }
        let bc1 = 1.0 - b1.powi(t);
        let bc2 = 1.0 - b2.powi(t);
        let theta = spec.opt_vector();
        let mut accepted = false;
        for _ in 0..20 {
            let proposal: Vec<f64> = (0..n)
                .map(|k| {
                    let step = lr * (m[k] / bc1) / ((v[k] / bc2).sqrt() + eps);
                    (theta[k] - step).clamp(-LOG_PARAM_BOUND, LOG_PARAM_BOUND)
                })
                .collect();
            let mut candidate = spec.clone();
            candidate.set_opt_vector(&proposal);
            match nlml(&candidate, &file.x, &yv, true) {
                Ok((value, g)) if value <= current => {
                    spec = candidate;
                    current = value;
                    grad = g;
                    accepted = true;
                    break;
                }
                _ => lr *= 0.5,
            }
        }
        trace.push(current);
        if !accepted {
            break;
        }
    }
    file.kernel = spec;
    Ok(GpFitOutcome {
        model: GpModel::from_standardized(file)?,
        nlml_trace: trace,
        rows_dropped,
    })
}

/// Normal predictive distribution at `x`.
pub fn gp_predict(model: &GpModel, x: &[f64]) -> Result<DistParams> {
    let (mean, var) = model.predict_moments(x)?;
    DistParams::normal(mean, var.sqrt().max(f64::MIN_POSITIVE.sqrt()))
}

// ---------------------------------------------------------------------------
// LUBE
// ---------------------------------------------------------------------------

/// Single-hidden-layer network with two linear outputs read as interval
/// bounds; the smaller output is the lower bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LubeNet {
    pub n_inputs: usize,
    pub width: usize,
    /// Hidden weights, row-major `width × n_inputs`.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// Output weights, row-major `2 × width`.
    pub w2: Vec<f64>,
    pub b2: [f64; 2],
    pub x_mean: Vec<f64>,
    pub x_scale: Vec<f64>,
    /// Nominal coverage the net was trained for.
    pub confidence: f64,
}

impl LubeNet {
    /// Initialization. Inputs are standardized with the statistics of `x`
    /// and the hidden layer is drawn at random. The output layer is then
    /// fitted by ridge least squares on the hidden activations, and both
    /// bounds start at that fit shifted by the largest absolute residual, so
    /// every training target is covered. The annealer then only has to
    /// narrow intervals that already follow the target; random proposals
    /// rarely discover that coordinated shape on their own.
    pub fn init<R: Rng + ?Sized>(
        x: ArrayView2<'_, f64>,
        y: &[f64],
        width: usize,
        confidence: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if width == 0 {
            return Err(Error::Domain("LUBE hidden width must be positive".into()));
        }
        if x.nrows() != y.len() || y.is_empty() {
            return Err(Error::Data("LUBE needs matching, nonempty inputs and targets".into()));
        }
        let d = x.ncols();
        let rows: Vec<Vec<f64>> = x.rows().into_iter().map(|r| r.to_vec()).collect();
        let (x_mean, x_scale) = column_stats(&rows, d);
        let s1 = 1.0 / (d.max(1) as f64).sqrt();
        let mut gauss = |s: f64| s * rng.sample::<f64, _>(StandardNormal);
        let w1: Vec<f64> = (0..width * d).map(|_| gauss(s1)).collect();
        let b1: Vec<f64> = (0..width).map(|_| gauss(s1)).collect();
        let mut net = Self {
            n_inputs: d,
            width,
            w1,
            b1,
            w2: vec![0.0; 2 * width],
            b2: [0.0, 0.0],
            x_mean,
            x_scale,
            confidence,
        };
        let hidden = DMatrix::from_fn(rows.len(), width + 1, |i, h| {
            if h == width {
                1.0
            } else {
                net.activation(h, &rows[i])
            }
        });
        let (beta, bias) = ridge_fit(&hidden, y).unwrap_or_else(|| {
            // Degenerate features: fall back to the target mean.
            (vec![0.0; width], y.iter().sum::<f64>() / y.len() as f64)
        });
        let half = rows
            .iter()
            .zip(y)
            .map(|(r, t)| {
                let fit = bias + (0..width).map(|h| beta[h] * net.activation(h, r)).sum::<f64>();
                (t - fit).abs()
            })
            .fold(INIT_MIN_HALF_WIDTH, f64::max);
        net.w2[..width].copy_from_slice(&beta);
        net.w2[width..].copy_from_slice(&beta);
        net.b2 = [bias - half, bias + half];
        Ok(net)
    }

    fn activation(&self, h: usize, x: &[f64]) -> f64 {
        let row = &self.w1[h * self.n_inputs..(h + 1) * self.n_inputs];
        let mut a = self.b1[h];
        for k in 0..self.n_inputs {
            a += row[k] * (x[k] - self.x_mean[k]) / self.x_scale[k];
        }
        a.tanh()
    }

    pub fn n_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + 2
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_params());
        p.extend_from_slice(&self.w1);
        p.extend_from_slice(&self.b1);
        p.extend_from_slice(&self.w2);
        p.extend_from_slice(&self.b2);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let (a, rest) = p.split_at(self.w1.len());
        let (b, rest) = rest.split_at(self.b1.len());
        let (c, rest) = rest.split_at(self.w2.len());
        self.w1.copy_from_slice(a);
        self.b1.copy_from_slice(b);
        self.w2.copy_from_slice(c);
        self.b2.copy_from_slice(rest);
    }

    /// `(lower, upper)` bounds at `x`.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let mut o = self.b2;
        for h in 0..self.width {
            let a = self.activation(h, x);
            o[0] += self.w2[h] * a;
            o[1] += self.w2[self.width + h] * a;
        }
        if o[0] <= o[1] {
            (o[0], o[1])
        } else {
            (o[1], o[0])
        }
    }

    pub fn predict_matrix(&self, x: ArrayView2<'_, f64>) -> Result<(Vec<f64>, Vec<f64>)> {
        if x.ncols() != self.n_inputs {
            return Err(Error::Dimension {
                expected: self.n_inputs,
                got: x.ncols(),
            });
        }
        Ok(x.rows()
            .into_iter()
            .map(|r| match r.as_slice() {
                Some(row) => self.predict(row),
                None => self.predict(&r.to_vec()),
            })
            .unzip())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostMode {
    /// Penalty always applied (smooth objective for the optimizer).
    Training,
    /// Penalty applied only when coverage falls short of the target.
    Evaluation,
}

/// Coverage width-based criterion and its parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CwcBreakdown {
    pub picp: f64,
    pub pinaw: f64,
    pub cwc: f64,
}

/// `CWC = PINAW · (1 + γ · exp(−η (PICP − μ)))`.
pub fn cwc(picp: f64, pinaw: f64, confidence: f64, eta: f64, mode: CostMode) -> f64 {
    let gamma = match mode {
        CostMode::Training => 1.0,
        CostMode::Evaluation => {
            if picp < confidence {
                1.0
            } else {
                0.0
            }
        }
    };
    if gamma == 0.0 {
        pinaw
    } else {
        pinaw * (1.0 + (-eta * (picp - confidence)).exp())
    }
}

/// CWC of `net` on `(x, y)`, with widths normalized by the largest target.
pub fn lube_cost(
    net: &LubeNet,
    x: ArrayView2<'_, f64>,
    y: &[f64],
    confidence: f64,
    eta: f64,
    mode: CostMode,
) -> Result<CwcBreakdown> {
    let range = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = net.predict_matrix(x)?;
    let im = crate::metrics::interval_metrics(&lo, &hi, y, range)?;
    Ok(CwcBreakdown {
        picp: im.picp,
        pinaw: im.pinaw,
        cwc: cwc(im.picp, im.pinaw, confidence, eta, mode),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnealSchedule {
    /// Starting temperature; `None` uses the initial CWC.
    pub initial_temperature: Option<f64>,
    pub cooling: f64,
    pub iterations_per_temperature: usize,
    /// Standard deviation of the Gaussian proposal on each perturbed weight.
    pub step_size: f64,
    /// Annealing stops once `T < stop_ratio · T0`.
    pub stop_ratio: f64,
    /// Hard cap on the total number of proposals.
    pub max_proposals: Option<usize>,
    pub seed: u64,
}

impl Default for AnnealSchedule {
    fn default() -> Self {
        Self {
            initial_temperature: None,
            cooling: 0.95,
            iterations_per_temperature: 200,
            step_size: 0.05,
            stop_ratio: 1e-4,
            max_proposals: None,
            seed: 0,
        }
    }
}

impl AnnealSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.cooling > 0.0 && self.cooling < 1.0) {
            return Err(Error::Domain(format!("cooling factor must lie in (0, 1), got {}", self.cooling)));
        }
        if !(self.step_size > 0.0) || !(self.stop_ratio > 0.0 && self.stop_ratio < 1.0) {
            return Err(Error::Domain("annealing step size and stop ratio must be positive (ratio < 1)".into()));
        }
        if let Some(t) = self.initial_temperature {
            if !(t > 0.0) {
                return Err(Error::Domain("initial temperature must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LubeSettings {
    pub width: usize,
    pub confidence: f64,
    pub eta: f64,
    pub schedule: AnnealSchedule,
}

impl Default for LubeSettings {
    fn default() -> Self {
        Self {
            width: 20,
            confidence: 0.95,
            eta: 50.0,
            schedule: AnnealSchedule::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LubeTrainOutcome {
    pub net: LubeNet,
    /// Best training CWC seen after each temperature level (first entry: initial net).
    pub best_trace: Vec<f64>,
    pub proposals: usize,
    pub accepted: usize,
}

/// Trains a LUBE network by simulated annealing on the training-mode CWC.
/// Each proposal perturbs a random tenth of the weights (at least one) with
/// Gaussian noise; acceptance follows the Metropolis rule. Returns the best
/// net seen.
pub fn lube_train(x: ArrayView2<'_, f64>, y: &[f64], settings: &LubeSettings) -> Result<LubeTrainOutcome> {
    let sched = &settings.schedule;
    sched.validate()?;
    if !(settings.confidence > 0.0 && settings.confidence < 1.0) {
        return Err(Error::Domain("LUBE confidence must lie in (0, 1)".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(sched.seed);
    let init = LubeNet::init(x, y, settings.width, settings.confidence, &mut rng)?;
    let cost = |net: &LubeNet| -> Result<f64> {
        Ok(lube_cost(net, x, y, settings.confidence, settings.eta, CostMode::Training)?.cwc)
    };
    let mut current = init.params();
    let mut current_cost = cost(&init)?;
    let mut best = current.clone();
    let mut best_cost = current_cost;
    let mut trace = vec![best_cost];
    let t0 = sched.initial_temperature.unwrap_or(current_cost).max(1e-12);
    let max_props = sched.max_proposals.unwrap_or(usize::MAX);
    let n = current.len();
    let n_perturb = (n / 10).max(1);
    let mut net = init.clone();
    let (mut proposals, mut accepted) = (0usize, 0usize);
    let mut temp = t0;
    'outer: while temp >= sched.stop_ratio * t0 {
        for _ in 0..sched.iterations_per_temperature {
            if proposals >= max_props {
                break 'outer;
            }
            proposals += 1;
            let mut cand = current.clone();
            for _ in 0..n_perturb {
                let k = rng.random_range(0..n);
                let z: f64 = StandardNormal.sample(&mut rng);
                cand[k] += sched.step_size * z;
            }
            net.set_params(&cand);
            let c = cost(&net)?;
            let u: f64 = rng.random();
            let delta = c - current_cost;
            if delta <= 0.0 || u < (-delta / temp).exp() {
                accepted += 1;
                current = cand;
                current_cost = c;
                if c < best_cost {
                    best_cost = c;
                    best.clone_from(&current);
                }
            }
        }
        trace.push(best_cost);
        temp *= sched.cooling;
    }
    let mut out = init;
    out.set_params(&best);
    Ok(LubeTrainOutcome {
        net: out,
        best_trace: trace,
        proposals,
        accepted,
    })
}

// ---------------------------------------------------------------------------
// Model files
// ---------------------------------------------------------------------------

/// Any baseline model, tagged by kind in its JSON form.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BaselineModel {
    Persistence,
    Gp(GpModelFile),
    Lube(LubeNet),
}

impl BaselineModel {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
