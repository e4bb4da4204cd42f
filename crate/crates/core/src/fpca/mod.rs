//! Functional principal component fits for sparse data.
//!
//! Univariate FPCA smooths the pooled mean and the off-diagonal raw
//! covariance with local-linear Epanechnikov kernels, estimates the noise
//! variance from the diagonal gap over the middle half of the domain and
//! predicts scores by best linear prediction (PACE). Multivariate FPCA
//! combines the univariate scores through the eigen-decomposition of their
//! covariance. Fits on the common grid come with pointwise normal
//! confidence bands; the bootstrap variant averages conditional fits over
//! refitted models and adds the between-bootstrap variance.
//!
//! Bootstrap resamples are represented as integer subject weights over one
//! [`PreparedData`], so refitting never copies observations.

mod smooth;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::fdata::{CompleteCurves, FdataError, Grid, SparseSampleSet};
use crate::seeding;

pub use smooth::{epanechnikov, local_linear_1d, local_linear_surface, rotated_diagonal};

pub const DEFAULT_PVE: f64 = 0.99;
/// Default bandwidth as a fraction of the domain length. Default bandwidths
/// widen by 25% steps (up to half the domain) where a window is too empty
/// for a local-linear fit.
pub const DEFAULT_BANDWIDTH_FRACTION: f64 = 0.05;
const MAX_BANDWIDTH_FRACTION: f64 = 0.5;
pub const SIGMA2_FLOOR: f64 = 1e-8;
/// Observation times of one variable are pooled into at most this many
/// bins before smoothing.
pub const MAX_BINS: usize = 200;

#[derive(Debug, thiserror::Error)]
pub enum FpcaError {
    #[error("variable {variable}: need at least 2 subjects with observations, found {found}")]
    TooFewSubjects { variable: usize, found: usize },
    #[error(
        "variable {variable}: {what} smoother is singular near t = {at} with bandwidth {bandwidth}; \
         try a larger bandwidth"
    )]
    Bandwidth {
        variable: usize,
        what: &'static str,
        bandwidth: f64,
        at: f64,
    },
    #[error("score covariance is not positive semidefinite (smallest eigenvalue {0})")]
    NotPsd(f64),
    #[error("bootstrap gave up after {0} failed resamples")]
    BootstrapExhausted(usize),
    #[error("invalid option: {0}")]
    Options(String),
    #[error(transparent)]
    Data(#[from] FdataError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FpcaOptions {
    /// Absolute bandwidth for the mean; `None` means 0.05 x domain length.
    pub mean_bandwidth: Option<f64>,
    pub cov_bandwidth: Option<f64>,
    pub pve_univariate: f64,
    pub pve_multivariate: f64,
    /// Choose both bandwidths by 5-fold cross-validation over subjects.
    pub cross_validate: bool,
}

impl Default for FpcaOptions {
    fn default() -> Self {
        Self {
            mean_bandwidth: None,
            cov_bandwidth: None,
            pve_univariate: DEFAULT_PVE,
            pve_multivariate: DEFAULT_PVE,
            cross_validate: false,
        }
    }
}

impl FpcaOptions {
    fn validate(&self) -> Result<(), FpcaError> {
        for (name, v) in [("pve_univariate", self.pve_univariate), ("pve_multivariate", self.pve_multivariate)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(FpcaError::Options(format!("{name} = {v} must lie in (0, 1]")));
            }
        }
        for (name, v) in [("mean_bandwidth", self.mean_bandwidth), ("cov_bandwidth", self.cov_bandwidth)] {
            if let Some(h) = v {
                if !(h > 0.0 && h.is_finite()) {
                    return Err(FpcaError::Options(format!("{name} = {h} must be positive")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct Obs {
    /// bin index
    u: usize,
    value: f64,
    /// grid stencil
    c0: usize,
    w: f64,
}

#[derive(Debug)]
struct PreparedVariable {
    locs: Vec<f64>,
    span: f64,
    subjects: Vec<Vec<Obs>>,
}

/// A sample set indexed for repeated fitting on one grid.
#[derive(Debug)]
pub struct PreparedData {
    grid: Grid,
    n: usize,
    p: usize,
    vars: Vec<PreparedVariable>,
}

impl PreparedData {
    pub fn new(set: &SparseSampleSet, grid: &Grid) -> Arc<Self> {
        let (n, p) = (set.n(), set.p());
        let vars = (0..p)
            .map(|j| {
                let (a, b) = set.domain(j);
                let mut times: Vec<f64> = (0..n).flat_map(|i| set.observations(i, j).iter().map(|o| o.time)).collect();
                times.sort_by(f64::total_cmp);
                times.dedup();
                let binned = times.len() > MAX_BINS;
                let (locs, lookup): (Vec<f64>, Box<dyn Fn(f64) -> usize>) = if binned {
                    let width = (b - a) / MAX_BINS as f64;
                    let bin = move |t: f64| (((t - a) / width) as usize).min(MAX_BINS - 1);
                    let mut sum = vec![0.0; MAX_BINS];
                    let mut cnt = vec![0usize; MAX_BINS];
                    for &t in &times {
                        sum[bin(t)] += t;
                        cnt[bin(t)] += 1;
                    }
                    let mut remap = vec![usize::MAX; MAX_BINS];
                    let mut locs = Vec::new();
                    for k in 0..MAX_BINS {
                        if cnt[k] > 0 {
                            remap[k] = locs.len();
                            locs.push(sum[k] / cnt[k] as f64);
                        }
                    }
                    (locs, Box::new(move |t| remap[bin(t)]))
                } else {
                    let locs = times.clone();
                    (locs, Box::new(move |t| times.partition_point(|&x| x < t)))
                };
                let subjects = (0..n)
                    .map(|i| {
                        set.observations(i, j)
                            .iter()
                            .map(|o| {
                                let (c0, w) = grid.stencil(o.time);
                                Obs {
                                    u: lookup(o.time),
                                    value: o.value,
                                    c0,
                                    w,
                                }
                            })
                            .collect()
                    })
                    .collect();
                PreparedVariable {
                    locs,
                    span: b - a,
                    subjects,
                }
            })
            .collect();
        Arc::new(Self {
            grid: grid.clone(),
            n,
            p,
            vars,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }
}

#[derive(Clone, Debug)]
pub struct UfpcaModel {
    pub grid: Grid,
    pub mean: Vec<f64>,
    /// Smoothed covariance surface, row-major `len x len`.
    pub covariance: Vec<f64>,
    pub eigenfunctions: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    /// Full clipped spectrum, nonincreasing.
    pub spectrum: Vec<f64>,
    pub sigma2: f64,
    /// `n x M_j`; subjects without observations in this variable score 0.
    pub scores: Vec<Vec<f64>>,
    pub mean_bandwidth: f64,
    pub cov_bandwidth: f64,
    mean_at_bins: Vec<f64>,
}

impl UfpcaModel {
    pub fn components(&self) -> usize {
        self.eigenvalues.len()
    }
}

#[derive(Clone, Debug)]
pub struct MfpcaModel {
    pub univariate: Vec<UfpcaModel>,
    /// Stacked univariate scores, `n x M+`.
    pub xi: DMatrix<f64>,
    /// `(n - 1)^{-1} Xi^T Xi` with subject weights.
    pub z: DMatrix<f64>,
    /// Retained eigenvectors of `z`, `M+ x M`.
    pub c: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    /// Multivariate eigenfunctions on the grid, rows `j * len + c`, `p len x M`.
    pub psi: DMatrix<f64>,
    /// `Xi c`, `n x M`.
    pub scores: DMatrix<f64>,
    data: Arc<PreparedData>,
}

impl MfpcaModel {
    pub fn components(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn total_components(&self) -> usize {
        self.xi.ncols()
    }

    pub fn grid(&self) -> &Grid {
        &self.data.grid
    }

    pub fn data(&self) -> &Arc<PreparedData> {
        &self.data
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitMethod {
    Mfpca,
    Bmfpca,
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub fitted: CompleteCurves,
    pub lower: CompleteCurves,
    pub upper: CompleteCurves,
    /// Pointwise variance of the fit error.
    pub variance: CompleteCurves,
    pub alpha: f64,
    pub method: FitMethod,
    pub bootstrap: usize,
}

fn trapezoid_mid_average(grid: &Grid, f: &[f64]) -> f64 {
    let (a, b) = (grid.start() + 0.25 * grid.span(), grid.end() - 0.25 * grid.span());
    let pts = grid.points();
    let idx: Vec<usize> = (0..pts.len()).filter(|&c| pts[c] >= a - 1e-12 && pts[c] <= b + 1e-12).collect();
    match idx.len() {
        0 => f.iter().sum::<f64>() / f.len() as f64,
        1 => f[idx[0]],
        _ => {
            let mut area = 0.0;
            for w in idx.windows(2) {
                area += 0.5 * (f[w[0]] + f[w[1]]) * (pts[w[1]] - pts[w[0]]);
            }
            area / (pts[*idx.last().unwrap()] - pts[idx[0]])
        }
    }
}

/// Flips `v` so that its first coordinate of non-negligible size is positive.
fn fix_sign(v: &mut [f64]) -> bool {
    let max = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-8 * max) {
        if *first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
            return true;
        }
    }
    false
}

/// Number of leading components whose cumulative share reaches `pve`.
fn pve_count(values: &[f64], pve: f64, tol: f64) -> usize {
    let positive: Vec<f64> = values.iter().copied().take_while(|&v| v > tol).collect();
    let total: f64 = positive.iter().sum();
    if total <= 0.0 {
        return 0;
    }
    let mut acc = 0.0;
    for (k, v) in positive.iter().enumerate() {
        acc += v;
        if acc >= pve * total * (1.0 - 1e-12) {
            return k + 1;
        }
    }
    positive.len()
}

/// Symmetric eigen-decomposition sorted by decreasing eigenvalue.
fn sorted_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = m.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, k| eig.eigenvectors[(r, order[k])]);
    (values, vectors)
}

fn bandwidth_error(variable: usize, what: &'static str, bandwidth: f64) -> impl Fn(smooth::Singular) -> FpcaError {
    move |s| FpcaError::Bandwidth {
        variable,
        what,
        bandwidth,
        at: s.at,
    }
}

/// Runs `f` at bandwidth `h`; automatic bandwidths are widened until the
/// smoother is nonsingular.
fn widen<T>(
    mut h: f64,
    auto: bool,
    span: f64,
    mut f: impl FnMut(f64) -> Result<T, smooth::Singular>,
) -> Result<(T, f64), (smooth::Singular, f64)> {
    loop {
        match f(h) {
            Ok(v) => return Ok((v, h)),
            Err(s) if !auto || h * 1.25 > MAX_BANDWIDTH_FRACTION * span => return Err((s, h)),
            Err(_) => h *= 1.25,
        }
    }
}

struct Moments {
    counts: Vec<f64>,
    sums: Vec<f64>,
}

fn mean_moments(var: &PreparedVariable, weights: &[f64]) -> Moments {
    let mut counts = vec![0.0; var.locs.len()];
    let mut sums = vec![0.0; var.locs.len()];
    for (obs, &w) in var.subjects.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        for o in obs {
            counts[o.u] += w;
            sums[o.u] += w * o.value;
        }
    }
    Moments { counts, sums }
}

fn covariance_moments(
    var: &PreparedVariable,
    weights: &[f64],
    mean_at_bins: &[f64],
) -> (DMatrix<f64>, DMatrix<f64>, Moments) {
    let u = var.locs.len();
    let mut counts = DMatrix::zeros(u, u);
    let mut sums = DMatrix::zeros(u, u);
    let mut diag = Moments {
        counts: vec![0.0; u],
        sums: vec![0.0; u],
    };
    let mut resid = Vec::new();
    for (obs, &w) in var.subjects.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        resid.clear();
        resid.extend(obs.iter().map(|o| o.value - mean_at_bins[o.u]));
        for (a, oa) in obs.iter().enumerate() {
            diag.counts[oa.u] += w;
            diag.sums[oa.u] += w * resid[a] * resid[a];
            for (b, ob) in obs.iter().enumerate() {
                if oa.u != ob.u {
                    counts[(oa.u, ob.u)] += w;
                    sums[(oa.u, ob.u)] += w * resid[a] * resid[b];
                }
            }
        }
    }
    (counts, sums, diag)
}

/// Best linear prediction of the scores of one subject under eigenpairs
/// `(lambda, phi)` given residual observations; `phi` is `len x M` per block.
/// Returns `(scores, a)` where `a = A^{-1} g` in the whitened coordinates.
fn blup(rows: &DMatrix<f64>, resid: &DVector<f64>, noise: &DVector<f64>, sqrt_lambda: &[f64]) -> Option<(DMatrix<f64>, DVector<f64>)> {
    let m = sqrt_lambda.len();
    let nobs = rows.nrows();
    // ridge on the implied Sigma_Y
    let mut trace = 0.0;
    for r in 0..nobs {
        for k in 0..m {
            let e = rows[(r, k)] * sqrt_lambda[k];
            trace += e * e;
        }
        trace += noise[r];
    }
    let ridge = (1e-10 * trace).max(1e-8);
    let mut bt = DMatrix::zeros(nobs, m);
    let mut rt = DVector::zeros(nobs);
    for r in 0..nobs {
        let s = 1.0 / (noise[r] + ridge).sqrt();
        for k in 0..m {
            bt[(r, k)] = rows[(r, k)] * sqrt_lambda[k] * s;
        }
        rt[r] = resid[r] * s;
    }
    let mut a = bt.tr_mul(&bt);
    for k in 0..m {
        a[(k, k)] += 1.0;
    }
    let g = bt.tr_mul(&rt);
    let chol = a.cholesky()?;
    let sol = chol.solve(&g);
    Some((chol.l(), sol))
}

fn fit_variable(data: &PreparedData, j: usize, weights: &[f64], opts: &FpcaOptions) -> Result<UfpcaModel, FpcaError> {
    let var = &data.vars[j];
    let grid = &data.grid;
    let active = var
        .subjects
        .iter()
        .zip(weights)
        .filter(|(o, &w)| w > 0.0 && !o.is_empty())
        .count();
    if active < 2 {
        return Err(FpcaError::TooFewSubjects { variable: j, found: active });
    }
    let span = if var.span > 0.0 { var.span } else { grid.span() };
    let default_h = DEFAULT_BANDWIDTH_FRACTION * span;
    let (h_mean, h_cov, auto_mean, auto_cov) = if opts.cross_validate {
        let (a, b) = cross_validated_bandwidths(var, weights, default_h, j)?;
        (a, b, false, false)
    } else {
        (
            opts.mean_bandwidth.unwrap_or(default_h),
            opts.cov_bandwidth.unwrap_or(default_h),
            opts.mean_bandwidth.is_none(),
            opts.cov_bandwidth.is_none(),
        )
    };

    let mm = mean_moments(var, weights);
    let ((mean, mean_at_bins), h_mean) = widen(h_mean, auto_mean, span, |h| {
        Ok((
            local_linear_1d(&var.locs, &mm.counts, &mm.sums, h, grid.points())?,
            local_linear_1d(&var.locs, &mm.counts, &mm.sums, h, &var.locs)?,
        ))
    })
    .map_err(|(s, h)| bandwidth_error(j, "mean", h)(s))?;

    let (cc, cs, diag) = covariance_moments(var, weights, &mean_at_bins);
    let ((surface, raw_var, diag_fit), h_cov) = widen(h_cov, auto_cov, span, |h| {
        Ok((
            local_linear_surface(&var.locs, &cc, &cs, h, grid.points())?,
            local_linear_1d(&var.locs, &diag.counts, &diag.sums, h, grid.points())?,
            smooth::rotated_diagonal(&var.locs, &cc, &cs, h, grid.points())?,
        ))
    })
    .map_err(|(s, h)| bandwidth_error(j, "covariance", h)(s))?;
    let surface = (&surface + surface.transpose()) * 0.5;
    let gap: Vec<f64> = (0..grid.len()).map(|c| raw_var[c] - diag_fit[c]).collect();
    let sigma2 = trapezoid_mid_average(grid, &gap).max(SIGMA2_FLOOR);

    let len = grid.len();
    let qw = grid.trapezoid_weights();
    let sw: Vec<f64> = qw.iter().map(|w| w.sqrt()).collect();
    let weighted = DMatrix::from_fn(len, len, |a, b| sw[a] * surface[(a, b)] * sw[b]);
    let (values, vectors) = sorted_eigen(weighted);
    let spectrum: Vec<f64> = values.iter().map(|v| v.max(0.0)).collect();
    let scale = raw_var.iter().map(|v| v.abs()).sum::<f64>() / len as f64
        + mean.iter().map(|v| v * v).sum::<f64>() / len as f64;
    let m = pve_count(&spectrum, opts.pve_univariate, 1e-12 * scale.max(f64::MIN_POSITIVE));
    let mut eigenfunctions = Vec::with_capacity(m);
    for k in 0..m {
        let mut phi: Vec<f64> = (0..len).map(|c| vectors[(c, k)] / sw[c]).collect();
        fix_sign(&mut phi);
        eigenfunctions.push(phi);
    }
    let eigenvalues = spectrum[..m].to_vec();

    let sqrt_lambda: Vec<f64> = eigenvalues.iter().map(|v| v.sqrt()).collect();
    let scores = var
        .subjects
        .iter()
        .map(|obs| {
            if obs.is_empty() || m == 0 {
                return vec![0.0; m];
            }
            let rows = DMatrix::from_fn(obs.len(), m, |r, k| {
                let o = obs[r];
                let phi = &eigenfunctions[k];
                let next = (o.c0 + 1).min(len - 1);
                (1.0 - o.w) * phi[o.c0] + o.w * phi[next]
            });
            let resid = DVector::from_iterator(obs.len(), obs.iter().map(|o| o.value - mean_at_bins[o.u]));
            let noise = DVector::from_element(obs.len(), sigma2);
            match blup(&rows, &resid, &noise, &sqrt_lambda) {
                Some((_, a)) => (0..m).map(|k| sqrt_lambda[k] * a[k]).collect(),
                None => vec![0.0; m],
            }
        })
        .collect();

    Ok(UfpcaModel {
        grid: grid.clone(),
        mean,
        covariance: surface.transpose().iter().copied().collect(),
        eigenfunctions,
        eigenvalues,
        spectrum,
        sigma2,
        scores,
        mean_bandwidth: h_mean,
        cov_bandwidth: h_cov,
        mean_at_bins,
    })
}

const CV_FRACTIONS: [f64; 7] = [0.4, 0.6, 0.8, 1.0, 1.5, 2.0, 3.0];
const CV_FOLDS: usize = 5;

/// 5-fold subject-level cross-validation of the mean bandwidth (prediction
/// error of held-out observations) and then of the covariance bandwidth
/// (prediction error of held-out raw cross-products).
fn cross_validated_bandwidths(
    var: &PreparedVariable,
    weights: &[f64],
    default_h: f64,
    j: usize,
) -> Result<(f64, f64), FpcaError> {
    let folds: Vec<(Vec<f64>, Vec<usize>)> = (0..CV_FOLDS)
        .map(|f| {
            let train: Vec<f64> = weights
                .iter()
                .enumerate()
                .map(|(i, &w)| if i % CV_FOLDS == f { 0.0 } else { w })
                .collect();
            let test = (0..weights.len()).filter(|&i| i % CV_FOLDS == f && weights[i] > 0.0).collect();
            (train, test)
        })
        .collect();
    let mut best_mean = (f64::INFINITY, default_h);
    for frac in CV_FRACTIONS {
        let h = frac * default_h;
        let mut err = 0.0;
        let mut ok = true;
        for (train, test) in &folds {
            let mm = mean_moments(var, train);
            match local_linear_1d(&var.locs, &mm.counts, &mm.sums, h, &var.locs) {
                Ok(fit) => {
                    for &i in test {
                        for o in &var.subjects[i] {
                            err += weights[i] * (o.value - fit[o.u]).powi(2);
                        }
                    }
                }
                Err(_) => {
                    ok = false;
                    break;
                }
            }
        }
        if ok && err < best_mean.0 {
            best_mean = (err, h);
        }
    }
    let h_mean = best_mean.1;
    let mm = mean_moments(var, weights);
    let mean_at_bins = local_linear_1d(&var.locs, &mm.counts, &mm.sums, h_mean, &var.locs)
        .map_err(bandwidth_error(j, "mean", h_mean))?;
    let mut best_cov = (f64::INFINITY, default_h);
    for frac in CV_FRACTIONS {
        let h = frac * default_h;
        let mut err = 0.0;
        let mut ok = true;
        for (train, test) in &folds {
            let (cc, cs, _) = covariance_moments(var, train, &mean_at_bins);
            match local_linear_surface(&var.locs, &cc, &cs, h, &var.locs) {
                Ok(surface) => {
                    for &i in test {
                        let obs = &var.subjects[i];
                        for oa in obs {
                            for ob in obs {
                                if oa.u != ob.u {
                                    let raw = (oa.value - mean_at_bins[oa.u]) * (ob.value - mean_at_bins[ob.u]);
                                    err += weights[i] * (raw - surface[(oa.u, ob.u)]).powi(2);
                                }
                            }
                        }
                    }
                }
                Err(_) => {
                    ok = false;
                    break;
                }
            }
        }
        if ok && err < best_cov.0 {
            best_cov = (err, h);
        }
    }
    Ok((h_mean, best_cov.1))
}

/// Univariate FPCA of variable `j`.
pub fn fit_ufpca(set: &SparseSampleSet, j: usize, grid: &Grid, opts: &FpcaOptions) -> Result<UfpcaModel, FpcaError> {
    opts.validate()?;
    if j >= set.p() {
        return Err(FpcaError::Options(format!("variable {j} out of range (p = {})", set.p())));
    }
    let data = PreparedData::new(set, grid);
    fit_variable(&data, j, &vec![1.0; set.n()], opts)
}

pub fn fit_mfpca(set: &SparseSampleSet, grid: &Grid, opts: &FpcaOptions) -> Result<MfpcaModel, FpcaError> {
    let data = PreparedData::new(set, grid);
    fit_mfpca_weighted(&data, &vec![1.0; data.n], opts)
}

/// MFPCA where subject `i` counts `weights[i]` times (bootstrap multiplicity).
pub fn fit_mfpca_weighted(data: &Arc<PreparedData>, weights: &[f64], opts: &FpcaOptions) -> Result<MfpcaModel, FpcaError> {
    opts.validate()?;
    if weights.len() != data.n {
        return Err(FpcaError::Options(format!("{} weights for {} subjects", weights.len(), data.n)));
    }
    let univariate = (0..data.p)
        .map(|j| fit_variable(data, j, weights, opts))
        .collect::<Result<Vec<_>, _>>()?;
    let n = data.n;
    let blocks: Vec<usize> = univariate.iter().map(UfpcaModel::components).collect();
    let m_plus: usize = blocks.iter().sum();
    let xi = DMatrix::from_fn(n, m_plus, |i, col| {
        let mut col = col;
        for u in &univariate {
            if col < u.components() {
                return u.scores[i][col];
            }
            col -= u.components();
        }
        unreachable!()
    });
    let total_w: f64 = weights.iter().sum();
    let mut z = DMatrix::zeros(m_plus, m_plus);
    for i in 0..n {
        if weights[i] == 0.0 {
            continue;
        }
        let row = xi.row(i);
        z += weights[i] * row.transpose() * row;
    }
    z /= (total_w - 1.0).max(1.0);
    let z = (&z + z.transpose()) * 0.5;

    let (c, eigenvalues) = if data.p == 1 {
        (DMatrix::identity(m_plus, m_plus), univariate[0].eigenvalues.clone())
    } else {
        let (values, vectors) = sorted_eigen(z.clone());
        if let Some(&min) = values.last() {
            let max = values[0].abs().max(f64::MIN_POSITIVE);
            if min < -1e-8 * max {
                return Err(FpcaError::NotPsd(min));
            }
        }
        let clipped: Vec<f64> = values.iter().map(|v| v.max(0.0)).collect();
        let scale = clipped.first().copied().unwrap_or(0.0);
        let m = pve_count(&clipped, opts.pve_multivariate, 1e-12 * scale);
        (vectors.columns(0, m).into_owned(), clipped[..m].to_vec())
    };
    let m = eigenvalues.len();
    let len = data.grid.len();
    let mut c = c;
    let mut psi = DMatrix::zeros(data.p * len, m);
    for k in 0..m {
        let mut offset = 0;
        for (j, u) in univariate.iter().enumerate() {
            for (l, phi) in u.eigenfunctions.iter().enumerate() {
                let coef = c[(offset + l, k)];
                for cc in 0..len {
                    psi[(j * len + cc, k)] += coef * phi[cc];
                }
            }
            offset += u.components();
        }
        let mut col: Vec<f64> = psi.column(k).iter().copied().collect();
        if fix_sign(&mut col) {
            psi.column_mut(k).neg_mut();
            c.column_mut(k).neg_mut();
        }
    }
    let scores = &xi * &c;
    Ok(MfpcaModel {
        univariate,
        xi,
        z,
        c,
        eigenvalues,
        psi,
        scores,
        data: Arc::clone(data),
    })
}

/// Conditional fit and error variance of every subject of `model.data` on
/// the grid, flattened `(i * p + j) * len + c`.
fn conditional(model: &MfpcaModel) -> (Vec<f64>, Vec<f64>) {
    let data = &model.data;
    let (n, p, len) = (data.n, data.p, data.grid.len());
    let cells = p * len;
    let m = model.components();
    // E^T = (psi V^{1/2})^T, row-major m x (p len): contiguous per component
    let mut et = vec![0.0; m * cells];
    for k in 0..m {
        let s = model.eigenvalues[k].sqrt();
        for r in 0..cells {
            et[k * cells + r] = model.psi[(r, k)] * s;
        }
    }
    let per_subject = crate::par_map(n, |i| {
        let mut fitted = vec![0.0; cells];
        let mut var = vec![0.0; cells];
        for j in 0..p {
            fitted[j * len..(j + 1) * len].copy_from_slice(&model.univariate[j].mean);
        }
        if m == 0 {
            return (fitted, var);
        }
        let nobs: usize = (0..p).map(|j| data.vars[j].subjects[i].len()).sum();
        // whitened design B^T (m x nobs) and residuals, with the Sigma_Y ridge
        let mut bt = vec![0.0; m * nobs];
        let mut rt = Vec::with_capacity(nobs);
        let mut noise = Vec::with_capacity(nobs);
        let mut trace = 0.0;
        let mut r = 0;
        for j in 0..p {
            let u = &model.univariate[j];
            let d = u.sigma2.max(SIGMA2_FLOOR);
            for o in &data.vars[j].subjects[i] {
                let lo = j * len + o.c0;
                let hi = j * len + (o.c0 + 1).min(len - 1);
                for k in 0..m {
                    let v = (1.0 - o.w) * et[k * cells + lo] + o.w * et[k * cells + hi];
                    trace += v * v;
                    bt[k * nobs + r] = v;
                }
                rt.push(o.value - u.mean_at_bins[o.u]);
                noise.push(d);
                trace += d;
                r += 1;
            }
        }
        let ridge = (1e-10 * trace).max(1e-8);
        let scale: Vec<f64> = noise.iter().map(|d| 1.0 / (d + ridge).sqrt()).collect();
        for (v, s) in rt.iter_mut().zip(&scale) {
            *v *= s;
        }
        for row in bt.chunks_exact_mut(nobs) {
            for (v, s) in row.iter_mut().zip(&scale) {
                *v *= s;
            }
        }
        let mut a = vec![0.0; m * m];
        let mut g = vec![0.0; m];
        for k in 0..m {
            let bk = &bt[k * nobs..(k + 1) * nobs];
            g[k] = dot(bk, &rt);
            for l in 0..=k {
                a[k * m + l] = dot(bk, &bt[l * nobs..(l + 1) * nobs]);
            }
            a[k * m + k] += 1.0;
        }
        if !cholesky_lower(&mut a, m) {
            return (fitted, var);
        }
        let sol = backward(&a, m, &forward(&a, m, &g));
        // X = L^{-1} E^T row by row; var = column sums of squares
        let mut x = vec![0.0; m * cells];
        for k in 0..m {
            let (done, rest) = x.split_at_mut(k * cells);
            let xk = &mut rest[..cells];
            let ek = &et[k * cells..(k + 1) * cells];
            xk.copy_from_slice(ek);
            for l in 0..k {
                let c = a[k * m + l];
                for (v, w) in xk.iter_mut().zip(&done[l * cells..(l + 1) * cells]) {
                    *v -= c * w;
                }
            }
            let inv = 1.0 / a[k * m + k];
            for ((v, f), (s, e)) in xk.iter_mut().zip(fitted.iter_mut()).zip(var.iter_mut().zip(ek)) {
                *v *= inv;
                *s += *v * *v;
                *f += sol[k] * e;
            }
        }
        (fitted, var)
    });
    let mut fitted = Vec::with_capacity(n * cells);
    let mut variance = Vec::with_capacity(n * cells);
    for (f, v) in per_subject {
        fitted.extend(f);
        variance.extend(v);
    }
    (fitted, variance)
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four independent accumulators so the loop vectorizes
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// In-place Cholesky of the lower triangle of a row-major `m x m` matrix.
fn cholesky_lower(a: &mut [f64], m: usize) -> bool {
    for j in 0..m {
        let (head, tail) = a.split_at_mut(j * m);
        let rowj = &mut tail[..m];
        let _ = head;
        let s = rowj[j] - rowj[..j].iter().map(|v| v * v).sum::<f64>();
        if !(s > 0.0) {
            return false;
        }
        rowj[j] = s.sqrt();
        let (upper, lower) = a.split_at_mut((j + 1) * m);
        let rowj = &upper[j * m..j * m + j + 1];
        for i in (j + 1)..m {
            let rowi = &mut lower[(i - j - 1) * m..(i - j) * m];
            let dot: f64 = rowi[..j].iter().zip(&rowj[..j]).map(|(x, y)| x * y).sum();
            rowi[j] = (rowi[j] - dot) / rowj[j];
        }
    }
    true
}

fn forward(l: &[f64], m: usize, b: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; m];
    for k in 0..m {
        let s: f64 = l[k * m..k * m + k].iter().zip(&y[..k]).map(|(a, b)| a * b).sum();
        y[k] = (b[k] - s) / l[k * m + k];
    }
    y
}

fn backward(l: &[f64], m: usize, y: &[f64]) -> Vec<f64> {
    let mut x = vec![0.0; m];
    for k in (0..m).rev() {
        let s: f64 = ((k + 1)..m).map(|r| l[r * m + k] * x[r]).sum();
        x[k] = (y[k] - s) / l[k * m + k];
    }
    x
}

pub fn normal_multiplier(alpha: f64) -> Result<f64, FpcaError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(FpcaError::Options(format!("alpha = {alpha} must lie in (0, 1)")));
    }
    Ok(Normal::standard().inverse_cdf(1.0 - alpha / 2.0))
}

fn assemble(
    data: &PreparedData,
    fitted: Vec<f64>,
    variance: Vec<f64>,
    alpha: f64,
    method: FitMethod,
    bootstrap: usize,
) -> Result<FitResult, FpcaError> {
    let z = normal_multiplier(alpha)?;
    let lower: Vec<f64> = fitted.iter().zip(&variance).map(|(f, v)| f - z * v.max(0.0).sqrt()).collect();
    let upper: Vec<f64> = fitted.iter().zip(&variance).map(|(f, v)| f + z * v.max(0.0).sqrt()).collect();
    let mk = |v: Vec<f64>| CompleteCurves::new(data.n, data.p, data.grid.clone(), v);
    Ok(FitResult {
        fitted: mk(fitted)?,
        lower: mk(lower)?,
        upper: mk(upper)?,
        variance: mk(variance)?,
        alpha,
        method,
        bootstrap,
    })
}

/// Conditional-expectation fit of every subject with pointwise
/// `(1 - alpha)` confidence bands.
pub fn mfpca_fit_curves(model: &MfpcaModel, alpha: f64) -> Result<FitResult, FpcaError> {
    normal_multiplier(alpha)?;
    let (fitted, variance) = conditional(model);
    assemble(&model.data, fitted, variance, alpha, FitMethod::Mfpca, 0)
}

fn resample_weights(n: usize, seed: u64, b: usize, attempt: usize) -> Vec<f64> {
    let mut rng = seeding::stream(seed, &[3, b as u64, attempt as u64]);
    let mut w = vec![0.0; n];
    for _ in 0..n {
        w[rng.random_range(0..n)] += 1.0;
    }
    w
}

/// Bootstrap-corrected fit with `b` subject resamples.
pub fn bmfpca_fit(
    set: &SparseSampleSet,
    grid: &Grid,
    b: usize,
    alpha: f64,
    seed: u64,
    opts: &FpcaOptions,
) -> Result<FitResult, FpcaError> {
    let data = PreparedData::new(set, grid);
    bmfpca_fit_prepared(&data, b, alpha, seed, opts)
}

pub fn bmfpca_fit_prepared(
    data: &Arc<PreparedData>,
    b: usize,
    alpha: f64,
    seed: u64,
    opts: &FpcaOptions,
) -> Result<FitResult, FpcaError> {
    if b == 0 {
        return Err(FpcaError::Options("bootstrap count must be at least 1".into()));
    }
    normal_multiplier(alpha)?;
    opts.validate()?;
    let cap = 10 * b;
    let runs = crate::par_map(b, |k| {
        for attempt in 0..cap {
            let w = resample_weights(data.n, seed, k, attempt);
            if let Ok(model) = fit_mfpca_weighted(data, &w, opts) {
                return Ok((conditional(&model), attempt + 1));
            }
        }
        Err(FpcaError::BootstrapExhausted(cap))
    });
    let mut results = Vec::with_capacity(b);
    let mut attempts = 0;
    for r in runs {
        let (fit, tried) = r?;
        attempts += tried;
        results.push(fit);
    }
    if attempts > cap {
        return Err(FpcaError::BootstrapExhausted(attempts));
    }
    combine(data, results, alpha)
}

/// Bootstrap fit over explicitly given resamples (subject index lists).
pub fn bmfpca_fit_with_resamples(
    data: &Arc<PreparedData>,
    resamples: &[Vec<usize>],
    alpha: f64,
    opts: &FpcaOptions,
) -> Result<FitResult, FpcaError> {
    if resamples.is_empty() {
        return Err(FpcaError::Options("need at least one resample".into()));
    }
    normal_multiplier(alpha)?;
    let mut results = Vec::with_capacity(resamples.len());
    for idx in resamples {
        let mut w = vec![0.0; data.n];
        for &i in idx {
            if i >= data.n {
                return Err(FpcaError::Options(format!("resample index {i} out of range")));
            }
            w[i] += 1.0;
        }
        results.push(conditional(&fit_mfpca_weighted(data, &w, opts)?));
    }
    combine(data, results, alpha)
}

fn combine(data: &PreparedData, results: Vec<(Vec<f64>, Vec<f64>)>, alpha: f64) -> Result<FitResult, FpcaError> {
    let b = results.len();
    let size = results[0].0.len();
    let mut mean = vec![0.0; size];
    let mut within = vec![0.0; size];
    for (f, v) in &results {
        for k in 0..size {
            mean[k] += f[k];
            within[k] += v[k];
        }
    }
    let inv = 1.0 / b as f64;
    mean.iter_mut().for_each(|x| *x *= inv);
    within.iter_mut().for_each(|x| *x *= inv);
    let mut variance = within;
    if b > 1 {
        let mut between = vec![0.0; size];
        for (f, _) in &results {
            for k in 0..size {
                between[k] += (f[k] - mean[k]).powi(2);
            }
        }
        for k in 0..size {
            variance[k] += between[k] / (b - 1) as f64;
        }
    }
    assemble(data, mean, variance, alpha, FitMethod::Bmfpca, b)
}
