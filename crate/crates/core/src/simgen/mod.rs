//! Synthetic multivariate functional data with labeled outliers, and the
//! three sparsification regimes (point, peak, partial).
//!
//! Curves follow a truncated Karhunen–Loève expansion
//! `mu(t) + sum_m rho_m psi_m(t) + eps(t)` with Fourier eigenfunctions and
//! eigenvalues `(M + 1 - m) / M`. Models 2–8 contaminate a fraction of the
//! subjects through the mean, the scores or the error process.

pub mod bessel;

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Exp, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::fdata::{CompleteCurves, FdataError, Grid, GridMask};
use crate::seeding;

pub use bessel::{bessel_k, matern};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("model id {0} is outside 1..=8")]
    UnknownModel(u8),
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] FdataError),
}

/// Cross-correlation between the Matérn error components of different
/// variables in model 8.
pub const MATERN_CROSS_CORRELATION: f64 = 0.3;

/// Orthonormal Fourier function `k` (0: constant, 2r-1: sine, 2r: cosine of
/// frequency r) at relative position `u` in `[0, 1]` of a domain of length
/// `span`.
pub fn fourier_function(k: usize, u: f64, span: f64) -> f64 {
    if k == 0 {
        return 1.0 / span.sqrt();
    }
    let freq = k.div_ceil(2) as f64;
    let scale = (2.0 / span).sqrt();
    if k % 2 == 1 {
        scale * (2.0 * PI * freq * u).sin()
    } else {
        scale * (2.0 * PI * freq * u).cos()
    }
}

/// Multivariate Fourier eigenbasis on a grid.
///
/// Variable `j` (0-based) of component `m` uses Fourier function
/// `(m + j) mod M`, scaled by `1/sqrt(p)`, so components are orthonormal
/// in the summed inner product and each variable sees a different ordering
/// of the frequencies.
#[derive(Clone, Debug)]
pub struct FourierBasis {
    components: usize,
    p: usize,
    len: usize,
    values: Vec<f64>,
}

impl FourierBasis {
    pub fn components(&self) -> usize {
        self.components
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Index of the Fourier function used by component `m` in variable `j`.
    pub fn assignment(&self, m: usize, j: usize) -> usize {
        (m + j) % self.components
    }

    /// `psi_m^{(j)}(t_c)`.
    #[inline]
    pub fn value(&self, m: usize, j: usize, c: usize) -> f64 {
        self.values[(m * self.p + j) * self.len + c]
    }

    pub fn component(&self, m: usize, j: usize) -> &[f64] {
        let start = (m * self.p + j) * self.len;
        &self.values[start..start + self.len]
    }

    /// The `M` unscaled functions of variable `j` (orthonormal on their own).
    pub fn univariate_block(&self, j: usize) -> Vec<Vec<f64>> {
        let s = (self.p as f64).sqrt();
        (0..self.components)
            .map(|m| self.component(m, j).iter().map(|v| v * s).collect())
            .collect()
    }

    /// Eigenvalues `(M + 1 - m) / M`, m = 1..M.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let m = self.components as f64;
        (1..=self.components).map(|k| (m + 1.0 - k as f64) / m).collect()
    }
}

pub fn fourier_eigenbasis(components: usize, grid: &Grid, p: usize) -> FourierBasis {
    assert!(components >= 1 && p >= 1, "need at least one component and one variable");
    let len = grid.len();
    let span = grid.span();
    let scale = 1.0 / (p as f64).sqrt();
    let mut values = Vec::with_capacity(components * p * len);
    for m in 0..components {
        for j in 0..p {
            let k = (m + j) % components;
            values.extend(
                grid.points()
                    .iter()
                    .map(|&t| scale * fourier_function(k, (t - grid.start()) / span, span)),
            );
        }
    }
    FourierBasis {
        components,
        p,
        len,
        values,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// 1 = no outlier, 2 = persistent magnitude, 3 = isolated magnitude,
    /// 4 = shape I, 5 = shape II, 6 = mixed, 7 = joint, 8 = covariance.
    pub model: u8,
    pub n: usize,
    pub grid: Grid,
    pub p: usize,
    pub contamination: f64,
    pub seed: u64,
    pub basis_size: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            model: 1,
            n: 100,
            grid: Grid::default(),
            p: 3,
            contamination: 0.1,
            seed: 0,
            basis_size: 9,
        }
    }
}

impl SimConfig {
    pub fn outlier_count(&self) -> usize {
        if self.model == 1 {
            0
        } else {
            (self.contamination * self.n as f64).round() as usize
        }
    }
}

#[derive(Clone, Debug)]
pub struct LabeledDataset {
    /// Noisy curves on the full grid.
    pub observed: CompleteCurves,
    /// Curves without the error process.
    pub signal: CompleteCurves,
    pub truth: Vec<bool>,
    pub noise_variances: Vec<f64>,
    pub config: SimConfig,
}

fn base_mean(j: usize, u: f64) -> f64 {
    match j {
        0 => 5.0 * (2.0 * PI * u).sin(),
        1 => 5.0 * (2.0 * PI * u).cos(),
        _ => 5.0 * (u - 1.0).powi(2),
    }
}

/// Mean of variable `j`; for `p = 1` the first variable's definition is used.
pub fn model_mean(j: usize, u: f64) -> f64 {
    base_mean(j, u)
}

pub fn generate(config: &SimConfig) -> Result<LabeledDataset, SimError> {
    if !(1..=8).contains(&config.model) {
        return Err(SimError::UnknownModel(config.model));
    }
    if config.n == 0 || config.p == 0 || config.basis_size == 0 {
        return Err(SimError::Config("n, p and basis size must be positive".into()));
    }
    if !(0.0..1.0).contains(&config.contamination) {
        return Err(SimError::Config(format!(
            "contamination {} is outside [0, 1)",
            config.contamination
        )));
    }
    let (n, p) = (config.n, config.p);
    let grid = &config.grid;
    let len = grid.len();
    let us: Vec<f64> = grid.points().iter().map(|t| (t - grid.start()) / grid.span()).collect();
    let basis = fourier_eigenbasis(config.basis_size, grid, p);
    let nu = basis.eigenvalues();

    let mut rng = seeding::stream(config.seed, &[0]);
    let noise_variances: Vec<f64> = (0..p).map(|_| rng.random_range(0.5..0.7)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut truth = vec![false; n];
    for &i in order.iter().take(config.outlier_count()) {
        truth[i] = true;
    }

    let matern_factors = if config.model == 8 {
        let clean: Vec<f64> = (0..p).map(|_| rng.random_range(2.0..3.0)).collect();
        let rough: Vec<f64> = (0..p).map(|_| rng.random_range(0.3..0.5)).collect();
        Some((
            matern_factor(&us, &noise_variances, &clean),
            matern_factor(&us, &noise_variances, &rough),
        ))
    } else {
        None
    };

    let mut signal = vec![0.0; n * p * len];
    let mut observed = vec![0.0; n * p * len];
    for i in 0..n {
        let mut r = seeding::stream(config.seed, &[1, i as u64]);
        let outlier = truth[i];
        let scores: Vec<f64> = nu
            .iter()
            .map(|&v| {
                let z: f64 = StandardNormal.sample(&mut r);
                v.sqrt() * z
            })
            .collect();
        let perturb = Perturbation::draw(config.model, outlier, p, &mut r);
        for j in 0..p {
            for c in 0..len {
                let u = us[c];
                let mut x: f64 = (0..config.basis_size).map(|m| scores[m] * basis.value(m, j, c)).sum();
                x += perturb.apply(j, u);
                let k = (i * p + j) * len + c;
                signal[k] = x;
            }
        }
        match &matern_factors {
            Some((clean, rough)) => {
                let factor = if outlier { rough } else { clean };
                let z = DVector::from_fn(p * len, |_, _| StandardNormal.sample(&mut r));
                let e = factor * z;
                for j in 0..p {
                    for c in 0..len {
                        let k = (i * p + j) * len + c;
                        observed[k] = signal[k] + e[j * len + c];
                    }
                }
            }
            None => {
                for j in 0..p {
                    let sd = noise_variances[j].sqrt();
                    for c in 0..len {
                        let k = (i * p + j) * len + c;
                        let z: f64 = StandardNormal.sample(&mut r);
                        observed[k] = signal[k] + sd * z;
                    }
                }
            }
        }
    }

    Ok(LabeledDataset {
        observed: CompleteCurves::new(n, p, grid.clone(), observed)?,
        signal: CompleteCurves::new(n, p, grid.clone(), signal)?,
        truth,
        noise_variances,
        config: config.clone(),
    })
}

/// Subject-level departures from model 1: a mean replacement and/or an
/// additive perturbation of the random part.
enum Perturbation {
    None,
    Constant(Vec<f64>),
    Window { start: f64, offsets: Vec<f64> },
    ShiftedMean(Vec<f64>),
    ShapeTwo,
    Scaled(Vec<f64>),
    Joint(Vec<f64>, bool),
}

impl Perturbation {
    fn draw(model: u8, outlier: bool, p: usize, r: &mut seeding::Rng) -> Self {
        let signs = |r: &mut seeding::Rng| -> Vec<f64> {
            (0..p).map(|_| if r.random_bool(0.5) { 8.0 } else { -8.0 }).collect()
        };
        match (model, outlier) {
            (2, true) => Perturbation::Constant(signs(r)),
            (3, true) => {
                let start = r.random_range(0.0..0.9);
                Perturbation::Window {
                    start,
                    offsets: signs(r),
                }
            }
            (4, true) => Perturbation::ShiftedMean(vec![0.3, 0.2, 0.5]),
            (5, true) => Perturbation::ShapeTwo,
            (5, false) => {
                let dist = Uniform::new_inclusive(-2.1, 2.1).expect("valid range");
                Perturbation::Constant((0..p).map(|_| dist.sample(r)).collect())
            }
            (6, true) => {
                let exp = Exp::new(2.0).expect("positive rate");
                Perturbation::Scaled((0..p).map(|_| 2.0 + exp.sample(r)).collect())
            }
            (7, o) => {
                let dist = Uniform::new_inclusive(2.0, 8.0).expect("valid range");
                let z: Vec<f64> = (0..4).map(|_| dist.sample(r)).collect();
                Perturbation::Joint(z, o)
            }
            _ => Perturbation::None,
        }
    }

    /// Mean plus perturbation of variable `j` at relative time `u`.
    fn apply(&self, j: usize, u: f64) -> f64 {
        match self {
            Perturbation::None => base_mean(j, u),
            Perturbation::Constant(off) => base_mean(j, u) + off[j],
            Perturbation::Window { start, offsets } => {
                let inside = u >= *start && u <= start + 0.1;
                base_mean(j, u) + if inside { offsets[j] } else { 0.0 }
            }
            Perturbation::ShiftedMean(shift) => base_mean(j, u - shift[j.min(2)]),
            Perturbation::ShapeTwo => {
                base_mean(j, u)
                    + match j {
                        0 => 2.0 * (4.0 * PI * u).sin(),
                        1 => 2.0 * (4.0 * PI * u).cos(),
                        _ => 2.0 * (8.0 * PI * u).cos(),
                    }
            }
            Perturbation::Scaled(factor) => {
                let m = factor[j] * base_mean(j, u);
                if j >= 2 {
                    m - 6.0
                } else {
                    m
                }
            }
            Perturbation::Joint(z, outlier) => {
                let (a, b, c) = if *outlier {
                    (z[0], z[1], z[2])
                } else {
                    (z[3], 8.0 - z[3], z[3] - 2.0)
                };
                base_mean(j, u)
                    + match j {
                        0 => a * u * (PI * u).sin(),
                        1 => b * u * (PI * u).cos(),
                        _ => c * u * (2.0 * PI * u).sin() - 6.0,
                    }
            }
        }
    }
}

/// Cross-covariance matrix of the Matérn error process over the grid
/// (variable-major blocks).
pub fn matern_cross_covariance(us: &[f64], variances: &[f64], smoothness: &[f64]) -> DMatrix<f64> {
    let p = variances.len();
    let len = us.len();
    let mut cov = DMatrix::zeros(p * len, p * len);
    for a in 0..p {
        for b in a..p {
            let nu = 0.5 * (smoothness[a] + smoothness[b]);
            let rho = if a == b { 1.0 } else { MATERN_CROSS_CORRELATION };
            let scale = rho * (variances[a] * variances[b]).sqrt();
            for s in 0..len {
                for t in 0..len {
                    let v = scale * matern(us[s] - us[t], nu);
                    cov[(a * len + s, b * len + t)] = v;
                    cov[(b * len + t, a * len + s)] = v;
                }
            }
        }
    }
    cov
}

/// A square-root factor `L` with `L L^T` equal to the Matérn covariance:
/// Cholesky with 1e-8 relative diagonal jitter, or clipped symmetric
/// eigendecomposition when even that fails.
fn matern_factor(us: &[f64], variances: &[f64], smoothness: &[f64]) -> DMatrix<f64> {
    let cov = matern_cross_covariance(us, variances, smoothness);
    let dim = cov.nrows();
    let jitter = 1e-8 * cov.diagonal().max();
    let jittered = &cov + DMatrix::identity(dim, dim) * jitter;
    if let Some(ch) = jittered.cholesky() {
        return ch.l();
    }
    let eig = cov.symmetric_eigen();
    let sqrt_vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SparsityKind {
    Point,
    Peak,
    Partial,
}

impl std::str::FromStr for SparsityKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "point" => Ok(Self::Point),
            "peak" => Ok(Self::Peak),
            "partial" => Ok(Self::Partial),
            other => Err(format!("unknown sparseness kind `{other}` (point, peak, partial)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsifyConfig {
    pub kind: SparsityKind,
    pub p_sparse: f64,
    pub p_curve: f64,
    pub seed: u64,
}

/// Grid cells removed by a window starting at relative time `start` that
/// covers a fraction `p_curve` of the domain: `round(p_curve * len)` cells
/// from `round(start * (len - 1))`.
pub fn window_cells(start: f64, p_curve: f64, len: usize) -> std::ops::Range<usize> {
    let count = ((p_curve * len as f64).round() as usize).min(len);
    let first = ((start * (len - 1) as f64).round() as usize).min(len - count);
    first..first + count
}

/// Draws a presence mask for curves shaped like `curves`.
///
/// Each `(subject, variable)` curve is sparse with probability `p_sparse`.
/// A subject left without any observation gets one random cell back so the
/// result is always a valid sample.
pub fn sparsify(curves: &CompleteCurves, config: &SparsifyConfig) -> GridMask {
    sparsify_dims(curves.n(), curves.p(), curves.grid().len(), config)
}

pub fn sparsify_dims(n: usize, p: usize, len: usize, config: &SparsifyConfig) -> GridMask {
    let mut mask = GridMask::filled(n, p, len, true);
    let pc = config.p_curve.clamp(0.0, 1.0);
    let ps = config.p_sparse.clamp(0.0, 1.0);
    if pc == 0.0 || ps == 0.0 {
        return mask;
    }
    let mut rng = seeding::stream(config.seed, &[2]);
    let shared: Vec<f64> = (0..p).map(|_| rng.random_range(0.0..=1.0 - pc)).collect();
    for i in 0..n {
        for j in 0..p {
            if !rng.random_bool(ps) {
                continue;
            }
            let row = mask.row_mut(i, j);
            match config.kind {
                SparsityKind::Point => {
                    for cell in row.iter_mut() {
                        if rng.random_bool(pc) {
                            *cell = false;
                        }
                    }
                }
                SparsityKind::Peak | SparsityKind::Partial => {
                    let start = if config.kind == SparsityKind::Peak {
                        rng.random_range(0.0..=1.0 - pc)
                    } else {
                        shared[j]
                    };
                    for c in window_cells(start, pc, len) {
                        row[c] = false;
                    }
                }
            }
        }
        if (0..p).all(|j| mask.row(i, j).iter().all(|&b| !b)) {
            let j = rng.random_range(0..p);
            let c = rng.random_range(0..len);
            mask.set(i, j, c, true);
        }
    }
    mask
}
