//! Directional outlyingness (mean and variation of pointwise outlyingness)
//! with a robust Mahalanobis cutoff.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, FisherSnedecor};

use super::halfspace::{DirectionSet, DEFAULT_DIRECTION_SEED};
use super::{constant_weights, DepthError};
use crate::fdata::CompleteCurves;
use crate::seeding;

pub const DEFAULT_CUTOFF_Q: f64 = 0.993;
const MCD_STARTS: usize = 30;
const MCD_SEED: u64 = 0x0d15_ea5e;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutlyingnessReport {
    /// Mean directional outlyingness, one p-vector per curve.
    pub mo: Vec<Vec<f64>>,
    /// Variation of directional outlyingness.
    pub vo: Vec<f64>,
    /// Squared robust Mahalanobis distance of (MO, VO).
    pub distances: Vec<f64>,
    /// Cutoff the distances were compared against.
    pub cutoff: f64,
    pub rule: CutoffRule,
    pub flagged: Vec<bool>,
}

/// How the (MO, VO) distances are turned into flags.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutoffRule {
    /// Reweighted MCD distances against the chi-square quantile with p + 1
    /// degrees of freedom.
    #[default]
    ChiSquare,
    /// Raw MCD distances against the scaled F approximation of Hardin and
    /// Rocke, as used by the MS-plot.
    HardinRocke,
}

impl std::str::FromStr for CutoffRule {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "chi_square" | "chisq" => Ok(Self::ChiSquare),
            "hardin_rocke" | "f" => Ok(Self::HardinRocke),
            other => Err(format!("unknown cutoff rule `{other}` (chi_square, hardin_rocke)")),
        }
    }
}

impl OutlyingnessReport {
    pub fn outliers(&self) -> Vec<usize> {
        (0..self.flagged.len()).filter(|&i| self.flagged[i]).collect()
    }
}

fn median(v: &mut [f64]) -> f64 {
    let n = v.len();
    let mid = n / 2;
    let (_, &mut hi, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    if n % 2 == 1 {
        hi
    } else {
        let lo = v[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lo + hi)
    }
}

/// Median and MAD of `v`, with a MAD of zero replaced by 1e-8 (1 + |median|).
fn med_mad(v: &[f64], scratch: &mut Vec<f64>) -> (f64, f64) {
    scratch.clear();
    scratch.extend_from_slice(v);
    let med = median(scratch);
    scratch.iter_mut().zip(v).for_each(|(s, x)| *s = (x - med).abs());
    let mad = median(scratch);
    let mad = if mad > 0.0 { mad } else { 1e-8 * (1.0 + med.abs()) };
    (med, mad)
}

/// Stahel-Donoho outlyingness of every row of `pts` (`n x p`).
fn sdo(pts: &[f64], p: usize, dirs: Option<&DirectionSet>) -> Vec<f64> {
    let n = pts.len() / p;
    let mut scratch = Vec::with_capacity(n);
    if p == 1 {
        let (med, mad) = med_mad(pts, &mut scratch);
        return pts.iter().map(|x| (x - med).abs() / mad).collect();
    }
    let dirs = dirs.expect("directions for p >= 2");
    let mut out = vec![0.0f64; n];
    let mut proj = vec![0.0; n];
    for k in 0..dirs.len() {
        let u = dirs.direction(k);
        for (v, q) in proj.iter_mut().zip(pts.chunks_exact(p)) {
            *v = q.iter().zip(u).map(|(a, b)| a * b).sum();
        }
        let (med, mad) = med_mad(&proj, &mut scratch);
        for (o, v) in out.iter_mut().zip(&proj) {
            *o = o.max((v - med).abs() / mad);
        }
    }
    out
}

/// Directional outlyingness of each curve. `ndirs` projection directions
/// are used for p >= 2. Curves whose squared robust distance of
/// (MO, VO) exceeds the `cutoff_q` chi-square quantile with p + 1 degrees of
/// freedom are flagged.
pub fn directional_outlyingness(
    curves: &CompleteCurves,
    cutoff_q: f64,
    ndirs: usize,
) -> Result<OutlyingnessReport, DepthError> {
    directional_outlyingness_with(curves, cutoff_q, ndirs, CutoffRule::ChiSquare)
}

pub fn directional_outlyingness_with(
    curves: &CompleteCurves,
    cutoff_q: f64,
    ndirs: usize,
    rule: CutoffRule,
) -> Result<OutlyingnessReport, DepthError> {
    let (n, p, len) = (curves.n(), curves.p(), curves.grid().len());
    if n <= p + 1 {
        return Err(DepthError::TooFewCurves { n, need: p + 1 });
    }
    if !(cutoff_q > 0.0 && cutoff_q <= 1.0) {
        return Err(DepthError::Dimension(format!("cutoff quantile must lie in (0, 1], got {cutoff_q}")));
    }
    if p >= 2 && ndirs < 1 {
        return Err(super::HalfspaceError::NoDirections.into());
    }
    let dirs = (p >= 2).then(|| DirectionSet::quasi_random(p, ndirs, DEFAULT_DIRECTION_SEED));
    let weights = constant_weights(curves.grid().points());

    // pointwise outlyingness vectors, cell-major: o[c][i*p + j]
    let o: Vec<Vec<f64>> = crate::par_map(len, |c| {
        let pts = super::cell_points(curves, c);
        let s = sdo(&pts, p, dirs.as_ref());
        let mut scratch = Vec::with_capacity(n);
        let center: Vec<f64> = (0..p)
            .map(|j| {
                let col: Vec<f64> = (0..n).map(|i| pts[i * p + j]).collect();
                med_mad(&col, &mut scratch).0
            })
            .collect();
        let mut out = vec![0.0; n * p];
        for i in 0..n {
            let row = &pts[i * p..(i + 1) * p];
            let norm = row.iter().zip(&center).map(|(x, m)| (x - m) * (x - m)).sum::<f64>().sqrt();
            if norm > 0.0 {
                for j in 0..p {
                    out[i * p + j] = s[i] * (row[j] - center[j]) / norm;
                }
            }
        }
        out
    });

    let mut mo = vec![vec![0.0; p]; n];
    for (oc, &w) in o.iter().zip(&weights) {
        for i in 0..n {
            for j in 0..p {
                mo[i][j] += w * oc[i * p + j];
            }
        }
    }
    let mut vo = vec![0.0; n];
    for (oc, &w) in o.iter().zip(&weights) {
        for i in 0..n {
            let d2: f64 = (0..p).map(|j| (oc[i * p + j] - mo[i][j]).powi(2)).sum();
            vo[i] += w * d2;
        }
    }

    let d = p + 1;
    let features: Vec<f64> = (0..n).flat_map(|i| mo[i].iter().copied().chain([vo[i]])).collect();
    let fit = mcd(&features, d);
    let (distances, cutoff) = match rule {
        CutoffRule::ChiSquare => (fit.distances, if cutoff_q >= 1.0 { f64::INFINITY } else { chi2_quantile(d, cutoff_q) }),
        CutoffRule::HardinRocke => (fit.raw_distances, if cutoff_q >= 1.0 { f64::INFINITY } else { hardin_rocke_cutoff(n, d, cutoff_q) }),
    };
    let flagged = distances.iter().map(|&x| x > cutoff).collect();
    Ok(OutlyingnessReport { mo, vo, distances, cutoff, rule, flagged })
}

/// Degrees of freedom `m` of the Wishart approximation to the raw MCD
/// covariance with `h = (n + d + 1) / 2`, including the small-sample
/// correction.
pub fn hardin_rocke_m(n: usize, d: usize) -> f64 {
    let h = ((n + d + 1) / 2).min(n);
    let a = h as f64 / n as f64;
    let p = d as f64;
    let q = chi2_quantile(d, a);
    let cdf = |df: usize| ChiSquared::new(df as f64).expect("positive degrees of freedom").cdf(q);
    let c = cdf(d + 2) / a;
    let c2 = -cdf(d + 2) / 2.0;
    let c3 = -cdf(d + 4) / 2.0;
    let c4 = 3.0 * c3;
    let b1 = c * (c3 - c4) / a;
    let b2 = 0.5 + c / a * (c3 - q / p * (c2 + 0.5 * (1.0 - a)));
    let v1 = (1.0 - a) * b1 * b1 * (a * (c * q / p - 1.0).powi(2) - 1.0)
        - 2.0 * c3 * c * c * (3.0 * (b1 - p * b2).powi(2) + (p + 2.0) * b2 * (2.0 * b1 - p * b2));
    let v2 = n as f64 * (b1 * (b1 - p * b2) * (1.0 - a)).powi(2) * c * c;
    let m = 2.0 * v2 / (c * c * v1);
    m * (0.725 - 0.00663 * p - 0.0780 * (n as f64).ln()).exp()
}

/// Cutoff on consistency-corrected raw MCD distances:
/// `F_{d, m-d+1}(q) d m / (m - d + 1)`.
fn hardin_rocke_cutoff(n: usize, d: usize, q: f64) -> f64 {
    let m = hardin_rocke_m(n, d);
    let df2 = (m - d as f64 + 1.0).max(1.0);
    let f = FisherSnedecor::new(d as f64, df2).expect("positive degrees of freedom").inverse_cdf(q);
    f * d as f64 * m / df2
}

fn chi2_quantile(df: usize, q: f64) -> f64 {
    ChiSquared::new(df as f64).expect("positive degrees of freedom").inverse_cdf(q)
}

/// Reweighted minimum covariance determinant estimate.
#[derive(Clone, Debug)]
pub struct Mcd {
    pub center: DVector<f64>,
    pub covariance: DMatrix<f64>,
    /// Squared robust Mahalanobis distances of the input rows.
    pub distances: Vec<f64>,
    /// Distances under the consistency-corrected raw (unreweighted) fit.
    pub raw_distances: Vec<f64>,
}

struct Scatter {
    center: DVector<f64>,
    cov: DMatrix<f64>,
}

impl Scatter {
    fn of(rows: &[&[f64]], d: usize) -> Self {
        let m = rows.len() as f64;
        let mut center = DVector::zeros(d);
        for r in rows {
            for j in 0..d {
                center[j] += r[j];
            }
        }
        center /= m;
        let mut cov = DMatrix::zeros(d, d);
        for r in rows {
            for a in 0..d {
                let x = r[a] - center[a];
                for b in 0..=a {
                    cov[(a, b)] += x * (r[b] - center[b]);
                }
            }
        }
        for a in 0..d {
            for b in 0..a {
                cov[(b, a)] = cov[(a, b)];
            }
        }
        cov /= m;
        Self { center, cov }
    }

    /// log-determinant (with a floor) and squared distances of all rows.
    fn distances(&self, pts: &[f64], d: usize) -> (f64, Vec<f64>) {
        let eig = self.cov.clone().symmetric_eigen();
        let top = eig.eigenvalues.iter().copied().fold(0.0f64, f64::max);
        let n = pts.len() / d;
        if top <= 0.0 {
            let dist = pts
                .chunks_exact(d)
                .map(|r| {
                    if r.iter().zip(self.center.iter()).all(|(a, b)| a == b) {
                        0.0
                    } else {
                        f64::INFINITY
                    }
                })
                .collect();
            return (f64::NEG_INFINITY, dist);
        }
        let floor = 1e-12 * top;
        let lambda: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(floor)).collect();
        let logdet = lambda.iter().map(|l| l.ln()).sum();
        let mut dist = Vec::with_capacity(n);
        for r in pts.chunks_exact(d) {
            let mut s = 0.0;
            for k in 0..d {
                let v = eig.eigenvectors.column(k);
                let z: f64 = (0..d).map(|j| v[j] * (r[j] - self.center[j])).sum();
                s += z * z / lambda[k];
            }
            dist.push(s);
        }
        (logdet, dist)
    }
}

fn smallest(dist: &[f64], h: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..dist.len()).collect();
    idx.sort_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(a.cmp(&b)));
    idx.truncate(h);
    idx.sort_unstable();
    idx
}

fn rows<'a>(pts: &'a [f64], d: usize, idx: &[usize]) -> Vec<&'a [f64]> {
    idx.iter().map(|&i| &pts[i * d..(i + 1) * d]).collect()
}

/// Concentration steps from a starting subset until the determinant stops
/// decreasing.
fn concentrate(pts: &[f64], d: usize, h: usize, start: &[usize]) -> (f64, Vec<usize>) {
    let mut subset = start.to_vec();
    let (mut logdet, mut dist) = Scatter::of(&rows(pts, d, &subset), d).distances(pts, d);
    for _ in 0..100 {
        let next = smallest(&dist, h);
        if next == subset {
            break;
        }
        let (next_logdet, next_dist) = Scatter::of(&rows(pts, d, &next), d).distances(pts, d);
        if subset.len() == h && next_logdet >= logdet {
            break;
        }
        (subset, logdet, dist) = (next, next_logdet, next_dist);
    }
    (logdet, subset)
}

/// Consistency factor for a covariance computed from the fraction `alpha`
/// of a normal sample with the smallest Mahalanobis distances.
fn consistency(d: usize, alpha: f64) -> f64 {
    if alpha >= 1.0 {
        return 1.0;
    }
    let q = chi2_quantile(d, alpha);
    let inner = ChiSquared::new((d + 2) as f64).expect("positive degrees of freedom").cdf(q);
    alpha / inner
}

/// FAST-MCD style estimate on `n x d` row-major points (n > d), with
/// deterministic starts, consistency correction and one reweighting step at
/// the 0.975 chi-square quantile.
pub fn mcd(pts: &[f64], d: usize) -> Mcd {
    let n = pts.len() / d;
    let h = ((n + d + 1) / 2).min(n);

    // start 1: nearest points to the coordinatewise median in MAD units
    let mut scratch = Vec::with_capacity(n);
    let scales: Vec<(f64, f64)> = (0..d)
        .map(|j| {
            let col: Vec<f64> = (0..n).map(|i| pts[i * d + j]).collect();
            med_mad(&col, &mut scratch)
        })
        .collect();
    let robust: Vec<f64> = pts
        .chunks_exact(d)
        .map(|r| r.iter().zip(&scales).map(|(x, (m, s))| ((x - m) / s).powi(2)).sum())
        .collect();
    let mut starts = vec![smallest(&robust, h)];
    let mut rng = seeding::stream(MCD_SEED, &[n as u64, d as u64]);
    let k = (d + 1).min(n);
    for _ in 0..MCD_STARTS {
        let mut s = sample(&mut rng, n, k).into_vec();
        s.sort_unstable();
        starts.push(s);
    }

    let mut best: Option<(f64, Vec<usize>)> = None;
    for s in &starts {
        let cand = concentrate(pts, d, h, s);
        if best.as_ref().is_none_or(|b| cand.0 < b.0) {
            best = Some(cand);
        }
    }
    let (_, subset) = best.expect("at least one start");

    let mut raw = Scatter::of(&rows(pts, d, &subset), d);
    raw.cov *= consistency(d, h as f64 / n as f64);
    let (_, dist) = raw.distances(pts, d);
    let keep_cut = chi2_quantile(d, 0.975);
    let keep: Vec<usize> = (0..n).filter(|&i| dist[i] <= keep_cut).collect();
    let (scatter, distances) = if keep.len() > d {
        let mut s = Scatter::of(&rows(pts, d, &keep), d);
        s.cov *= consistency(d, 0.975);
        let (_, dist) = s.distances(pts, d);
        (s, dist)
    } else {
        (raw, dist.clone())
    };
    Mcd { center: scatter.center, covariance: scatter.cov, distances, raw_distances: dist }
}
