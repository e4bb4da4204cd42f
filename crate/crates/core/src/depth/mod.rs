//! Functional depths: multivariate functional halfspace depth (MFHD), its
//! revised versions for fitted curves with confidence bands, modified band
//! depth, and directional outlyingness.

pub mod halfspace;
mod outlyingness;

use serde::{Deserialize, Serialize};

use crate::fdata::{CompleteCurves, FdataError};
use halfspace::{DirectionSet, HalfspaceError, DEFAULT_DIRECTION_SEED};
pub use halfspace::{halfspace_depth, DEFAULT_NDIRS};
pub use outlyingness::{
    directional_outlyingness, directional_outlyingness_with, hardin_rocke_m, mcd, CutoffRule, Mcd, OutlyingnessReport, DEFAULT_CUTOFF_Q,
};

#[derive(Debug, thiserror::Error)]
pub enum DepthError {
    #[error(transparent)]
    Halfspace(#[from] HalfspaceError),
    #[error("the depth region D_beta (beta = {beta}) is empty at every grid point; try a smaller beta")]
    EmptyRegion { beta: f64 },
    #[error("beta must lie in (0, 1], got {0}")]
    Beta(f64),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("need more than {need} curves, got {n}")]
    TooFewCurves { n: usize, need: usize },
    #[error(transparent)]
    Data(#[from] FdataError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthMethod {
    /// MFHD of fully observed curves, e.g. the true signal.
    Mfhd,
    Mbd,
    MfhdMfpca,
    MfhdBmfpca,
    RmfhdAw,
    RmfhdNaw,
    RmfhdDm,
}

impl DepthMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Mfhd => "mfhd",
            Self::Mbd => "mbd",
            Self::MfhdMfpca => "mfhd_mfpca",
            Self::MfhdBmfpca => "mfhd_bmfpca",
            Self::RmfhdAw => "rmfhd_aw",
            Self::RmfhdNaw => "rmfhd_naw",
            Self::RmfhdDm => "rmfhd_dm",
        }
    }
}

impl std::fmt::Display for DepthMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for DepthMethod {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        [
            Self::Mfhd,
            Self::Mbd,
            Self::MfhdMfpca,
            Self::MfhdBmfpca,
            Self::RmfhdAw,
            Self::RmfhdNaw,
            Self::RmfhdDm,
        ]
        .into_iter()
        .find(|m| m.as_str() == s)
        .ok_or_else(|| format!("unknown depth method '{s}'"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthReport {
    pub method: DepthMethod,
    pub values: Vec<f64>,
    /// 1 = deepest; ties keep index order.
    pub ranks: Vec<usize>,
}

impl DepthReport {
    pub fn new(method: DepthMethod, values: Vec<f64>) -> Self {
        let ranks = ranks(&values);
        Self { method, values, ranks }
    }

    /// Subject indices from deepest to least deep.
    pub fn order(&self) -> Vec<usize> {
        let mut order = vec![0; self.ranks.len()];
        for (i, &r) in self.ranks.iter().enumerate() {
            order[r - 1] = i;
        }
        order
    }
}

/// Ranks with 1 for the largest value; equal values are ranked by index.
pub fn ranks(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let mut r = vec![0; values.len()];
    for (k, i) in idx.into_iter().enumerate() {
        r[i] = k + 1;
    }
    r
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightKind {
    #[default]
    Constant,
    Volume,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WeightScheme {
    pub kind: WeightKind,
    /// Depth level of the region D_beta for volume weights. `None` means
    /// ceil(0.25 n) / n.
    pub beta: Option<f64>,
}

impl WeightScheme {
    pub fn constant() -> Self {
        Self::default()
    }

    pub fn volume(beta: Option<f64>) -> Self {
        Self { kind: WeightKind::Volume, beta }
    }
}

pub fn default_beta(n: usize) -> f64 {
    (0.25 * n as f64).ceil() / n as f64
}

/// Cell half-widths (t_{c+1} - t_{c-1}) / 2 with t_0 = t_1, t_{N+1} = t_N.
fn cell_widths(t: &[f64]) -> Vec<f64> {
    let last = t.len() - 1;
    (0..t.len())
        .map(|c| 0.5 * (t[(c + 1).min(last)] - t[c.saturating_sub(1)]))
        .collect()
}

fn normalize(mut w: Vec<f64>) -> Vec<f64> {
    let s: f64 = w.iter().sum();
    if s > 0.0 {
        w.iter_mut().for_each(|x| *x /= s);
    } else {
        let k = w.len() as f64;
        w.iter_mut().for_each(|x| *x = 1.0 / k);
    }
    w
}

/// Normalized constant time weights of a grid.
pub fn constant_weights(t: &[f64]) -> Vec<f64> {
    normalize(cell_widths(t))
}

/// The `n x p` points of all curves at cell `c`, row-major.
fn cell_points(curves: &CompleteCurves, c: usize) -> Vec<f64> {
    let (n, p) = (curves.n(), curves.p());
    let mut out = Vec::with_capacity(n * p);
    for i in 0..n {
        for j in 0..p {
            out.push(curves.get(i, j, c));
        }
    }
    out
}

fn directions_for(p: usize, ndirs: usize) -> Result<Option<DirectionSet>, DepthError> {
    if p < 3 {
        return Ok(None);
    }
    if ndirs < 1 {
        return Err(HalfspaceError::NoDirections.into());
    }
    Ok(Some(DirectionSet::quasi_random(p, ndirs, DEFAULT_DIRECTION_SEED)))
}

/// Normalized cell weights W_c computed from `reference`.
pub fn cell_weights(reference: &CompleteCurves, w: &WeightScheme, ndirs: usize) -> Result<Vec<f64>, DepthError> {
    let t = reference.grid().points();
    match w.kind {
        WeightKind::Constant => Ok(constant_weights(t)),
        WeightKind::Volume => {
            let n = reference.n();
            let p = reference.p();
            let beta = w.beta.unwrap_or_else(|| default_beta(n));
            if !(beta > 0.0 && beta <= 1.0) {
                return Err(DepthError::Beta(beta));
            }
            let dirs = directions_for(p, ndirs)?;
            let widths = cell_widths(t);
            let vols = crate::par_map(t.len(), |c| {
                let pts = cell_points(reference, c);
                let d = halfspace::depths(&pts, &pts, p, dirs.as_ref());
                let inner: Vec<f64> = pts
                    .chunks_exact(p)
                    .zip(&d)
                    .filter(|(_, &dv)| dv >= beta - 1e-12)
                    .flat_map(|(q, _)| q.iter().copied())
                    .collect();
                if inner.is_empty() {
                    None
                } else {
                    Some(region_volume(&inner, p, dirs.as_ref()))
                }
            });
            if vols.iter().all(Option::is_none) {
                return Err(DepthError::EmptyRegion { beta });
            }
            let raw: Vec<f64> = vols.iter().zip(&widths).map(|(v, w)| v.unwrap_or(0.0) * 2.0 * w).collect();
            if raw.iter().all(|&v| v <= 0.0) {
                // every region is degenerate (zero volume): fall back to time weights
                return Ok(normalize(widths));
            }
            Ok(normalize(raw))
        }
    }
}

/// Volume of the convex hull of `pts` (row-major, `p` columns): exact for
/// p <= 2, quasi-Monte Carlo over the direction-supported outer polytope
/// otherwise.
fn region_volume(pts: &[f64], p: usize, dirs: Option<&DirectionSet>) -> f64 {
    match p {
        1 => {
            let (lo, hi) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
            hi - lo
        }
        2 => hull_area(pts),
        _ => {
            let dirs = dirs.expect("directions for p >= 3");
            // support values in +u (first half) and -u (second half)
            let k = dirs.len().min(256);
            let mut support = vec![f64::NEG_INFINITY; 2 * k];
            for d in 0..k {
                let u = dirs.direction(d);
                for q in pts.chunks_exact(p) {
                    let v: f64 = q.iter().zip(u).map(|(a, b)| a * b).sum();
                    support[d] = support[d].max(v);
                    support[k + d] = support[k + d].max(-v);
                }
            }
            let mut lo = vec![f64::INFINITY; p];
            let mut hi = vec![f64::NEG_INFINITY; p];
            for q in pts.chunks_exact(p) {
                for j in 0..p {
                    lo[j] = lo[j].min(q[j]);
                    hi[j] = hi[j].max(q[j]);
                }
            }
            let box_vol: f64 = lo.iter().zip(&hi).map(|(a, b)| b - a).product();
            if box_vol <= 0.0 {
                return 0.0;
            }
            const SAMPLES: usize = 4096;
            let halton = DirectionSet::halton_points(p, SAMPLES);
            let mut y = vec![0.0; p];
            let inside = halton
                .chunks_exact(p)
                .filter(|h| {
                    for j in 0..p {
                        y[j] = lo[j] + h[j] * (hi[j] - lo[j]);
                    }
                    (0..k).all(|d| {
                        let v: f64 = y.iter().zip(dirs.direction(d)).map(|(a, b)| a * b).sum();
                        v <= support[d] && -v <= support[k + d]
                    })
                })
                .count();
            box_vol * inside as f64 / SAMPLES as f64
        }
    }
}

fn hull_area(pts: &[f64]) -> f64 {
    let mut v: Vec<(f64, f64)> = pts.chunks_exact(2).map(|q| (q[0], q[1])).collect();
    v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    v.dedup();
    if v.len() < 3 {
        return 0.0;
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0);
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(2 * v.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &(f64, f64)>> =
            if pass == 0 { Box::new(v.iter()) } else { Box::new(v.iter().rev()) };
        for &q in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], q) <= 0.0 {
                hull.pop();
            }
            hull.push(q);
        }
        hull.pop();
    }
    let m = hull.len();
    0.5 * (0..m)
        .map(|i| {
            let (a, b) = (hull[i], hull[(i + 1) % m]);
            a.0 * b.1 - a.1 * b.0
        })
        .sum::<f64>()
        .abs()
}

fn check_same_shape(a: &CompleteCurves, b: &CompleteCurves, what: &str) -> Result<(), DepthError> {
    if a.p() != b.p() || a.grid() != b.grid() {
        return Err(DepthError::Dimension(format!(
            "{what}: p {} vs {}, grid of {} vs {} points",
            a.p(),
            b.p(),
            a.grid().len(),
            b.grid().len()
        )));
    }
    Ok(())
}

/// MFHD of each curve in `queries` with respect to the sample `reference`,
/// using precomputed cell weights.
pub fn mfhd_against(
    reference: &CompleteCurves,
    queries: &CompleteCurves,
    weights: &[f64],
    ndirs: usize,
) -> Result<Vec<f64>, DepthError> {
    check_same_shape(reference, queries, "mfhd")?;
    if reference.n() == 0 {
        return Err(HalfspaceError::Empty.into());
    }
    let p = reference.p();
    let dirs = directions_for(p, ndirs)?;
    let per_cell = crate::par_map(weights.len(), |c| {
        let r = cell_points(reference, c);
        let q = cell_points(queries, c);
        halfspace::depths(&r, &q, p, dirs.as_ref())
    });
    let mut out = vec![0.0; queries.n()];
    for (d, &w) in per_cell.iter().zip(weights) {
        for (o, v) in out.iter_mut().zip(d) {
            *o += w * v;
        }
    }
    out.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    Ok(out)
}

/// Multivariate functional halfspace depth of every curve in the sample.
pub fn mfhd(curves: &CompleteCurves, w: &WeightScheme, ndirs: usize) -> Result<DepthReport, DepthError> {
    let weights = cell_weights(curves, w, ndirs)?;
    let values = mfhd_against(curves, curves, &weights, ndirs)?;
    Ok(DepthReport::new(DepthMethod::Mfhd, values))
}

/// Modified band depth with bands of two curves (inclusive). For several
/// variables the per-variable depths are averaged.
pub fn mbd(curves: &CompleteCurves) -> DepthReport {
    let (n, p, len) = (curves.n(), curves.p(), curves.grid().len());
    let mut values = vec![0.0; n];
    if n < 2 {
        values.iter_mut().for_each(|v| *v = 1.0);
        return DepthReport::new(DepthMethod::Mbd, values);
    }
    let pairs = (n * (n - 1) / 2) as f64;
    let choose2 = |k: usize| (k * k.saturating_sub(1) / 2) as f64;
    let mut col = vec![0.0; n];
    for j in 0..p {
        for c in 0..len {
            for (i, v) in col.iter_mut().enumerate() {
                *v = curves.get(i, j, c);
            }
            let mut sorted = col.clone();
            sorted.sort_by(f64::total_cmp);
            for (i, &x) in col.iter().enumerate() {
                let below = sorted.partition_point(|&v| v < x);
                let above = n - sorted.partition_point(|&v| v <= x);
                values[i] += (pairs - choose2(below) - choose2(above)) / pairs;
            }
        }
    }
    let scale = (p * len) as f64;
    values.iter_mut().for_each(|v| *v /= scale);
    DepthReport::new(DepthMethod::Mbd, values)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RevisedVariant {
    /// Equal weights over the fit, upper and lower curve depths.
    Aw,
    /// Weights 1/2, 1/4, 1/4.
    Naw,
    /// MFHD of the 2p-variate (upper, lower) band curves.
    Dm,
}

impl RevisedVariant {
    pub fn method(self) -> DepthMethod {
        match self {
            Self::Aw => DepthMethod::RmfhdAw,
            Self::Naw => DepthMethod::RmfhdNaw,
            Self::Dm => DepthMethod::RmfhdDm,
        }
    }
}

impl std::str::FromStr for RevisedVariant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "aw" => Ok(Self::Aw),
            "naw" => Ok(Self::Naw),
            "dm" => Ok(Self::Dm),
            _ => Err(format!("unknown revised depth variant '{s}' (aw, naw, dm)")),
        }
    }
}

/// Revised MFHD of fitted curves that takes their confidence bands into
/// account.
pub fn revised_depth(
    fit: &CompleteCurves,
    upper: &CompleteCurves,
    lower: &CompleteCurves,
    variant: RevisedVariant,
    w: &WeightScheme,
    ndirs: usize,
) -> Result<DepthReport, DepthError> {
    Ok(revised_depths(fit, upper, lower, &[variant], w, ndirs)?.remove(0))
}

/// Several revised depths at once; aw and naw share their component depths.
pub fn revised_depths(
    fit: &CompleteCurves,
    upper: &CompleteCurves,
    lower: &CompleteCurves,
    variants: &[RevisedVariant],
    w: &WeightScheme,
    ndirs: usize,
) -> Result<Vec<DepthReport>, DepthError> {
    check_same_shape(fit, upper, "upper band")?;
    check_same_shape(fit, lower, "lower band")?;
    if fit.n() != upper.n() || fit.n() != lower.n() {
        return Err(DepthError::Dimension(format!(
            "band curve counts {} / {} differ from {} fitted curves",
            upper.n(),
            lower.n(),
            fit.n()
        )));
    }
    let n = fit.n();
    let mut components: Option<Vec<f64>> = None;
    let mut out = Vec::with_capacity(variants.len());
    for &variant in variants {
        let values = match variant {
            RevisedVariant::Dm => {
                let stacked = upper.stack_variables(lower)?;
                mfhd(&stacked, w, ndirs)?.values
            }
            RevisedVariant::Aw | RevisedVariant::Naw => {
                if components.is_none() {
                    let reference = fit.concat_subjects(&[upper, lower])?;
                    let weights = cell_weights(&reference, w, ndirs)?;
                    components = Some(mfhd_against(&reference, &reference, &weights, ndirs)?);
                }
                let all = components.as_ref().expect("computed above");
                let (a, b) = if variant == RevisedVariant::Aw { (1.0 / 3.0, 1.0 / 3.0) } else { (0.5, 0.25) };
                (0..n).map(|i| a * all[i] + b * (all[n + i] + all[2 * n + i])).collect()
            }
        };
        out.push(DepthReport::new(variant.method(), values));
    }
    Ok(out)
}
