//! Geometry of the sparse functional boxplot, its two-stage variant, and the
//! sparseness intensity field.

mod intensity;

use serde::{Deserialize, Serialize};

use crate::depth::{DepthReport, OutlyingnessReport};
use crate::fdata::{CompleteCurves, GridMask};
pub use intensity::{
    intensity_field, IntensityField, IntensityOptions, IntensityPanel, Normalization, CONTOUR_LEVELS,
    INTENSITY_CELLS,
};

pub const DEFAULT_FACTOR: f64 = 1.5;
/// Level of the dotted reference line of the sparseness panel.
pub const REFERENCE_LEVEL: f64 = 0.5;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum BoxplotError {
    #[error("need at least 2 curves, got {0}")]
    TooFewCurves(usize),
    #[error("fence factor must be positive, got {0}")]
    Factor(f64),
    #[error("stage 1 flagged {flagged} of {n} curves; fewer than 2 curves remain for the boxplot")]
    DegenerateRemainder { flagged: usize, n: usize },
    #[error("inputs are not aligned: {0}")]
    Mismatch(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoxplotOptions {
    /// Fences are the central envelope inflated by `factor` times its width.
    pub factor: f64,
    /// Bandwidth of the observed-proportion boundary; `None` means three
    /// grid spacings.
    pub boundary_bandwidth: Option<f64>,
}

impl Default for BoxplotOptions {
    fn default() -> Self {
        Self { factor: DEFAULT_FACTOR, boundary_bandwidth: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoxplotKind {
    Functional,
    TwoStage,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Flagged by directional outlyingness.
    Stage1,
    /// Outside the fences.
    Stage2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellTag {
    ObservedStage1,
    ObservedStage2,
    Missing,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Outlier {
    pub subject: usize,
    pub stage: Stage,
    /// `values[j][c]`, fitted where the cell is missing.
    pub values: Vec<Vec<f64>>,
    pub tags: Vec<Vec<CellTag>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsenessProfile {
    /// Fraction of central-region members missing at each grid point.
    pub proportion: Vec<f64>,
    /// Kernel-smoothed observed proportion 1 - s(t).
    pub observed_smooth: Vec<f64>,
    /// The smoothed observed proportion mapped into the envelope's height.
    pub boundary: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariableGeometry {
    pub name: String,
    pub median: Vec<f64>,
    pub median_observed: Vec<bool>,
    pub envelope_lower: Vec<f64>,
    pub envelope_upper: Vec<f64>,
    pub fence_lower: Vec<f64>,
    pub fence_upper: Vec<f64>,
    /// Pointwise range of the curves that are not outliers.
    pub whisker_lower: Vec<f64>,
    pub whisker_upper: Vec<f64>,
    pub sparseness: SparsenessProfile,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxplotGeometry {
    pub kind: BoxplotKind,
    pub grid: Vec<f64>,
    pub n: usize,
    pub factor: f64,
    /// Index of the deepest curve.
    pub median: usize,
    /// Central-region members, in index order.
    pub members: Vec<usize>,
    pub variables: Vec<VariableGeometry>,
    /// Sorted by subject index.
    pub outliers: Vec<Outlier>,
    pub reference_level: f64,
}

impl BoxplotGeometry {
    pub fn outlier_flags(&self) -> Vec<bool> {
        let mut f = vec![false; self.n];
        for o in &self.outliers {
            f[o.subject] = true;
        }
        f
    }

    pub fn outliers_of(&self, stage: Stage) -> Vec<usize> {
        self.outliers.iter().filter(|o| o.stage == stage).map(|o| o.subject).collect()
    }

    /// The central region this geometry was built on (for a two-stage plot,
    /// the region of the curves left after stage 1).
    pub fn central_region(&self) -> CentralRegion {
        CentralRegion {
            members: self.members.clone(),
            median: self.median,
            lower: self.variables.iter().map(|v| v.envelope_lower.clone()).collect(),
            upper: self.variables.iter().map(|v| v.envelope_upper.clone()).collect(),
        }
    }

    pub fn set_variable_names(&mut self, names: &[String]) {
        for (v, name) in self.variables.iter_mut().zip(names) {
            v.name = name.clone();
        }
    }
}

/// The 50% central region: the ceil(m/2) deepest of the candidate curves and
/// their pointwise envelope per variable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CentralRegion {
    pub members: Vec<usize>,
    /// Deepest candidate.
    pub median: usize,
    /// `lower[j][c]`, `upper[j][c]`.
    pub lower: Vec<Vec<f64>>,
    pub upper: Vec<Vec<f64>>,
}

fn check_aligned(curves: &CompleteCurves, depths: &DepthReport, mask: Option<&GridMask>) -> Result<(), BoxplotError> {
    if depths.values.len() != curves.n() {
        return Err(BoxplotError::Mismatch(format!(
            "{} depth values for {} curves",
            depths.values.len(),
            curves.n()
        )));
    }
    if let Some(m) = mask {
        if m.dims() != (curves.n(), curves.p(), curves.grid().len()) {
            return Err(BoxplotError::Mismatch(format!("mask of shape {:?}", m.dims())));
        }
    }
    Ok(())
}

fn region_of(curves: &CompleteCurves, depths: &DepthReport, candidates: &[usize]) -> CentralRegion {
    let mut order = candidates.to_vec();
    order.sort_by_key(|&i| depths.ranks[i]);
    let k = order.len().div_ceil(2);
    let median = order[0];
    let mut members = order[..k].to_vec();
    members.sort_unstable();
    let (p, len) = (curves.p(), curves.grid().len());
    let mut lower = vec![vec![f64::INFINITY; len]; p];
    let mut upper = vec![vec![f64::NEG_INFINITY; len]; p];
    for &i in &members {
        for j in 0..p {
            for (c, &v) in curves.curve(i, j).iter().enumerate() {
                lower[j][c] = lower[j][c].min(v);
                upper[j][c] = upper[j][c].max(v);
            }
        }
    }
    CentralRegion { members, median, lower, upper }
}

/// Central region of all curves, ranked by `depths`.
pub fn central_region(curves: &CompleteCurves, depths: &DepthReport) -> Result<CentralRegion, BoxplotError> {
    check_aligned(curves, depths, None)?;
    if curves.n() < 2 {
        return Err(BoxplotError::TooFewCurves(curves.n()));
    }
    let all: Vec<usize> = (0..curves.n()).collect();
    Ok(region_of(curves, depths, &all))
}

/// Nadaraya-Watson smoothing with a Gaussian kernel.
fn smooth(t: &[f64], y: &[f64], h: f64) -> Vec<f64> {
    t.iter()
        .map(|&s| {
            let (mut num, mut den) = (0.0, 0.0);
            for (&u, &v) in t.iter().zip(y) {
                let z = (u - s) / h;
                let k = (-0.5 * z * z).exp();
                num += k * v;
                den += k;
            }
            num / den
        })
        .collect()
}

/// Missing proportion among `members` for variable `j`, its smoothed
/// observed complement, and that complement mapped into `[lower, upper]`.
pub fn sparseness_profile(
    mask: Option<&GridMask>,
    members: &[usize],
    j: usize,
    grid: &[f64],
    lower: &[f64],
    upper: &[f64],
    bandwidth: Option<f64>,
) -> SparsenessProfile {
    let len = grid.len();
    let proportion: Vec<f64> = match mask {
        None => vec![0.0; len],
        Some(m) => (0..len)
            .map(|c| members.iter().filter(|&&i| !m.get(i, j, c)).count() as f64 / members.len() as f64)
            .collect(),
    };
    let observed: Vec<f64> = proportion.iter().map(|s| 1.0 - s).collect();
    let observed_smooth: Vec<f64> = if proportion.iter().all(|&s| s == 0.0) {
        observed
    } else {
        let spacing = (grid[len - 1] - grid[0]) / (len.max(2) - 1) as f64;
        let h = bandwidth.unwrap_or(3.0 * spacing);
        smooth(grid, &observed, h).into_iter().map(|v| v.clamp(0.0, 1.0)).collect()
    };
    let boundary = observed_smooth
        .iter()
        .zip(lower.iter().zip(upper))
        .map(|(o, (l, u))| u - (1.0 - o) * (u - l))
        .collect();
    SparsenessProfile { proportion, observed_smooth, boundary }
}

fn build(
    kind: BoxplotKind,
    curves: &CompleteCurves,
    depths: &DepthReport,
    stage1: &[usize],
    mask: Option<&GridMask>,
    opts: &BoxplotOptions,
) -> Result<BoxplotGeometry, BoxplotError> {
    let (n, p, len) = (curves.n(), curves.p(), curves.grid().len());
    if !(opts.factor > 0.0) {
        return Err(BoxplotError::Factor(opts.factor));
    }
    let mut is_stage1 = vec![false; n];
    stage1.iter().for_each(|&i| is_stage1[i] = true);
    let remainder: Vec<usize> = (0..n).filter(|&i| !is_stage1[i]).collect();
    if remainder.len() < 2 {
        return Err(BoxplotError::DegenerateRemainder { flagged: stage1.len(), n });
    }
    let region = region_of(curves, depths, &remainder);
    let f = opts.factor;
    let fence_lower: Vec<Vec<f64>> = (0..p)
        .map(|j| (0..len).map(|c| region.lower[j][c] - f * (region.upper[j][c] - region.lower[j][c])).collect())
        .collect();
    let fence_upper: Vec<Vec<f64>> = (0..p)
        .map(|j| (0..len).map(|c| region.upper[j][c] + f * (region.upper[j][c] - region.lower[j][c])).collect())
        .collect();
    let outside = |i: usize| {
        (0..p).any(|j| {
            curves
                .curve(i, j)
                .iter()
                .enumerate()
                .any(|(c, &v)| v < fence_lower[j][c] || v > fence_upper[j][c])
        })
    };
    let stage2: Vec<usize> = remainder.iter().copied().filter(|&i| outside(i)).collect();
    let mut stage_of = vec![None; n];
    stage1.iter().for_each(|&i| stage_of[i] = Some(Stage::Stage1));
    stage2.iter().for_each(|&i| stage_of[i] = Some(Stage::Stage2));

    let grid = curves.grid().points().to_vec();
    let observed = |i: usize, j: usize, c: usize| mask.is_none_or(|m| m.get(i, j, c));
    let variables = (0..p)
        .map(|j| {
            let mut wl = vec![f64::INFINITY; len];
            let mut wu = vec![f64::NEG_INFINITY; len];
            for &i in &remainder {
                if stage_of[i].is_some() {
                    continue;
                }
                for (c, &v) in curves.curve(i, j).iter().enumerate() {
                    wl[c] = wl[c].min(v);
                    wu[c] = wu[c].max(v);
                }
            }
            let sparseness = sparseness_profile(
                mask,
                &region.members,
                j,
                &grid,
                &region.lower[j],
                &region.upper[j],
                opts.boundary_bandwidth,
            );
            VariableGeometry {
                name: format!("X{}", j + 1),
                median: curves.curve(region.median, j).to_vec(),
                median_observed: (0..len).map(|c| observed(region.median, j, c)).collect(),
                envelope_lower: region.lower[j].clone(),
                envelope_upper: region.upper[j].clone(),
                fence_lower: fence_lower[j].clone(),
                fence_upper: fence_upper[j].clone(),
                whisker_lower: wl,
                whisker_upper: wu,
                sparseness,
            }
        })
        .collect();
    let outliers = (0..n)
        .filter_map(|i| {
            let stage = stage_of[i]?;
            let observed_tag = match stage {
                Stage::Stage1 => CellTag::ObservedStage1,
                Stage::Stage2 => CellTag::ObservedStage2,
            };
            Some(Outlier {
                subject: i,
                stage,
                values: (0..p).map(|j| curves.curve(i, j).to_vec()).collect(),
                tags: (0..p)
                    .map(|j| {
                        (0..len)
                            .map(|c| if observed(i, j, c) { observed_tag } else { CellTag::Missing })
                            .collect()
                    })
                    .collect(),
            })
        })
        .collect();
    Ok(BoxplotGeometry {
        kind,
        grid,
        n,
        factor: f,
        median: region.median,
        members: region.members,
        variables,
        outliers,
        reference_level: REFERENCE_LEVEL,
    })
}

/// Functional boxplot of (fitted) curves ranked by `depths`, with outliers
/// by the fence rule. `mask` marks observed cells; `None` means complete
/// data.
pub fn functional_boxplot(
    curves: &CompleteCurves,
    depths: &DepthReport,
    mask: Option<&GridMask>,
    opts: &BoxplotOptions,
) -> Result<BoxplotGeometry, BoxplotError> {
    check_aligned(curves, depths, mask)?;
    if curves.n() < 2 {
        return Err(BoxplotError::TooFewCurves(curves.n()));
    }
    build(BoxplotKind::Functional, curves, depths, &[], mask, opts)
}

/// Two-stage boxplot: curves flagged by directional outlyingness are removed
/// first, then the central region and fences are built on the remainder.
pub fn two_stage_boxplot(
    curves: &CompleteCurves,
    depths: &DepthReport,
    outl: &OutlyingnessReport,
    mask: Option<&GridMask>,
    opts: &BoxplotOptions,
) -> Result<BoxplotGeometry, BoxplotError> {
    check_aligned(curves, depths, mask)?;
    if outl.flagged.len() != curves.n() {
        return Err(BoxplotError::Mismatch(format!(
            "{} outlyingness flags for {} curves",
            outl.flagged.len(),
            curves.n()
        )));
    }
    if curves.n() < 2 {
        return Err(BoxplotError::TooFewCurves(curves.n()));
    }
    let stage1 = outl.outliers();
    if stage1.len() + 1 >= curves.n() {
        return Err(BoxplotError::DegenerateRemainder { flagged: stage1.len(), n: curves.n() });
    }
    let mut g = build(BoxplotKind::TwoStage, curves, depths, &stage1, mask, opts)?;
    if stage1.is_empty() {
        g.kind = BoxplotKind::Functional;
    }
    Ok(g)
}

#[cfg(test)]
mod tests;
