//! Kernel intensity of the missing cells inside the central region.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::CentralRegion;
use crate::fdata::{CompleteCurves, GridMask};

pub const INTENSITY_CELLS: usize = 100;
pub const CONTOUR_LEVELS: [f64; 3] = [0.25, 0.5, 0.75];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Divide by the maximum within each variable.
    #[default]
    PerVariable,
    /// Divide by the maximum over all variables.
    Global,
}

impl std::str::FromStr for Normalization {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "per_variable" | "per-variable" | "variable" => Ok(Self::PerVariable),
            "global" => Ok(Self::Global),
            _ => Err(format!("unknown normalization '{s}' (per_variable, global)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntensityOptions {
    pub normalization: Normalization,
    /// (time, value) bandwidths; `None` uses Silverman's rule per axis.
    pub bandwidths: Option<(f64, f64)>,
    pub contours: bool,
    /// Cells per axis.
    pub cells: usize,
}

impl Default for IntensityOptions {
    fn default() -> Self {
        Self { normalization: Normalization::PerVariable, bandwidths: None, contours: true, cells: INTENSITY_CELLS }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Contour {
    pub level: f64,
    /// Polylines of (time, value) points.
    pub lines: Vec<Vec<[f64; 2]>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntensityPanel {
    pub variable: usize,
    pub time_range: [f64; 2],
    pub value_range: [f64; 2],
    /// Number of time cells (columns) and value cells (rows).
    pub cols: usize,
    pub rows: usize,
    /// Normalized intensity, `rows x cols` row-major, row 0 at the lowest
    /// value. Zero outside the central envelope.
    pub values: Vec<f64>,
    pub events: usize,
    /// Integral of the unnormalized intensity over the clipped region.
    pub mass: f64,
    pub raw_max: f64,
    pub bandwidths: [f64; 2],
    pub contours: Vec<Contour>,
}

impl IntensityPanel {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Centre of a cell in data coordinates (time, value).
    pub fn cell_center(&self, row: usize, col: usize) -> [f64; 2] {
        let dx = (self.time_range[1] - self.time_range[0]) / self.cols as f64;
        let dy = (self.value_range[1] - self.value_range[0]) / self.rows as f64;
        [self.time_range[0] + (col as f64 + 0.5) * dx, self.value_range[0] + (row as f64 + 0.5) * dy]
    }
}

/// Per-variable intensity panels. With no missing cell among the central
/// members the field is zero and `panels` is empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntensityField {
    pub normalization: Normalization,
    pub panels: Vec<IntensityPanel>,
}

impl IntensityField {
    pub fn is_zero(&self) -> bool {
        self.panels.iter().all(|p| p.events == 0)
    }

    pub fn total_mass(&self) -> f64 {
        self.panels.iter().map(|p| p.mass).sum()
    }
}

fn silverman(x: &[f64]) -> f64 {
    let m = x.len() as f64;
    if x.len() < 2 {
        return 0.0;
    }
    let mean = x.iter().sum::<f64>() / m;
    let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt();
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let q = |f: f64| {
        let pos = f * (m - 1.0);
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        s[lo] + (pos - lo as f64) * (s[hi] - s[lo])
    };
    let iqr = q(0.75) - q(0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * m.powf(-0.2)
}

fn gaussian_weights(centers: &[f64], events: &[f64], h: f64) -> DMatrix<f64> {
    let norm = 1.0 / (h * (2.0 * std::f64::consts::PI).sqrt());
    DMatrix::from_fn(centers.len(), events.len(), |a, k| {
        let z = (centers[a] - events[k]) / h;
        norm * (-0.5 * z * z).exp()
    })
}

/// Intensity of the (time, fitted value) locations of missing cells of the
/// central-region members, on a grid over the region's bounding rectangle,
/// clipped to the region.
pub fn intensity_field(
    mask: &GridMask,
    fit: &CompleteCurves,
    region: &CentralRegion,
    opts: &IntensityOptions,
) -> IntensityField {
    let (_, p, len) = mask.dims();
    let grid = fit.grid();
    let t = grid.points();
    let cells = opts.cells.max(2);
    let mut panels: Vec<IntensityPanel> = (0..p)
        .map(|j| {
            let (mut et, mut ev) = (Vec::new(), Vec::new());
            for &i in &region.members {
                for c in 0..len {
                    if !mask.get(i, j, c) {
                        et.push(t[c]);
                        ev.push(fit.get(i, j, c));
                    }
                }
            }
            let lo = region.lower[j].iter().copied().fold(f64::INFINITY, f64::min);
            let mut hi = region.upper[j].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if hi <= lo {
                hi = lo + 1e-9 * (1.0 + lo.abs());
            }
            let (t0, t1) = (grid.start(), grid.end());
            let dx = (t1 - t0) / cells as f64;
            let dy = (hi - lo) / cells as f64;
            let xs: Vec<f64> = (0..cells).map(|a| t0 + (a as f64 + 0.5) * dx).collect();
            let ys: Vec<f64> = (0..cells).map(|b| lo + (b as f64 + 0.5) * dy).collect();
            let (hx, hy) = opts.bandwidths.unwrap_or_else(|| {
                let fallback = |h: f64, d: f64| if h > 0.0 { h } else { 2.0 * d };
                (fallback(silverman(&et), dx), fallback(silverman(&ev), dy))
            });
            let mut values = vec![0.0; cells * cells];
            let mut mass = 0.0;
            if !et.is_empty() {
                let kx = gaussian_weights(&xs, &et, hx);
                let ky = gaussian_weights(&ys, &ev, hy);
                let raw = &ky * kx.transpose();
                let lower: Vec<f64> = xs.iter().map(|&x| grid.interpolate(&region.lower[j], x)).collect();
                let upper: Vec<f64> = xs.iter().map(|&x| grid.interpolate(&region.upper[j], x)).collect();
                for b in 0..cells {
                    for a in 0..cells {
                        if ys[b] >= lower[a] && ys[b] <= upper[a] {
                            let v = raw[(b, a)].max(0.0);
                            values[b * cells + a] = v;
                            mass += v * dx * dy;
                        }
                    }
                }
            }
            let raw_max = values.iter().copied().fold(0.0, f64::max);
            IntensityPanel {
                variable: j,
                time_range: [t0, t1],
                value_range: [lo, hi],
                cols: cells,
                rows: cells,
                values,
                events: et.len(),
                mass,
                raw_max,
                bandwidths: [hx, hy],
                contours: Vec::new(),
            }
        })
        .collect();

    if panels.iter().all(|p| p.events == 0) {
        return IntensityField { normalization: opts.normalization, panels: Vec::new() };
    }
    let global = panels.iter().map(|p| p.raw_max).fold(0.0, f64::max);
    for panel in &mut panels {
        let scale = match opts.normalization {
            Normalization::PerVariable => panel.raw_max,
            Normalization::Global => global,
        };
        if scale > 0.0 {
            panel.values.iter_mut().for_each(|v| *v /= scale);
        }
        if opts.contours && panel.raw_max > 0.0 {
            panel.contours = CONTOUR_LEVELS
                .iter()
                .map(|&level| Contour { level, lines: contour_lines(panel, level) })
                .filter(|c| !c.lines.is_empty())
                .collect();
        }
    }
    IntensityField { normalization: opts.normalization, panels }
}

/// Edge of the cell-centre lattice: horizontal edges join (r, c)-(r, c+1),
/// vertical ones (r, c)-(r+1, c).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Edge {
    H(usize, usize),
    V(usize, usize),
}

/// Marching squares on the cell-centre lattice, chained into polylines.
pub(crate) fn contour_lines(panel: &IntensityPanel, level: f64) -> Vec<Vec<[f64; 2]>> {
    let (rows, cols) = (panel.rows, panel.cols);
    let v = |r: usize, c: usize| panel.get(r, c);
    let mut segments: Vec<(Edge, Edge)> = Vec::new();
    for r in 0..rows - 1 {
        for c in 0..cols - 1 {
            let (bl, br, tr, tl) = (v(r, c), v(r, c + 1), v(r + 1, c + 1), v(r + 1, c));
            let idx = (bl >= level) as u8 | ((br >= level) as u8) << 1 | ((tr >= level) as u8) << 2 | ((tl >= level) as u8) << 3;
            let (b, rt, t, l) = (Edge::H(r, c), Edge::V(r, c + 1), Edge::H(r + 1, c), Edge::V(r, c));
            let center_high = 0.25 * (bl + br + tr + tl) >= level;
            match idx {
                0 | 15 => {}
                1 | 14 => segments.push((l, b)),
                2 | 13 => segments.push((b, rt)),
                3 | 12 => segments.push((l, rt)),
                4 | 11 => segments.push((rt, t)),
                6 | 9 => segments.push((b, t)),
                7 | 8 => segments.push((l, t)),
                5 => {
                    if center_high {
                        segments.push((l, t));
                        segments.push((b, rt));
                    } else {
                        segments.push((l, b));
                        segments.push((rt, t));
                    }
                }
                10 => {
                    if center_high {
                        segments.push((l, b));
                        segments.push((rt, t));
                    } else {
                        segments.push((l, t));
                        segments.push((b, rt));
                    }
                }
                _ => unreachable!(),
            }
        }
    }
    let point = |e: Edge| -> [f64; 2] {
        let ((r0, c0), (r1, c1)) = match e {
            Edge::H(r, c) => ((r, c), (r, c + 1)),
            Edge::V(r, c) => ((r, c), (r + 1, c)),
        };
        let (a, b) = (v(r0, c0), v(r1, c1));
        let f = if a == b { 0.5 } else { ((level - a) / (b - a)).clamp(0.0, 1.0) };
        let p0 = panel.cell_center(r0, c0);
        let p1 = panel.cell_center(r1, c1);
        [p0[0] + f * (p1[0] - p0[0]), p0[1] + f * (p1[1] - p0[1])]
    };

    let mut at: BTreeMap<Edge, Vec<usize>> = BTreeMap::new();
    for (k, &(a, b)) in segments.iter().enumerate() {
        at.entry(a).or_default().push(k);
        at.entry(b).or_default().push(k);
    }
    let mut used = vec![false; segments.len()];
    let next = |e: Edge, from: usize, used: &[bool]| -> Option<usize> {
        at[&e].iter().copied().find(|&k| k != from && !used[k])
    };
    let mut lines = Vec::new();
    // open chains first (start at an edge touched once), then closed loops
    let starts: Vec<usize> = (0..segments.len())
        .filter(|&k| at[&segments[k].0].len() == 1 || at[&segments[k].1].len() == 1)
        .chain(0..segments.len())
        .collect();
    for k in starts {
        if used[k] {
            continue;
        }
        used[k] = true;
        let (a, b) = segments[k];
        let (first, mut tail) = if at[&a].len() == 1 { (a, b) } else { (b, a) };
        let mut edges = vec![first, tail];
        let mut cur = k;
        while let Some(s) = next(tail, cur, &used) {
            used[s] = true;
            let (x, y) = segments[s];
            tail = if x == tail { y } else { x };
            edges.push(tail);
            cur = s;
        }
        lines.push(edges.into_iter().map(point).collect());
    }
    lines
}
