//! Simulation studies: depth choice by Spearman correlation, outlier
//! detection rates for the two boxplot variants, and empirical coverage of
//! the pointwise fit intervals.
//!
//! Every replication draws from its own seeded streams and the results are
//! folded in replication order, so reports do not depend on thread count.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::boxplot::{functional_boxplot, two_stage_boxplot, BoxplotError, BoxplotOptions};
use crate::depth::{directional_outlyingness_with, mfhd, CutoffRule, revised_depths, DepthError, DepthMethod, RevisedVariant, WeightScheme, DEFAULT_CUTOFF_Q, DEFAULT_NDIRS};
use crate::fdata::{CompleteCurves, FdataError, Grid, GridMask, SparseSampleSet};
use crate::fpca::{bmfpca_fit_prepared, fit_mfpca_weighted, mfpca_fit_curves, FitResult, FpcaError, FpcaOptions, PreparedData};
use crate::seeding;
use crate::simgen::{generate, sparsify, SimConfig, SimError, SparsifyConfig, SparsityKind};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("invalid study configuration: {0}")]
    Config(String),
    #[error("rank vectors differ in length ({0} vs {1})")]
    Length(usize, usize),
    #[error("not a permutation of 1..{0}")]
    NotPermutation(usize),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Fpca(#[from] FpcaError),
    #[error(transparent)]
    Depth(#[from] DepthError),
    #[error(transparent)]
    Boxplot(#[from] BoxplotError),
    #[error(transparent)]
    Data(#[from] FdataError),
}

/// Spearman coefficient of two rankings, `1 - 6 sum d^2 / (n (n^2 - 1))`.
pub fn spearman(a: &[usize], b: &[usize]) -> Result<f64, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::Length(a.len(), b.len()));
    }
    let n = a.len();
    for r in [a, b] {
        let mut seen = vec![false; n];
        for &k in r {
            if k == 0 || k > n || std::mem::replace(&mut seen[k - 1], true) {
                return Err(EvalError::NotPermutation(n));
            }
        }
    }
    if n < 2 {
        return Ok(1.0);
    }
    let d2: f64 = a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum();
    let nf = n as f64;
    Ok(1.0 - 6.0 * d2 / (nf * (nf * nf - 1.0)))
}

/// Correct and false detection rates in percent. `p_c` is 0 when there are
/// no true outliers and `p_f` is 0 when there are no clean curves.
pub fn detection_rates(flags: &[bool], truth: &[bool]) -> (f64, f64) {
    let (mut tp, mut pos, mut fp, mut neg) = (0usize, 0usize, 0usize, 0usize);
    for (&f, &t) in flags.iter().zip(truth) {
        if t {
            pos += 1;
            tp += f as usize;
        } else {
            neg += 1;
            fp += f as usize;
        }
    }
    let pct = |a: usize, b: usize| if b == 0 { 0.0 } else { 100.0 * a as f64 / b as f64 };
    (pct(tp, pos), pct(fp, neg))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    pub models: Vec<u8>,
    pub kinds: Vec<SparsityKind>,
    pub p_curves: Vec<f64>,
    pub p_sparse: f64,
    pub replications: usize,
    pub n: usize,
    pub p: usize,
    pub grid_len: usize,
    pub contamination: f64,
    pub seed: u64,
    /// Depth study only: the candidate rankings.
    pub methods: Vec<DepthMethod>,
    pub bootstrap: usize,
    pub alpha: f64,
    pub ndirs: usize,
    pub weights: WeightScheme,
    pub cutoff_q: f64,
    pub cutoff_rule: CutoffRule,
    pub factor: f64,
    pub fpca: FpcaOptions,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            models: vec![1],
            kinds: vec![SparsityKind::Point],
            p_curves: vec![0.2],
            p_sparse: 1.0,
            replications: 100,
            n: 100,
            p: 3,
            grid_len: 50,
            contamination: 0.1,
            seed: 1,
            methods: vec![
                DepthMethod::MfhdMfpca,
                DepthMethod::MfhdBmfpca,
                DepthMethod::RmfhdAw,
                DepthMethod::RmfhdNaw,
                DepthMethod::RmfhdDm,
            ],
            bootstrap: 100,
            alpha: 0.05,
            ndirs: DEFAULT_NDIRS,
            weights: WeightScheme::constant(),
            cutoff_q: DEFAULT_CUTOFF_Q,
            cutoff_rule: CutoffRule::ChiSquare,
            factor: crate::boxplot::DEFAULT_FACTOR,
            fpca: FpcaOptions::default(),
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: String| Err(EvalError::Config(m));
        if self.replications == 0 {
            return bad("replications must be at least 1".into());
        }
        if self.models.is_empty() || self.kinds.is_empty() || self.p_curves.is_empty() {
            return bad("models, kinds and p_curves must be nonempty".into());
        }
        if let Some(m) = self.models.iter().find(|m| !(1..=8).contains(*m)) {
            return bad(format!("model {m} is not in 1..8"));
        }
        if let Some(pc) = self.p_curves.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return bad(format!("p_curve {pc} is not in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.p_sparse) {
            return bad(format!("p_sparse {} is not in [0, 1]", self.p_sparse));
        }
        if self.n < 4 || self.p == 0 || self.grid_len < 2 {
            return bad("need n >= 4, p >= 1 and at least 2 grid points".into());
        }
        if self.bootstrap == 0 {
            return bad("bootstrap count must be at least 1".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha {} is not in (0, 1)", self.alpha));
        }
        if self.ndirs == 0 {
            return bad("ndirs must be positive".into());
        }
        Ok(())
    }

    fn grid(&self) -> Result<Grid, EvalError> {
        Ok(Grid::equidistant(self.grid_len, 0.0, 1.0)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StudyKind {
    Depth,
    Detection,
    Coverage,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpearmanSummary {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionSummary {
    /// `None` for models without outliers.
    pub mean_pc: Option<f64>,
    pub sd_pc: Option<f64>,
    pub mean_pf: f64,
    pub sd_pf: f64,
    /// Per replication, `None` where the replication failed twice.
    pub pc: Vec<Option<f64>>,
    pub pf: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalCell {
    pub model: u8,
    pub kind: SparsityKind,
    pub p_curve: f64,
    pub method: String,
    pub replications: usize,
    /// Replications excluded after a failed retry.
    pub missing: usize,
    /// Per-replication Spearman coefficient or coverage.
    pub values: Vec<Option<f64>>,
    pub spearman: Option<SpearmanSummary>,
    pub detection: Option<DetectionSummary>,
    /// Pooled fraction of missing cells inside the interval.
    pub coverage: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub study: StudyKind,
    pub config: StudyConfig,
    pub alpha: f64,
    pub cells: Vec<EvalCell>,
}

impl EvalReport {
    pub fn cell(&self, model: u8, kind: SparsityKind, p_curve: f64, method: &str) -> Option<&EvalCell> {
        self.cells
            .iter()
            .find(|c| c.model == model && c.kind == kind && c.p_curve == p_curve && c.method == method)
    }

    /// One row per cell; detection tables also carry Table-1 style
    /// "mean (sd)" columns.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let head: &[&str] = match self.study {
            StudyKind::Depth => &["model", "kind", "p_curve", "method", "replications", "missing", "median", "q1", "q3", "mean"],
            StudyKind::Detection => &[
                "model", "kind", "p_curve", "method", "replications", "missing", "mean_pc", "sd_pc", "mean_pf", "sd_pf", "p_c", "p_f",
            ],
            StudyKind::Coverage => &["model", "kind", "p_curve", "method", "replications", "missing", "alpha", "coverage", "mean_replication"],
        };
        w.write_record(head).expect("in-memory csv");
        let f = |x: f64| format!("{x:.6}");
        let opt = |x: Option<f64>| x.map(f).unwrap_or_else(|| "NA".into());
        for c in &self.cells {
            let mut row = vec![
                c.model.to_string(),
                kind_name(c.kind).into(),
                format!("{}", c.p_curve),
                c.method.clone(),
                c.replications.to_string(),
                c.missing.to_string(),
            ];
            match self.study {
                StudyKind::Depth => {
                    let s = c.spearman.as_ref();
                    row.extend([s.map(|s| s.median), s.map(|s| s.q1), s.map(|s| s.q3), s.map(|s| s.mean)].map(opt));
                }
                StudyKind::Detection => {
                    let d = c.detection.as_ref().expect("detection cell");
                    let table = |m: Option<f64>, s: Option<f64>| match (m, s) {
                        (Some(m), Some(s)) => format!("{m:.1} ({s:.1})"),
                        _ => "NA".into(),
                    };
                    row.extend([opt(d.mean_pc), opt(d.sd_pc), f(d.mean_pf), f(d.sd_pf)]);
                    row.push(table(d.mean_pc, d.sd_pc));
                    row.push(table(Some(d.mean_pf), Some(d.sd_pf)));
                }
                StudyKind::Coverage => {
                    let present: Vec<f64> = c.values.iter().flatten().copied().collect();
                    row.extend([f(self.alpha), opt(c.coverage), opt(mean_sd(&present).map(|m| m.0))]);
                }
            }
            w.write_record(&row).expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf8 csv")
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Short human-readable table for logs.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        for c in &self.cells {
            let _ = write!(out, "model {} {} p_curve {:.2} {:<12}", c.model, kind_name(c.kind), c.p_curve, c.method);
            if let Some(s) = &c.spearman {
                let _ = write!(out, " median {:.4} [{:.4}, {:.4}]", s.median, s.q1, s.q3);
            }
            if let Some(d) = &c.detection {
                let pc = d.mean_pc.map(|m| format!("{m:.1} ({:.1})", d.sd_pc.unwrap_or(0.0))).unwrap_or_else(|| "NA".into());
                let _ = write!(out, " p_c {pc} p_f {:.1} ({:.1})", d.mean_pf, d.sd_pf);
            }
            if let Some(v) = c.coverage {
                let _ = write!(out, " coverage {v:.4}");
            }
            let _ = writeln!(out, " missing {}", c.missing);
        }
        out
    }
}

fn kind_name(k: SparsityKind) -> &'static str {
    match k {
        SparsityKind::Point => "point",
        SparsityKind::Peak => "peak",
        SparsityKind::Partial => "partial",
    }
}

/// Type-7 quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = q * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Mean and sample standard deviation (0 for a single value).
fn mean_sd(v: &[f64]) -> Option<(f64, f64)> {
    if v.is_empty() {
        return None;
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let sd = if v.len() < 2 { 0.0 } else { (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() };
    Some((m, sd))
}

fn spearman_summary(values: &[Option<f64>]) -> Option<SpearmanSummary> {
    let mut v: Vec<f64> = values.iter().flatten().copied().collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    Some(SpearmanSummary {
        median: quantile(&v, 0.5),
        q1: quantile(&v, 0.25),
        q3: quantile(&v, 0.75),
        mean: mean_sd(&v).map(|m| m.0).unwrap_or(f64::NAN),
    })
}

/// One simulated, sparsified and fitted data set.
struct Replicate {
    data: crate::simgen::LabeledDataset,
    mask: GridMask,
    prepared: std::sync::Arc<PreparedData>,
    boot_seed: u64,
}

fn replicate(c: &StudyConfig, grid: &Grid, model: u8, kind: SparsityKind, p_curve: f64, r: usize, attempt: u64) -> Result<Replicate, EvalError> {
    let path = [model as u64, kind as u64, p_curve.to_bits(), r as u64, attempt];
    // the complete data depend only on (model, replication, attempt), so
    // different sparseness settings see the same curves
    let data = generate(&SimConfig {
        model,
        n: c.n,
        grid: grid.clone(),
        p: c.p,
        contamination: c.contamination,
        seed: seeding::derive(c.seed, &[1, model as u64, r as u64, attempt]),
        ..SimConfig::default()
    })?;
    let mask = sparsify(
        &data.observed,
        &SparsifyConfig { kind, p_sparse: c.p_sparse, p_curve, seed: seeding::derive(c.seed, &[[2].as_slice(), &path].concat()) },
    );
    let set = SparseSampleSet::from_masked_curves(&data.observed, &mask)?;
    let prepared = PreparedData::new(&set, grid);
    Ok(Replicate { data, mask, prepared, boot_seed: seeding::derive(c.seed, &[[3].as_slice(), &path].concat()) })
}

fn fits(c: &StudyConfig, rep: &Replicate, alpha: f64, with_mfpca: bool) -> Result<(Option<FitResult>, FitResult), EvalError> {
    let mfit = if with_mfpca {
        let model = fit_mfpca_weighted(&rep.prepared, &vec![1.0; rep.prepared.n()], &c.fpca)?;
        Some(mfpca_fit_curves(&model, alpha)?)
    } else {
        None
    };
    let bfit = bmfpca_fit_prepared(&rep.prepared, c.bootstrap, alpha, rep.boot_seed, &c.fpca)?;
    Ok((mfit, bfit))
}

/// Runs `f` for every replication of every cell, retrying a failed
/// replication once with a derived seed.
fn sweep<T: Send>(
    c: &StudyConfig,
    f: impl Fn(u8, SparsityKind, f64, usize, u64) -> Result<T, EvalError> + Sync,
) -> Vec<((u8, SparsityKind, f64), Vec<Option<T>>)> {
    let mut out = Vec::new();
    for &model in &c.models {
        for &kind in &c.kinds {
            for &pc in &c.p_curves {
                let reps = crate::par_map(c.replications, |r| f(model, kind, pc, r, 0).or_else(|_| f(model, kind, pc, r, 1)).ok());
                out.push(((model, kind, pc), reps));
            }
        }
    }
    out
}

fn revised_variant(m: DepthMethod) -> Option<RevisedVariant> {
    match m {
        DepthMethod::RmfhdAw => Some(RevisedVariant::Aw),
        DepthMethod::RmfhdNaw => Some(RevisedVariant::Naw),
        DepthMethod::RmfhdDm => Some(RevisedVariant::Dm),
        _ => None,
    }
}

/// Spearman correlation of each candidate ranking with the MFHD ranking of
/// the true complete curves (constant weights).
pub fn run_depth_study(c: &StudyConfig) -> Result<EvalReport, EvalError> {
    c.validate()?;
    if c.methods.is_empty() {
        return Err(EvalError::Config("methods must be nonempty".into()));
    }
    if let Some(m) = c.methods.iter().find(|m| matches!(m, DepthMethod::Mfhd | DepthMethod::Mbd)) {
        return Err(EvalError::Config(format!("{m} ranks complete data; use one of mfhd_mfpca, mfhd_bmfpca, rmfhd_aw, rmfhd_naw, rmfhd_dm")));
    }
    let grid = c.grid()?;
    let with_mfpca = c.methods.contains(&DepthMethod::MfhdMfpca);
    let variants: Vec<RevisedVariant> = c.methods.iter().filter_map(|&m| revised_variant(m)).collect();
    let results = sweep(c, |model, kind, pc, r, attempt| {
        let rep = replicate(c, &grid, model, kind, pc, r, attempt)?;
        let (mfit, bfit) = fits(c, &rep, c.alpha, with_mfpca)?;
        let reference = mfhd(&rep.data.signal, &WeightScheme::constant(), c.ndirs)?;
        let revised = if variants.is_empty() {
            Vec::new()
        } else {
            revised_depths(&bfit.fitted, &bfit.upper, &bfit.lower, &variants, &c.weights, c.ndirs)?
        };
        let mut bmfhd = None;
        c.methods
            .iter()
            .map(|&m| {
                let ranks = match m {
                    DepthMethod::MfhdMfpca => mfhd(&mfit.as_ref().expect("mfpca fit").fitted, &c.weights, c.ndirs)?.ranks,
                    DepthMethod::MfhdBmfpca => {
                        if bmfhd.is_none() {
                            bmfhd = Some(mfhd(&bfit.fitted, &c.weights, c.ndirs)?.ranks);
                        }
                        bmfhd.clone().expect("just set")
                    }
                    other => {
                        let v = revised_variant(other).expect("validated method");
                        revised[variants.iter().position(|&x| x == v).expect("listed variant")].ranks.clone()
                    }
                };
                spearman(&ranks, &reference.ranks)
            })
            .collect::<Result<Vec<f64>, EvalError>>()
    });
    let mut cells = Vec::new();
    for ((model, kind, pc), reps) in results {
        for (k, m) in c.methods.iter().enumerate() {
            let values: Vec<Option<f64>> = reps.iter().map(|r| r.as_ref().map(|v| v[k])).collect();
            cells.push(EvalCell {
                model,
                kind,
                p_curve: pc,
                method: m.as_str().into(),
                replications: c.replications,
                missing: values.iter().filter(|v| v.is_none()).count(),
                spearman: spearman_summary(&values),
                values,
                detection: None,
                coverage: None,
            });
        }
    }
    Ok(EvalReport { study: StudyKind::Depth, config: c.clone(), alpha: c.alpha, cells })
}

pub const SPARSE_BOXPLOT: &str = "sparse";
pub const TWO_STAGE_BOXPLOT: &str = "two_stage";

/// Detection rates of the sparse and the two-stage sparse functional
/// boxplot, both ranked by MFHD on the bootstrap fit.
pub fn run_detection_study(c: &StudyConfig) -> Result<EvalReport, EvalError> {
    c.validate()?;
    let grid = c.grid()?;
    let opts = BoxplotOptions { factor: c.factor, ..BoxplotOptions::default() };
    let results = sweep(c, |model, kind, pc, r, attempt| {
        let rep = replicate(c, &grid, model, kind, pc, r, attempt)?;
        let (_, bfit) = fits(c, &rep, c.alpha, false)?;
        let mut depth = mfhd(&bfit.fitted, &c.weights, c.ndirs)?;
        depth.method = DepthMethod::MfhdBmfpca;
        let sparse = functional_boxplot(&bfit.fitted, &depth, Some(&rep.mask), &opts)?;
        let outl = directional_outlyingness_with(&bfit.fitted, c.cutoff_q, c.ndirs, c.cutoff_rule)?;
        let two = two_stage_boxplot(&bfit.fitted, &depth, &outl, Some(&rep.mask), &opts)?;
        let truth = &rep.data.truth;
        Ok([detection_rates(&sparse.outlier_flags(), truth), detection_rates(&two.outlier_flags(), truth)])
    });
    let mut cells = Vec::new();
    for ((model, kind, pc), reps) in results {
        let has_outliers = model != 1 && (c.contamination * c.n as f64).round() >= 1.0;
        for (k, name) in [SPARSE_BOXPLOT, TWO_STAGE_BOXPLOT].into_iter().enumerate() {
            let pc_v: Vec<Option<f64>> = reps.iter().map(|r| r.map(|v| v[k].0)).collect();
            let pf_v: Vec<Option<f64>> = reps.iter().map(|r| r.map(|v| v[k].1)).collect();
            let pcs: Vec<f64> = pc_v.iter().flatten().copied().collect();
            let pfs: Vec<f64> = pf_v.iter().flatten().copied().collect();
            let pc_stats = if has_outliers { mean_sd(&pcs) } else { None };
            let pf_stats = mean_sd(&pfs).unwrap_or((f64::NAN, f64::NAN));
            cells.push(EvalCell {
                model,
                kind,
                p_curve: pc,
                method: name.into(),
                replications: c.replications,
                missing: pc_v.iter().filter(|v| v.is_none()).count(),
                values: Vec::new(),
                spearman: None,
                detection: Some(DetectionSummary {
                    mean_pc: pc_stats.map(|s| s.0),
                    sd_pc: pc_stats.map(|s| s.1),
                    mean_pf: pf_stats.0,
                    sd_pf: pf_stats.1,
                    pc: pc_v,
                    pf: pf_v,
                }),
                coverage: None,
            });
        }
    }
    Ok(EvalReport { study: StudyKind::Detection, config: c.clone(), alpha: c.alpha, cells })
}

/// Counts missing cells `(i, j, c)` whose true value lies inside the
/// closed interval `[lower, upper]`. Returns `(inside, total)`.
pub fn coverage_counts(fit: &FitResult, truth: &CompleteCurves, mask: &GridMask) -> (usize, usize) {
    let (n, p, len) = mask.dims();
    let (mut inside, mut total) = (0, 0);
    for i in 0..n {
        for j in 0..p {
            let (lo, hi, x) = (fit.lower.curve(i, j), fit.upper.curve(i, j), truth.curve(i, j));
            for cc in 0..len {
                if !mask.get(i, j, cc) {
                    total += 1;
                    inside += (lo[cc] <= x[cc] && x[cc] <= hi[cc]) as usize;
                }
            }
        }
    }
    (inside, total)
}

pub const MFPCA_FIT: &str = "mfpca";
pub const BMFPCA_FIT: &str = "bmfpca";

/// Empirical coverage of the pointwise `(1 - alpha)` intervals of both fits
/// at the unobserved cells, measured against the noise-free curves.
pub fn ci_coverage_study(c: &StudyConfig, alpha: f64) -> Result<EvalReport, EvalError> {
    c.validate()?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(EvalError::Config(format!("alpha {alpha} is not in (0, 1)")));
    }
    if let Some(m) = c.models.iter().find(|&&m| m == 8) {
        return Err(EvalError::Config(format!("model {m} is not Gaussian; coverage needs models 1-7")));
    }
    let grid = c.grid()?;
    let results = sweep(c, |model, kind, pc, r, attempt| {
        let rep = replicate(c, &grid, model, kind, pc, r, attempt)?;
        let (mfit, bfit) = fits(c, &rep, alpha, true)?;
        let mfit = mfit.expect("requested");
        Ok([coverage_counts(&mfit, &rep.data.signal, &rep.mask), coverage_counts(&bfit, &rep.data.signal, &rep.mask)])
    });
    let mut cells = Vec::new();
    for ((model, kind, pc), reps) in results {
        for (k, name) in [MFPCA_FIT, BMFPCA_FIT].into_iter().enumerate() {
            let counts: Vec<Option<(usize, usize)>> = reps.iter().map(|r| r.map(|v| v[k])).collect();
            let (inside, total) = counts.iter().flatten().fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
            let values = counts.iter().map(|v| v.and_then(|(a, b)| (b > 0).then(|| a as f64 / b as f64))).collect::<Vec<_>>();
            cells.push(EvalCell {
                model,
                kind,
                p_curve: pc,
                method: name.into(),
                replications: c.replications,
                missing: counts.iter().filter(|v| v.is_none()).count(),
                values,
                spearman: None,
                detection: None,
                coverage: (total > 0).then(|| inside as f64 / total as f64),
            });
        }
    }
    Ok(EvalReport { study: StudyKind::Coverage, config: c.clone(), alpha, cells })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn spearman_examples() {
        assert_eq!(spearman(&[1, 2, 3, 4], &[1, 2, 3, 4]).unwrap(), 1.0);
        assert_eq!(spearman(&[1, 2, 3, 4], &[4, 3, 2, 1]).unwrap(), -1.0);
        assert!((spearman(&[1, 2, 3, 4], &[1, 3, 2, 4]).unwrap() - 0.8).abs() < 1e-12);
        assert!(matches!(spearman(&[1, 2], &[1, 2, 3]), Err(EvalError::Length(2, 3))));
        assert!(matches!(spearman(&[1, 1], &[1, 2]), Err(EvalError::NotPermutation(2))));
    }

    #[test]
    fn detection_examples() {
        let truth: Vec<bool> = (0..100).map(|i| i < 10).collect();
        assert_eq!(detection_rates(&truth, &truth), (100.0, 0.0));
        assert_eq!(detection_rates(&[false; 100], &truth), (0.0, 0.0));
        let flags: Vec<bool> = (0..100).map(|i| i < 7 || (10..13).contains(&i)).collect();
        let (pc, pf) = detection_rates(&flags, &truth);
        assert_eq!(pc, 70.0);
        assert!((pf - 300.0 / 90.0).abs() < 1e-12);
        // no positives: p_c is defined as 0
        assert_eq!(detection_rates(&[true, false], &[false, false]), (0.0, 50.0));
    }

    #[test]
    fn summaries() {
        let v: Vec<Option<f64>> = [4.0, 1.0, 3.0, 2.0].map(Some).into_iter().chain([None]).collect();
        let s = spearman_summary(&v).unwrap();
        assert_eq!((s.median, s.q1, s.q3, s.mean), (2.5, 1.75, 3.25, 2.5));
        let (m, sd) = mean_sd(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(m, 2.0);
        assert!((sd - 1.0).abs() < 1e-15);
        assert_eq!(mean_sd(&[5.0]), Some((5.0, 0.0)));
    }

    #[test]
    fn config_validation() {
        assert!(StudyConfig::default().validate().is_ok());
        for bad in [
            StudyConfig { replications: 0, ..Default::default() },
            StudyConfig { models: vec![], ..Default::default() },
            StudyConfig { models: vec![9], ..Default::default() },
            StudyConfig { p_curves: vec![1.5], ..Default::default() },
            StudyConfig { alpha: 0.0, ..Default::default() },
        ] {
            assert!(matches!(bad.validate(), Err(EvalError::Config(_))));
        }
        let c = StudyConfig { methods: vec![DepthMethod::Mbd], ..small() };
        assert!(run_depth_study(&c).is_err());
        let c = StudyConfig { models: vec![8], ..small() };
        assert!(ci_coverage_study(&c, 0.05).is_err());
    }

    fn small() -> StudyConfig {
        StudyConfig { replications: 2, n: 30, p: 2, grid_len: 25, bootstrap: 5, ndirs: 50, ..Default::default() }
    }

    #[test]
    fn complete_data_ranks_match_the_truth() {
        // depth of the exact curves reproduces the reference ranking
        let data = generate(&SimConfig { p: 2, seed: 11, ..SimConfig::default() }).unwrap();
        let a = mfhd(&data.signal, &WeightScheme::constant(), 100).unwrap();
        let b = mfhd(&data.signal.clone(), &WeightScheme::constant(), 100).unwrap();
        assert_eq!(spearman(&a.ranks, &b.ranks).unwrap(), 1.0);

        // fits of complete but noisy observations stay close to it
        let c = StudyConfig { p_curves: vec![0.0], replications: 1, p: 2, bootstrap: 10, ndirs: 100, ..Default::default() };
        let r = run_depth_study(&c).unwrap();
        for m in ["mfhd_mfpca", "mfhd_bmfpca", "rmfhd_aw", "rmfhd_naw"] {
            let s = r.cell(1, SparsityKind::Point, 0.0, m).unwrap().spearman.as_ref().unwrap().median;
            assert!(s >= 0.9, "{m} {s}");
        }
    }

    #[test]
    fn studies_are_reproducible() {
        let c = StudyConfig { models: vec![2], ..small() };
        let a = run_detection_study(&c).unwrap();
        let b = run_detection_study(&c).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(a.cells.len(), 2);
        for cell in &a.cells {
            let d = cell.detection.as_ref().unwrap();
            for v in d.pc.iter().chain(&d.pf).flatten() {
                assert!((0.0..=100.0).contains(v));
            }
        }
        let csv = a.to_csv();
        assert!(csv.starts_with("model,kind,p_curve,method,replications,missing,mean_pc"));
        assert_eq!(csv.lines().count(), 3);
        let back: EvalReport = serde_json::from_str(&a.to_json()).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn depth_study_cells_and_ranges() {
        let c = StudyConfig { p_curves: vec![0.2, 0.4], ..small() };
        let r = run_depth_study(&c).unwrap();
        assert_eq!(r.cells.len(), 2 * 5);
        for cell in &r.cells {
            assert_eq!(cell.values.len(), 2);
            for v in cell.values.iter().flatten() {
                assert!((-1.0..=1.0).contains(v));
            }
        }
        assert!(r.cell(1, SparsityKind::Point, 0.4, "rmfhd_dm").is_some());
    }

    #[test]
    fn wider_intervals_cover_more() {
        let c = StudyConfig { replications: 3, n: 40, p: 2, grid_len: 30, bootstrap: 10, ..Default::default() };
        let narrow = ci_coverage_study(&c, 0.5).unwrap();
        let wide = ci_coverage_study(&c, 0.05).unwrap();
        for (a, b) in narrow.cells.iter().zip(&wide.cells) {
            assert!(a.coverage.unwrap() < b.coverage.unwrap(), "{} {:?} {:?}", a.method, a.coverage, b.coverage);
        }
        assert!(narrow.to_csv().contains(",0.500000,"));
    }

    #[test]
    fn exact_fit_with_zero_width_covers_everything() {
        let g = Grid::equidistant(10, 0.0, 1.0).unwrap();
        let truth = CompleteCurves::new(3, 1, g.clone(), (0..30).map(|k| (k as f64).sin()).collect()).unwrap();
        let fit = FitResult {
            fitted: truth.clone(),
            lower: truth.clone(),
            upper: truth.clone(),
            variance: CompleteCurves::zeros(3, 1, g),
            alpha: 0.05,
            method: crate::fpca::FitMethod::Mfpca,
            bootstrap: 0,
        };
        let mut mask = GridMask::filled(3, 1, 10, true);
        for c in 2..6 {
            mask.set(1, 0, c, false);
        }
        assert_eq!(coverage_counts(&fit, &truth, &mask), (4, 4));
    }

    #[test]
    fn dense_noiseless_rank_one_fit_covers_missing_cells() {
        // random intercepts around a linear mean; the same cells are hidden
        // for every subject so the pooled mean stays exactly linear
        let g = Grid::default();
        let mut rng = seeding::stream(5, &[]);
        use rand_distr::Distribution;
        let a: Vec<f64> = (0..40).map(|_| rand_distr::StandardNormal.sample(&mut rng)).collect();
        let mut x = CompleteCurves::zeros(40, 1, g.clone());
        for i in 0..40 {
            for (v, t) in x.curve_mut(i, 0).iter_mut().zip(g.points()) {
                *v = 1.0 + t + a[i];
            }
        }
        let mut mask = GridMask::filled(40, 1, g.len(), true);
        for i in 0..40 {
            for c in [10, 31] {
                mask.set(i, 0, c, false);
            }
        }
        let set = SparseSampleSet::from_masked_curves(&x, &mask).unwrap();
        let data = PreparedData::new(&set, &g);
        let model = fit_mfpca_weighted(&data, &vec![1.0; 40], &FpcaOptions::default()).unwrap();
        let fit = mfpca_fit_curves(&model, 0.05).unwrap();
        let width = fit.upper.values().iter().zip(fit.lower.values()).map(|(u, l)| u - l).fold(0.0, f64::max);
        let (inside, total) = coverage_counts(&fit, &x, &mask);
        assert_eq!(total, 80);
        assert!(width < 2e-3, "width {width}");
        let err = fit.fitted.values().iter().zip(x.values()).map(|(f, t)| (f - t).abs()).fold(0.0, f64::max);
        assert!(inside == total || err < 1e-3, "inside {inside} err {err}");
    }

    proptest! {
        #[test]
        fn detection_rates_ignore_joint_permutation(flags in prop::collection::vec(any::<bool>(), 1..60), seed in any::<u64>()) {
            let truth: Vec<bool> = flags.iter().enumerate().map(|(i, f)| (i % 3 == 0) ^ f).collect();
            let mut idx: Vec<usize> = (0..flags.len()).collect();
            use rand::seq::SliceRandom;
            idx.shuffle(&mut seeding::stream(seed, &[]));
            let f2: Vec<bool> = idx.iter().map(|&i| flags[i]).collect();
            let t2: Vec<bool> = idx.iter().map(|&i| truth[i]).collect();
            prop_assert_eq!(detection_rates(&flags, &truth), detection_rates(&f2, &t2));
            let (pc, pf) = detection_rates(&flags, &truth);
            prop_assert!((0.0..=100.0).contains(&pc) && (0.0..=100.0).contains(&pf));
        }

        #[test]
        fn spearman_is_bounded_and_symmetric(seed in any::<u64>(), n in 2usize..40) {
            use rand::seq::SliceRandom;
            let mut rng = seeding::stream(seed, &[]);
            let mut a: Vec<usize> = (1..=n).collect();
            let mut b = a.clone();
            a.shuffle(&mut rng);
            b.shuffle(&mut rng);
            let s = spearman(&a, &b).unwrap();
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&s));
            prop_assert_eq!(s, spearman(&b, &a).unwrap());
        }

        #[test]
        fn summaries_are_order_free(mut v in prop::collection::vec(-1.0f64..1.0, 1..30), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let a = spearman_summary(&v.iter().copied().map(Some).collect::<Vec<_>>());
            v.shuffle(&mut seeding::stream(seed, &[]));
            let b = spearman_summary(&v.iter().copied().map(Some).collect::<Vec<_>>());
            let (a, b) = (a.unwrap(), b.unwrap());
            prop_assert_eq!((a.median, a.q1, a.q3), (b.median, b.q1, b.q3));
            prop_assert!((a.mean - b.mean).abs() < 1e-12);
        }
    }
}
