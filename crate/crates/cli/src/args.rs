use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use sfbox::boxplot::Normalization;
use sfbox::depth::{CutoffRule, DepthMethod, WeightKind};
use sfbox::fdata::CsvSchema;
use sfbox::fpca::FitMethod;
use sfbox::simgen::SparsityKind;

const FORMATS: &str = "\
File formats:
  long CSV     subject_id,variable,time,value (column names configurable)
  curves CSV   subject_id,variable,t_1,...,t_N  one row per subject and variable
  mask CSV     same layout as curves, cells 0 (missing) or 1 (observed)
  depth CSV    subject_id,method,depth,rank  (rank 1 = deepest)
  geometry     JSON document tagged schema_version = \"sfbox.geometry/1\"

Exit codes: 0 success, 2 usage, 3 input/output, 4 numerical failure.
Results do not depend on --threads.";

#[derive(Debug, Parser, Serialize)]
#[command(name = "sfbox", version, about = "Sparse functional boxplots and outlier detection", after_help = FORMATS)]
#[command(args_override_self = true)]
pub struct Cli {
    /// Master seed; every random stream is derived from it.
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,

    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "SFBOX_THREADS")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,

    /// TOML file with default flag values: top-level keys for global flags,
    /// one table per subcommand (`[fit]`, `[study]`, ...). Flags given on the
    /// command line win.
    #[arg(long, global = true, value_name = "FILE")]
    #[serde(skip)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Simulate a labelled sample and hide cells.
    ///
    /// Writes data.csv (observed cells, long format), mask.csv, truth.csv
    /// (subject_id,outlier) and config.toml into --out.
    #[command(args_override_self = true, after_help = FORMATS)]
    Simulate(SimulateArgs),
    /// Hide cells of an observed long CSV with a simulated sparseness pattern.
    ///
    /// Observations are snapped to an equidistant grid over the data's time
    /// range; data.csv and mask.csv are written into --out.
    #[command(args_override_self = true, after_help = FORMATS)]
    Sparsify(SparsifyArgs),
    /// Fit every curve on a grid with pointwise confidence bands.
    ///
    /// Writes fitted.csv, lower.csv, upper.csv, mask.csv and model.txt into --out.
    #[command(args_override_self = true, after_help = FORMATS)]
    Fit(FitArgs),
    /// Depth of fitted curves.
    #[command(args_override_self = true, after_help = FORMATS)]
    Depth(DepthArgs),
    /// Directional outlyingness (MO, VO) and stage-1 flags.
    ///
    /// Output columns: subject_id, mo_1..mo_p, vo, flagged, distance.
    #[command(args_override_self = true, after_help = FORMATS)]
    Outlyingness(OutlyingnessArgs),
    /// Boxplot geometry (JSON) from fitted curves and their depths.
    #[command(args_override_self = true, after_help = FORMATS)]
    Boxplot(BoxplotArgs),
    /// Render a geometry document to SVG.
    #[command(args_override_self = true, after_help = FORMATS)]
    Render(RenderArgs),
    /// Monte Carlo studies: depth ranking, outlier detection, band coverage.
    ///
    /// Writes table.csv and summary.json into --out.
    #[command(args_override_self = true, after_help = FORMATS)]
    Study(StudyArgs),
    /// Ingest, fit, rank, build the boxplot and render in one run.
    #[command(args_override_self = true, after_help = FORMATS)]
    Pipeline(PipelineArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Simulate(_) => "simulate",
            Self::Sparsify(_) => "sparsify",
            Self::Fit(_) => "fit",
            Self::Depth(_) => "depth",
            Self::Outlyingness(_) => "outlyingness",
            Self::Boxplot(_) => "boxplot",
            Self::Render(_) => "render",
            Self::Study(_) => "study",
            Self::Pipeline(_) => "pipeline",
        }
    }
}

/// Comma-separated list value, e.g. `2,4,6`.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(transparent)]
pub struct List<T>(pub Vec<T>);

impl<T: FromStr> FromStr for List<T>
where
    T::Err: std::fmt::Display,
{
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(str::trim)
            .filter(|x| !x.is_empty())
            .map(|x| x.parse::<T>().map_err(|e| format!("`{x}`: {e}")))
            .collect::<Result<Vec<_>, _>>()
            .and_then(|v| if v.is_empty() { Err("empty list".into()) } else { Ok(List(v)) })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Weights {
    Constant,
    Volume,
}

impl From<Weights> for WeightKind {
    fn from(w: Weights) -> Self {
        match w {
            Weights::Constant => WeightKind::Constant,
            Weights::Volume => WeightKind::Volume,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Mfpca,
    Bmfpca,
}

impl From<Method> for FitMethod {
    fn from(m: Method) -> Self {
        match m {
            Method::Mfpca => FitMethod::Mfpca,
            Method::Bmfpca => FitMethod::Bmfpca,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyWhat {
    /// Spearman correlation of depth ranks with the ranks of the true curves.
    Depth,
    /// Correct (p_c) and false (p_f) detection rates of both boxplots.
    Detect,
    /// Pointwise band coverage at missing cells.
    Coverage,
}

/// Names of the long-CSV columns.
#[derive(Clone, Debug, Args, Serialize)]
pub struct Columns {
    #[arg(long, default_value = "subject_id")]
    pub subject_col: String,
    #[arg(long, default_value = "variable")]
    pub variable_col: String,
    #[arg(long, default_value = "time")]
    pub time_col: String,
    #[arg(long, default_value = "value")]
    pub value_col: String,
}

impl Columns {
    pub fn schema(&self) -> CsvSchema {
        CsvSchema {
            subject: self.subject_col.clone(),
            variable: self.variable_col.clone(),
            time: self.time_col.clone(),
            value: self.value_col.clone(),
        }
    }
}

/// Sparseness pattern options.
#[derive(Clone, Debug, Args, Serialize)]
pub struct Sparseness {
    /// point (random cells), peak (one window per curve) or partial (one
    /// window shared by all sparse curves).
    #[arg(long, default_value = "point")]
    pub kind: SparsityKind,
    /// Fraction of each sparse curve that is hidden.
    #[arg(long, default_value_t = 0.0)]
    pub p_curve: f64,
    /// Fraction of curves that are sparse.
    #[arg(long, default_value_t = 1.0)]
    pub p_sparse: f64,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct SimulateArgs {
    /// 1 none, 2 persistent magnitude, 3 isolated magnitude, 4 shape I,
    /// 5 shape II, 6 mixed, 7 joint, 8 covariance outliers.
    #[arg(long, default_value_t = 1)]
    pub model: u8,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    /// Number of variables.
    #[arg(long, default_value_t = 3)]
    pub p: usize,
    /// Equidistant grid points on [0, 1].
    #[arg(long, default_value_t = 50)]
    pub grid_len: usize,
    /// Fraction of outlying curves.
    #[arg(long, default_value_t = 0.1)]
    pub contamination: f64,
    #[command(flatten)]
    #[serde(flatten)]
    pub sparseness: Sparseness,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct SparsifyArgs {
    /// Long CSV input.
    #[arg(long = "in", value_name = "FILE")]
    #[serde(rename = "in")]
    pub input: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub columns: Columns,
    #[arg(long, default_value_t = 50)]
    pub grid_len: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub sparseness: Sparseness,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

/// Fitting options shared by `fit` and `pipeline`.
#[derive(Clone, Debug, Args, Serialize)]
pub struct FitOptions {
    #[arg(long, value_enum, default_value = "bmfpca")]
    pub method: Method,
    /// Bootstrap resamples for bmfpca.
    #[arg(long, default_value_t = 100)]
    pub bootstrap: usize,
    /// Bands have pointwise level 1 - alpha.
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Equidistant grid points over the data's time range.
    #[arg(long, default_value_t = 50)]
    pub grid_len: usize,
    /// Fraction of variance explained, univariate and multivariate steps.
    #[arg(long, default_value_t = sfbox::fpca::DEFAULT_PVE)]
    pub pve: f64,
    /// Mean smoother bandwidth (default 5% of the domain).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_bandwidth: Option<f64>,
    /// Covariance smoother bandwidth (default 5% of the domain).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cov_bandwidth: Option<f64>,
    /// Pick both bandwidths by 5-fold cross-validation.
    #[arg(long)]
    pub cross_validate: bool,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct FitArgs {
    /// Long CSV input.
    #[arg(long = "in", value_name = "FILE")]
    #[serde(rename = "in")]
    pub input: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub columns: Columns,
    #[command(flatten)]
    #[serde(flatten)]
    pub fit: FitOptions,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

/// Depth options shared by `depth` and `pipeline`.
#[derive(Clone, Debug, Args, Serialize)]
pub struct DepthOptions {
    /// Time weights of the integrated halfspace depth.
    #[arg(long, value_enum, default_value = "constant")]
    pub weights: Weights,
    /// Depth level of the region used by volume weights (default ceil(n/4)/n).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    /// Projection directions for halfspace depth with p >= 3.
    #[arg(long, default_value_t = sfbox::depth::DEFAULT_NDIRS)]
    pub ndirs: usize,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct DepthArgs {
    /// Fitted curves (wide CSV).
    #[arg(long, value_name = "FILE")]
    pub fitted: PathBuf,
    /// Upper band (needed by rmfhd_*).
    #[arg(long, value_name = "FILE")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub upper: Option<PathBuf>,
    /// Lower band (needed by rmfhd_*).
    #[arg(long, value_name = "FILE")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lower: Option<PathBuf>,
    /// mfhd, mbd, mfhd_mfpca, mfhd_bmfpca, rmfhd_aw, rmfhd_naw or rmfhd_dm.
    #[arg(long, default_value = "mfhd")]
    pub method: DepthMethod,
    #[command(flatten)]
    #[serde(flatten)]
    pub depth: DepthOptions,
    /// Output CSV (default: stdout).
    #[arg(long, value_name = "FILE")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

/// Stage-1 screening options.
#[derive(Clone, Debug, Args, Serialize)]
pub struct ScreenOptions {
    /// Quantile of the cutoff distribution.
    #[arg(long, default_value_t = sfbox::depth::DEFAULT_CUTOFF_Q)]
    pub cutoff_q: f64,
    /// chi_square (reweighted MCD) or hardin_rocke (raw MCD, scaled F).
    #[arg(long, default_value = "chi_square")]
    pub cutoff_rule: CutoffRule,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct OutlyingnessArgs {
    #[arg(long, value_name = "FILE")]
    pub fitted: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub screen: ScreenOptions,
    #[arg(long, default_value_t = sfbox::depth::DEFAULT_NDIRS)]
    pub ndirs: usize,
    /// Output CSV (default: stdout).
    #[arg(long, value_name = "FILE")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

/// Boxplot options shared by `boxplot` and `pipeline`.
#[derive(Clone, Debug, Args, Serialize)]
pub struct BoxplotFlags {
    /// Screen curves by directional outlyingness before the fence rule.
    #[arg(long)]
    pub two_stage: bool,
    /// Fence inflation factor.
    #[arg(long, default_value_t = sfbox::boxplot::DEFAULT_FACTOR)]
    pub factor: f64,
    /// Add the sparseness intensity field (needs a mask).
    #[arg(long)]
    pub intensity: bool,
    /// per_variable or global scaling of the intensity.
    #[arg(long, default_value = "per_variable")]
    pub normalization: Normalization,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct BoxplotArgs {
    #[arg(long, value_name = "FILE")]
    pub fitted: PathBuf,
    /// Depth CSV of the fitted curves.
    #[arg(long, value_name = "FILE")]
    pub depth: PathBuf,
    /// Mask CSV; without it the curves count as fully observed.
    #[arg(long, value_name = "FILE")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mask: Option<PathBuf>,
    /// Outlyingness CSV for --two-stage; computed when absent.
    #[arg(long, value_name = "FILE")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outlyingness: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub boxplot: BoxplotFlags,
    #[command(flatten)]
    #[serde(flatten)]
    pub screen: ScreenOptions,
    #[arg(long, default_value_t = sfbox::depth::DEFAULT_NDIRS)]
    pub ndirs: usize,
    /// Geometry JSON (default: stdout).
    #[arg(long, value_name = "FILE")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct RenderArgs {
    /// Geometry JSON.
    #[arg(long = "in", value_name = "FILE")]
    #[serde(rename = "in")]
    pub input: PathBuf,
    /// Draw the intensity panel stored in the document.
    #[arg(long)]
    pub intensity: bool,
    /// TOML style file; unspecified keys keep their defaults.
    #[arg(long, value_name = "FILE")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub style: Option<PathBuf>,
    /// SVG output (default: stdout).
    #[arg(long, value_name = "FILE")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct StudyArgs {
    #[arg(value_enum)]
    pub what: StudyWhat,
    /// Simulation models, e.g. 2,4.
    #[arg(long, default_value = "1")]
    pub models: List<u8>,
    /// Sparseness kinds, e.g. point,peak.
    #[arg(long, default_value = "point")]
    pub kinds: List<SparsityKind>,
    /// Hidden fractions per sparse curve, e.g. 0.2,0.4.
    #[arg(long, default_value = "0.2")]
    pub pcurve: List<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub psparse: f64,
    /// Replications per cell.
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 3)]
    pub p: usize,
    #[arg(long, default_value_t = 50)]
    pub grid_len: usize,
    #[arg(long, default_value_t = 0.1)]
    pub contamination: f64,
    #[arg(long, default_value_t = 100)]
    pub bootstrap: usize,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[command(flatten)]
    #[serde(flatten)]
    pub depth: DepthOptions,
    #[command(flatten)]
    #[serde(flatten)]
    pub screen: ScreenOptions,
    #[arg(long, default_value_t = sfbox::boxplot::DEFAULT_FACTOR)]
    pub factor: f64,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct PipelineArgs {
    /// Long CSV input.
    #[arg(long = "in", value_name = "FILE")]
    #[serde(rename = "in")]
    pub input: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub columns: Columns,
    #[command(flatten)]
    #[serde(flatten)]
    pub fit: FitOptions,
    /// auto (mbd for one variable, mfhd otherwise) or any `depth --method`.
    #[arg(long = "depth", default_value = "auto")]
    #[serde(rename = "depth")]
    pub depth_method: String,
    #[command(flatten)]
    #[serde(flatten)]
    pub depth: DepthOptions,
    /// Mark missing cells: sparseness boundary and gray segments.
    #[arg(long)]
    pub sparse_boxplot: bool,
    #[command(flatten)]
    #[serde(flatten)]
    pub boxplot: BoxplotFlags,
    #[command(flatten)]
    #[serde(flatten)]
    pub screen: ScreenOptions,
    #[arg(long, value_name = "FILE")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub style: Option<PathBuf>,
    /// SVG output.
    #[arg(long, value_name = "FILE")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub svg: Option<PathBuf>,
    /// Geometry JSON output (default: next to --svg with a .json extension).
    #[arg(long, value_name = "FILE")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub json: Option<PathBuf>,
    /// Also keep fitted.csv, lower.csv, upper.csv, mask.csv and depth.csv.
    #[arg(long, value_name = "DIR")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}
