use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sfbox::boxplot::{
    functional_boxplot, intensity_field, two_stage_boxplot, BoxplotOptions, IntensityOptions, Stage,
};
use sfbox::depth::{
    directional_outlyingness_with, mbd, mfhd, revised_depth, DepthMethod, DepthReport, OutlyingnessReport,
    RevisedVariant, WeightScheme,
};
use sfbox::eval::{ci_coverage_study, run_depth_study, run_detection_study, StudyConfig};
use sfbox::fdata::{snap_to_grid, CompleteCurves, Grid, GridMask, Observation, SparseSampleSet};
use sfbox::fpca::{bmfpca_fit_prepared, fit_mfpca, mfpca_fit_curves, FitResult, FpcaOptions, MfpcaModel};
use sfbox::render::{boxplot_svg, emit_json, intensity_boxplot_svg, parse_json, GeometryDocument, StyleConfig};
use sfbox::seeding;
use sfbox::simgen::{generate, sparsify, sparsify_dims, SimConfig, SparsifyConfig};

use crate::args::*;
use crate::error::CliError;
use crate::io::{self, Labels};

/// Stream tags under the master seed.
const DATA_STREAM: u64 = 1;
const SPARSIFY_STREAM: u64 = 2;
const BOOTSTRAP_STREAM: u64 = 3;

pub fn run(cli: &Cli, resolved: &str) -> Result<(), CliError> {
    let seed = cli.seed;
    match &cli.command {
        Command::Simulate(a) => simulate(a, seed, resolved),
        Command::Sparsify(a) => sparsify_cmd(a, seed),
        Command::Fit(a) => fit(a, seed),
        Command::Depth(a) => depth(a),
        Command::Outlyingness(a) => outlyingness(a),
        Command::Boxplot(a) => boxplot(a),
        Command::Render(a) => render(a),
        Command::Study(a) => study(a, seed),
        Command::Pipeline(a) => pipeline(a, seed),
    }
}

fn equidistant(len: usize, lo: f64, hi: f64) -> Result<Grid, CliError> {
    if len < 2 {
        return Err(CliError::Usage(format!("--grid-len must be at least 2, got {len}")));
    }
    if !(hi > lo) {
        return Err(CliError::Io(format!("observation times span a single point ({lo})")));
    }
    Ok(Grid::equidistant(len, lo, hi)?)
}

fn sparsify_config(s: &Sparseness, seed: u64) -> Result<SparsifyConfig, CliError> {
    for (name, v) in [("--p-curve", s.p_curve), ("--p-sparse", s.p_sparse)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(CliError::Usage(format!("{name} {v} is not in [0, 1]")));
        }
    }
    Ok(SparsifyConfig {
        kind: s.kind,
        p_sparse: s.p_sparse,
        p_curve: s.p_curve,
        seed: seeding::derive(seed, &[SPARSIFY_STREAM]),
    })
}

fn simulate(a: &SimulateArgs, seed: u64, resolved: &str) -> Result<(), CliError> {
    let grid = equidistant(a.grid_len, 0.0, 1.0)?;
    let cfg = SimConfig {
        model: a.model,
        n: a.n,
        grid: grid.clone(),
        p: a.p,
        contamination: a.contamination,
        seed: seeding::derive(seed, &[DATA_STREAM]),
        ..SimConfig::default()
    };
    let data = generate(&cfg)?;
    let mask = sparsify(&data.observed, &sparsify_config(&a.sparseness, seed)?);
    let set = SparseSampleSet::from_masked_curves(&data.observed, &mask)?;
    let labels = Labels::of(&set);

    io::create_dir(&a.out)?;
    io::write_text(&a.out.join("data.csv"), &io::long_csv(&set)?)?;
    io::write_text(&a.out.join("mask.csv"), &io::mask_csv(&mask, &grid, &labels))?;
    let mut truth = String::from("subject_id,outlier\n");
    for (id, &t) in labels.subjects.iter().zip(&data.truth) {
        writeln!(truth, "{id},{}", u8::from(t)).unwrap();
    }
    io::write_text(&a.out.join("truth.csv"), &truth)?;
    io::write_text(&a.out.join("config.toml"), resolved)?;
    println!(
        "simulated {} curves ({} outliers), {} of {} cells observed",
        a.n,
        data.truth.iter().filter(|&&t| t).count(),
        mask.count_present(),
        a.n * a.p * a.grid_len
    );
    Ok(())
}

fn sparsify_cmd(a: &SparsifyArgs, seed: u64) -> Result<(), CliError> {
    let set = io::read_long(&a.input, &a.columns.schema())?;
    let (lo, hi) = set.joint_domain();
    let grid = equidistant(a.grid_len, lo, hi)?;
    let keep = sparsify_dims(set.n(), set.p(), grid.len(), &sparsify_config(&a.sparseness, seed)?);
    let mut obs: Vec<Vec<Vec<Observation>>> = (0..set.n())
        .map(|i| {
            (0..set.p())
                .map(|j| {
                    set.observations(i, j)
                        .iter()
                        .filter(|o| keep.get(i, j, grid.nearest(o.time)))
                        .copied()
                        .collect()
                })
                .collect()
        })
        .collect();
    // never drop a subject entirely
    for (i, row) in obs.iter_mut().enumerate() {
        if row.iter().all(Vec::is_empty) {
            if let Some(j) = (0..set.p()).find(|&j| !set.observations(i, j).is_empty()) {
                row[j].push(set.observations(i, j)[0]);
            }
        }
    }
    let domains = (0..set.p()).map(|j| set.domain(j)).collect();
    let out = SparseSampleSet::new(set.subject_ids().to_vec(), set.variable_names().to_vec(), domains, obs)?;
    let mask = snap_to_grid(&out, &grid, None)?.mask;

    io::create_dir(&a.out)?;
    io::write_text(&a.out.join("data.csv"), &io::long_csv(&out)?)?;
    io::write_text(&a.out.join("mask.csv"), &io::mask_csv(&mask, &grid, &Labels::of(&out)))?;
    println!("kept {} of {} observations", out.total_observations(), set.total_observations());
    Ok(())
}

struct Fitted {
    grid: Grid,
    model: MfpcaModel,
    fit: FitResult,
    mask: GridMask,
    labels: Labels,
}

fn fit_set(set: &SparseSampleSet, o: &FitOptions, seed: u64) -> Result<Fitted, CliError> {
    let (lo, hi) = set.joint_domain();
    let grid = equidistant(o.grid_len, lo, hi)?;
    let opts = FpcaOptions {
        mean_bandwidth: o.mean_bandwidth,
        cov_bandwidth: o.cov_bandwidth,
        pve_univariate: o.pve,
        pve_multivariate: o.pve,
        cross_validate: o.cross_validate,
    };
    let model = fit_mfpca(set, &grid, &opts)?;
    let fit = match o.method {
        Method::Mfpca => mfpca_fit_curves(&model, o.alpha)?,
        Method::Bmfpca => bmfpca_fit_prepared(
            model.data(),
            o.bootstrap,
            o.alpha,
            seeding::derive(seed, &[BOOTSTRAP_STREAM]),
            &opts,
        )?,
    };
    let mask = snap_to_grid(set, &grid, None)?.mask;
    Ok(Fitted { grid, model, fit, mask, labels: Labels::of(set) })
}

fn model_summary(f: &Fitted, o: &FitOptions) -> String {
    let g = &f.grid;
    let mut s = String::new();
    writeln!(s, "method: {}", if o.method == Method::Mfpca { "mfpca" } else { "bmfpca" }).unwrap();
    if o.method == Method::Bmfpca {
        writeln!(s, "bootstrap resamples: {}", o.bootstrap).unwrap();
    }
    writeln!(s, "alpha: {}", o.alpha).unwrap();
    writeln!(s, "subjects: {}", f.labels.subjects.len()).unwrap();
    writeln!(s, "grid: {} points on [{}, {}]", g.len(), g.start(), g.end()).unwrap();
    for (name, u) in f.labels.variables.iter().zip(&f.model.univariate) {
        writeln!(
            s,
            "variable {name}: M_j = {}, sigma2 = {}, mean bandwidth = {}, covariance bandwidth = {}",
            u.components(),
            u.sigma2,
            u.mean_bandwidth,
            u.cov_bandwidth
        )
        .unwrap();
    }
    writeln!(s, "M+ = {}", f.model.total_components()).unwrap();
    writeln!(s, "M = {}", f.model.components()).unwrap();
    let nu: Vec<String> = f.model.eigenvalues.iter().map(|v| v.to_string()).collect();
    writeln!(s, "nu = [{}]", nu.join(", ")).unwrap();
    s
}

fn write_fit(dir: &Path, f: &Fitted, o: &FitOptions) -> Result<(), CliError> {
    io::create_dir(dir)?;
    io::write_text(&dir.join("fitted.csv"), &io::curves_csv(&f.fit.fitted, &f.labels))?;
    io::write_text(&dir.join("lower.csv"), &io::curves_csv(&f.fit.lower, &f.labels))?;
    io::write_text(&dir.join("upper.csv"), &io::curves_csv(&f.fit.upper, &f.labels))?;
    io::write_text(&dir.join("mask.csv"), &io::mask_csv(&f.mask, &f.grid, &f.labels))?;
    io::write_text(&dir.join("model.txt"), &model_summary(f, o))
}

fn fit(a: &FitArgs, seed: u64) -> Result<(), CliError> {
    let set = io::read_long(&a.input, &a.columns.schema())?;
    let f = fit_set(&set, &a.fit, seed)?;
    write_fit(&a.out, &f, &a.fit)?;
    print!("{}", model_summary(&f, &a.fit));
    Ok(())
}

fn weight_scheme(d: &DepthOptions) -> WeightScheme {
    WeightScheme { kind: d.weights.into(), beta: d.beta }
}

fn compute_depth(
    method: DepthMethod,
    fitted: &CompleteCurves,
    bands: Option<(&CompleteCurves, &CompleteCurves)>,
    d: &DepthOptions,
) -> Result<DepthReport, CliError> {
    let w = weight_scheme(d);
    let variant = match method {
        DepthMethod::Mbd => return Ok(mbd(fitted)),
        DepthMethod::Mfhd | DepthMethod::MfhdMfpca | DepthMethod::MfhdBmfpca => {
            let r = mfhd(fitted, &w, d.ndirs)?;
            return Ok(DepthReport { method, ..r });
        }
        DepthMethod::RmfhdAw => RevisedVariant::Aw,
        DepthMethod::RmfhdNaw => RevisedVariant::Naw,
        DepthMethod::RmfhdDm => RevisedVariant::Dm,
    };
    let (upper, lower) =
        bands.ok_or_else(|| CliError::Usage(format!("{method} needs --upper and --lower band files")))?;
    Ok(revised_depth(fitted, upper, lower, variant, &w, d.ndirs)?)
}

fn read_aligned(path: &Path, labels: &Labels, what: &str) -> Result<CompleteCurves, CliError> {
    let (c, l) = io::read_curves(path)?;
    if &l != labels {
        return Err(CliError::Io(format!("{}: {what} subjects or variables differ from the fitted curves", path.display())));
    }
    Ok(c)
}

fn depth(a: &DepthArgs) -> Result<(), CliError> {
    let (fitted, labels) = io::read_curves(&a.fitted)?;
    let bands = match (&a.upper, &a.lower) {
        (Some(u), Some(l)) => Some((read_aligned(u, &labels, "upper band")?, read_aligned(l, &labels, "lower band")?)),
        (None, None) => None,
        _ => return Err(CliError::Usage("--upper and --lower go together".into())),
    };
    let report = compute_depth(a.method, &fitted, bands.as_ref().map(|(u, l)| (u, l)), &a.depth)?;
    io::emit(a.out.as_deref(), &io::depth_csv(&report, &labels))
}

fn check_q(q: f64) -> Result<(), CliError> {
    if q > 0.0 && q < 1.0 {
        Ok(())
    } else {
        Err(CliError::Usage(format!("--cutoff-q {q} is not in (0, 1)")))
    }
}

fn screen(fitted: &CompleteCurves, s: &ScreenOptions, ndirs: usize) -> Result<OutlyingnessReport, CliError> {
    check_q(s.cutoff_q)?;
    Ok(directional_outlyingness_with(fitted, s.cutoff_q, ndirs, s.cutoff_rule)?)
}

fn outlyingness(a: &OutlyingnessArgs) -> Result<(), CliError> {
    let (fitted, labels) = io::read_curves(&a.fitted)?;
    let report = screen(&fitted, &a.screen, a.ndirs)?;
    io::emit(a.out.as_deref(), &io::outlyingness_csv(&report, &labels))
}

fn geometry(
    fitted: &CompleteCurves,
    depths: &DepthReport,
    mask: Option<&GridMask>,
    outl: Option<&OutlyingnessReport>,
    b: &BoxplotFlags,
    labels: &Labels,
) -> Result<GeometryDocument, CliError> {
    let opts = BoxplotOptions { factor: b.factor, ..BoxplotOptions::default() };
    let mut g = match outl {
        Some(o) => two_stage_boxplot(fitted, depths, o, mask, &opts)?,
        None => functional_boxplot(fitted, depths, mask, &opts)?,
    };
    g.set_variable_names(&labels.variables);
    let field = if b.intensity {
        let mask = mask.ok_or_else(|| CliError::Usage("--intensity needs a mask of observed cells".into()))?;
        let opts = IntensityOptions { normalization: b.normalization, ..IntensityOptions::default() };
        Some(intensity_field(mask, fitted, &g.central_region(), &opts))
    } else {
        None
    };
    Ok(GeometryDocument::new(g, field))
}

/// Flags read back from an outlyingness table; only `flagged` is used.
fn flags_report(flagged: Vec<bool>) -> OutlyingnessReport {
    let n = flagged.len();
    OutlyingnessReport {
        mo: vec![Vec::new(); n],
        vo: vec![0.0; n],
        distances: vec![0.0; n],
        cutoff: f64::NAN,
        rule: Default::default(),
        flagged,
    }
}

fn boxplot(a: &BoxplotArgs) -> Result<(), CliError> {
    let (fitted, labels) = io::read_curves(&a.fitted)?;
    let depths = io::read_depth(&a.depth, &labels)?;
    let mask = match &a.mask {
        Some(path) => {
            let (m, grid, l) = io::read_mask(path)?;
            if l != labels || &grid != fitted.grid() {
                return Err(CliError::Io(format!("{}: mask does not match the fitted curves", path.display())));
            }
            Some(m)
        }
        None => None,
    };
    let outl = match (a.boxplot.two_stage, &a.outlyingness) {
        (false, _) => None,
        (true, Some(path)) => Some(flags_report(io::read_flags(path, &labels)?)),
        (true, None) => Some(screen(&fitted, &a.screen, a.ndirs)?),
    };
    let doc = geometry(&fitted, &depths, mask.as_ref(), outl.as_ref(), &a.boxplot, &labels)?;
    io::emit(a.out.as_deref(), &emit_json(&doc))
}

fn load_style(path: Option<&Path>) -> Result<StyleConfig, CliError> {
    let style = match path {
        Some(p) => toml::from_str(&io::read_text(p)?).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?,
        None => StyleConfig::default(),
    };
    style.validate()?;
    Ok(style)
}

fn svg_of(doc: &GeometryDocument, intensity: bool, style: &StyleConfig) -> Result<String, CliError> {
    Ok(if intensity {
        intensity_boxplot_svg(&doc.boxplot, &doc.intensity_field(), style)?
    } else {
        boxplot_svg(&doc.boxplot, style)?
    })
}

fn render(a: &RenderArgs) -> Result<(), CliError> {
    let style = load_style(a.style.as_deref())?;
    let doc = parse_json(&io::read_text(&a.input)?).map_err(|e| CliError::io(&a.input, e))?;
    io::emit(a.out.as_deref(), &svg_of(&doc, a.intensity, &style)?)
}

fn study(a: &StudyArgs, seed: u64) -> Result<(), CliError> {
    check_q(a.screen.cutoff_q)?;
    let c = StudyConfig {
        models: a.models.0.clone(),
        kinds: a.kinds.0.clone(),
        p_curves: a.pcurve.0.clone(),
        p_sparse: a.psparse,
        replications: a.reps,
        n: a.n,
        p: a.p,
        grid_len: a.grid_len,
        contamination: a.contamination,
        seed,
        bootstrap: a.bootstrap,
        alpha: a.alpha,
        ndirs: a.depth.ndirs,
        weights: weight_scheme(&a.depth),
        cutoff_q: a.screen.cutoff_q,
        cutoff_rule: a.screen.cutoff_rule,
        factor: a.factor,
        ..StudyConfig::default()
    };
    let report = match a.what {
        StudyWhat::Depth => run_depth_study(&c)?,
        StudyWhat::Detect => run_detection_study(&c)?,
        StudyWhat::Coverage => ci_coverage_study(&c, a.alpha)?,
    };
    io::create_dir(&a.out)?;
    io::write_text(&a.out.join("table.csv"), &report.to_csv())?;
    io::write_text(&a.out.join("summary.json"), &report.to_json())?;
    print!("{}", report.summary());
    Ok(())
}

fn pipeline(a: &PipelineArgs, seed: u64) -> Result<(), CliError> {
    let method = match a.depth_method.as_str() {
        "auto" => None,
        m => Some(m.parse::<DepthMethod>().map_err(CliError::Usage)?),
    };
    let style = load_style(a.style.as_deref())?;
    let set = io::read_long(&a.input, &a.columns.schema())?;
    let f = fit_set(&set, &a.fit, seed)?;
    let method = method.unwrap_or(if set.p() == 1 { DepthMethod::Mbd } else { DepthMethod::Mfhd });
    let depths = compute_depth(method, &f.fit.fitted, Some((&f.fit.upper, &f.fit.lower)), &a.depth)?;
    let outl = match a.boxplot.two_stage {
        true => Some(screen(&f.fit.fitted, &a.screen, a.depth.ndirs)?),
        false => None,
    };
    let mask = (a.sparse_boxplot || a.boxplot.intensity).then_some(&f.mask);
    let doc = geometry(&f.fit.fitted, &depths, mask, outl.as_ref(), &a.boxplot, &f.labels)?;

    let json_path: Option<PathBuf> = a.json.clone().or_else(|| a.svg.as_ref().map(|s| s.with_extension("json")));
    if let Some(p) = &json_path {
        io::write_text(p, &emit_json(&doc))?;
    }
    if let Some(p) = &a.svg {
        io::write_text(p, &svg_of(&doc, a.boxplot.intensity, &style)?)?;
    }
    if let Some(dir) = &a.out_dir {
        write_fit(dir, &f, &a.fit)?;
        io::write_text(&dir.join("depth.csv"), &io::depth_csv(&depths, &f.labels))?;
    }

    let g = &doc.boxplot;
    let ids = |stage| -> Vec<String> { g.outliers_of(stage).iter().map(|&i| f.labels.subjects[i].clone()).collect() };
    println!(
        "{} subjects, {} variables, grid {} points on [{}, {}], depth {}",
        set.n(),
        set.p(),
        f.grid.len(),
        f.grid.start(),
        f.grid.end(),
        depths.method
    );
    println!("median: {}", f.labels.subjects[g.median]);
    println!("stage 1 outliers: [{}]", ids(Stage::Stage1).join(", "));
    println!("stage 2 outliers: [{}]", ids(Stage::Stage2).join(", "));
    Ok(())
}
