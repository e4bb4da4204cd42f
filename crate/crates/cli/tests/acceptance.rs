//! Acceptance criteria, one test each. Every test prints a single
//! `criterion N: PASS|FAIL ...` line before asserting.
//!
//! The simulation criteria are slow (about 20 minutes on one core in
//! release mode). Tests take a shared lock so they run one at a time and
//! the timing of criterion 6 is not polluted by the others.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::Instant;

use rand::Rng;

use sfbox::boxplot::{functional_boxplot, intensity_field, BoxplotOptions, IntensityOptions};
use sfbox::depth::{cell_weights, halfspace_depth, mbd, mfhd, WeightScheme};
use sfbox::eval::{
    ci_coverage_study, run_depth_study, run_detection_study, EvalReport, StudyConfig, BMFPCA_FIT, MFPCA_FIT,
    SPARSE_BOXPLOT, TWO_STAGE_BOXPLOT,
};
use sfbox::fdata::{CompleteCurves, Grid, GridMask, SparseSampleSet};
use sfbox::fpca::{bmfpca_fit_with_resamples, fit_mfpca, mfpca_fit_curves, FpcaOptions};
use sfbox::render::{boxplot_svg, emit_json, intensity_boxplot_svg, GeometryDocument, StyleConfig};
use sfbox::seeding;
use sfbox::simgen::{generate, sparsify, SimConfig, SparsifyConfig, SparsityKind};

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(n: u32, pass: bool, detail: &str) {
    println!("criterion {n}: {} {detail}", if pass { "PASS" } else { "FAIL" });
}

const REPS: usize = 100;
const POINT: SparsityKind = SparsityKind::Point;

fn detection_config(models: Vec<u8>, p_curves: Vec<f64>) -> StudyConfig {
    StudyConfig {
        models,
        kinds: vec![POINT],
        p_curves,
        p_sparse: 1.0,
        replications: REPS,
        n: 100,
        bootstrap: 100,
        ..StudyConfig::default()
    }
}

/// Models 2-8 at p_curve = 0.2, shared by criteria 1-3.
fn detection_report() -> &'static EvalReport {
    static REPORT: OnceLock<EvalReport> = OnceLock::new();
    REPORT.get_or_init(|| run_detection_study(&detection_config((2..=8).collect(), vec![0.2])).unwrap())
}

/// (mean p_c, mean p_f, missing replications) of one cell.
fn rates(r: &EvalReport, model: u8, p_curve: f64, method: &str) -> (f64, f64, usize) {
    let cell = r.cell(model, POINT, p_curve, method).expect("cell present");
    let d = cell.detection.as_ref().expect("detection summary");
    (d.mean_pc.unwrap_or(f64::NAN), d.mean_pf, cell.missing)
}

#[test]
fn criterion_1_model_2_two_stage_detection() {
    let _g = serial();
    let extra = run_detection_study(&detection_config(vec![2], vec![0.4, 0.6])).unwrap();
    let shared = detection_report();
    let mut pass = true;
    let mut detail = Vec::new();
    for pc in [0.2, 0.4, 0.6] {
        let r = if pc == 0.2 { shared } else { &extra };
        let (mpc, mpf, missing) = rates(r, 2, pc, TWO_STAGE_BOXPLOT);
        pass &= mpc >= 99.0 && mpf <= 0.5;
        detail.push(format!("p_curve {pc}: p_c {mpc:.1} (>= 99.0), p_f {mpf:.2} (<= 0.5), missing {missing}"));
    }
    verdict(1, pass, &detail.join("; "));
    assert!(pass);
}

#[test]
fn criterion_2_model_4_two_stage_detection() {
    let _g = serial();
    let (mpc, mpf, missing) = rates(detection_report(), 4, 0.2, TWO_STAGE_BOXPLOT);
    let pass = (90.0..=100.0).contains(&mpc) && mpf <= 1.0;
    verdict(2, pass, &format!("p_c {mpc:.1} in [90, 100], p_f {mpf:.2} (<= 1.0), missing {missing}"));
    assert!(pass);
}

#[test]
fn criterion_3_two_stage_dominates_sparse_boxplot() {
    let _g = serial();
    let r = detection_report();
    let mut pass = true;
    let mut detail = Vec::new();
    for model in 2..=8u8 {
        let (two, _, _) = rates(r, model, 0.2, TWO_STAGE_BOXPLOT);
        let (sparse, _, _) = rates(r, model, 0.2, SPARSE_BOXPLOT);
        let mut ok = two >= sparse;
        if matches!(model, 5 | 7 | 8) {
            ok &= sparse <= 1.0;
        }
        pass &= ok;
        detail.push(format!("M{model} two-stage {two:.1} vs sparse {sparse:.1}"));
    }
    verdict(3, pass, &detail.join(", "));
    assert!(pass);
}

#[test]
fn criterion_4_bmfpca_depth_ranks_best() {
    let _g = serial();
    let c = StudyConfig {
        models: vec![1],
        kinds: vec![POINT],
        p_curves: vec![0.2, 0.4],
        replications: 50,
        ..StudyConfig::default()
    };
    let r = run_depth_study(&c).unwrap();
    let median = |pc: f64, m: &str| {
        r.cell(1, POINT, pc, m).and_then(|c| c.spearman.as_ref()).map_or(f64::NAN, |s| s.median)
    };
    let others = ["mfhd_mfpca", "rmfhd_aw", "rmfhd_naw", "rmfhd_dm"];
    let mut pass = true;
    let mut detail = Vec::new();
    for pc in [0.2, 0.4] {
        let best = median(pc, "mfhd_bmfpca");
        let rest: Vec<String> = others
            .iter()
            .map(|m| {
                let v = median(pc, m);
                pass &= best >= v;
                format!("{m} {v:.4}")
            })
            .collect();
        detail.push(format!("p_curve {pc}: mfhd_bmfpca {best:.4} vs {}", rest.join(", ")));
    }
    verdict(4, pass, &detail.join("; "));
    assert!(pass);
}

#[test]
fn criterion_5_bootstrap_band_coverage() {
    let _g = serial();
    let c = StudyConfig {
        models: vec![1],
        kinds: vec![POINT],
        p_curves: vec![0.2],
        replications: REPS,
        bootstrap: 100,
        ..StudyConfig::default()
    };
    let r = ci_coverage_study(&c, 0.05).unwrap();
    let cov = |m: &str| r.cell(1, POINT, 0.2, m).and_then(|c| c.coverage).unwrap_or(f64::NAN);
    let (b, plain) = (cov(BMFPCA_FIT), cov(MFPCA_FIT));
    let pass = (0.90..=0.985).contains(&b);
    verdict(5, pass, &format!("bmfpca coverage {b:.4} in [0.90, 0.985] (mfpca {plain:.4})"));
    assert!(pass);
}

// ---- criterion 6 oracles ----

fn depth_1d_oracle(pts: &[f64], x: f64) -> f64 {
    let below = pts.iter().filter(|&&v| v <= x).count();
    let above = pts.iter().filter(|&&v| v >= x).count();
    below.min(above) as f64 / pts.len() as f64
}

/// Minimum closed half-plane count over directions between consecutive
/// critical angles; a point equal to `x` lies in every half-plane.
fn depth_2d_oracle(pts: &[f64], x: [f64; 2]) -> f64 {
    let n = pts.len() / 2;
    let mut angles = Vec::new();
    for q in pts.chunks_exact(2) {
        let (dx, dy) = (q[0] - x[0], q[1] - x[1]);
        if dx != 0.0 || dy != 0.0 {
            let a = dy.atan2(dx);
            for s in [a + std::f64::consts::FRAC_PI_2, a - std::f64::consts::FRAC_PI_2] {
                angles.push(s.rem_euclid(std::f64::consts::TAU));
            }
        }
    }
    if angles.is_empty() {
        return 1.0;
    }
    angles.sort_by(f64::total_cmp);
    let mut best = n;
    for k in 0..angles.len() {
        let next = if k + 1 < angles.len() { angles[k + 1] } else { angles[0] + std::f64::consts::TAU };
        let mid = 0.5 * (angles[k] + next);
        let u = [mid.cos(), mid.sin()];
        let count = pts.chunks_exact(2).filter(|q| u[0] * (q[0] - x[0]) + u[1] * (q[1] - x[1]) >= 0.0).count();
        best = best.min(count);
    }
    best as f64 / n as f64
}

fn mbd_oracle(c: &CompleteCurves) -> Vec<f64> {
    let (n, p, len) = (c.n(), c.p(), c.grid().len());
    (0..n)
        .map(|i| {
            let mut total = 0.0;
            let mut pairs = 0.0;
            for a in 0..n {
                for b in a + 1..n {
                    let mut inside = 0usize;
                    for j in 0..p {
                        for t in 0..len {
                            let (lo, hi) = {
                                let (u, v) = (c.get(a, j, t), c.get(b, j, t));
                                (u.min(v), u.max(v))
                            };
                            let y = c.get(i, j, t);
                            inside += usize::from(lo <= y && y <= hi);
                        }
                    }
                    total += inside as f64 / (p * len) as f64;
                    pairs += 1.0;
                }
            }
            total / pairs
        })
        .collect()
}

fn random_curves(rng: &mut impl Rng, n: usize, p: usize, len: usize, coarse: bool) -> CompleteCurves {
    let grid = Grid::equidistant(len, 0.0, 1.0).unwrap();
    let values = (0..n * p * len)
        .map(|_| if coarse { rng.random_range(-3..=3) as f64 } else { rng.random_range(-2.0..2.0) })
        .collect();
    CompleteCurves::new(n, p, grid, values).unwrap()
}

fn sim(model: u8, n: usize, p: usize, seed: u64) -> CompleteCurves {
    generate(&SimConfig { model, n, p, seed, ..SimConfig::default() }).unwrap().observed
}

fn cli_pipeline(data: &Path, dir: &Path, tag: &str, extra: &[&str]) -> (Vec<u8>, Vec<u8>) {
    let svg = dir.join(format!("{tag}.svg"));
    let out = Command::new(env!("CARGO_BIN_EXE_sfbox"))
        .args(["pipeline", "--in", data.to_str().unwrap(), "--svg", svg.to_str().unwrap()])
        .args(extra)
        .output()
        .expect("run sfbox");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    (fs::read(&svg).unwrap(), fs::read(svg.with_extension("json")).unwrap())
}

#[test]
fn criterion_6_property_suites() {
    let _g = serial();
    let start = Instant::now();
    let mut rng = seeding::stream(2024, &[6]);
    let mut failures: Vec<String> = Vec::new();

    // exact halfspace depth, p = 1 and p = 2
    let mut worst = 0.0f64;
    for k in 0..200 {
        let n = rng.random_range(1..=25);
        let coarse = k % 2 == 0;
        let draw = |rng: &mut seeding::Rng| {
            if coarse {
                rng.random_range(-3..=3) as f64
            } else {
                rng.random_range(-1.0..1.0)
            }
        };
        let pts1: Vec<f64> = (0..n).map(|_| draw(&mut rng)).collect();
        let x1 = if k % 3 == 0 { pts1[0] } else { draw(&mut rng) };
        worst = worst.max((halfspace_depth(&pts1, 1, &[x1], 0).unwrap() - depth_1d_oracle(&pts1, x1)).abs());
        let pts2: Vec<f64> = (0..2 * n).map(|_| draw(&mut rng)).collect();
        let x2 = if k % 3 == 0 { [pts2[0], pts2[1]] } else { [draw(&mut rng), draw(&mut rng)] };
        worst = worst.max((halfspace_depth(&pts2, 2, &x2, 0).unwrap() - depth_2d_oracle(&pts2, x2)).abs());
    }
    if worst > 1e-12 {
        failures.push(format!("halfspace depth off by {worst}"));
    }

    // MBD against all pairs
    let mut worst = 0.0f64;
    for k in 0..100 {
        let n = rng.random_range(2..=8);
        let p = rng.random_range(1..=3);
        let len = rng.random_range(2..=9);
        let c = random_curves(&mut rng, n, p, len, k % 2 == 0);
        for (a, b) in mbd(&c).values.iter().zip(mbd_oracle(&c)) {
            worst = worst.max((a - b).abs());
        }
    }
    if worst > 1e-12 {
        failures.push(format!("MBD off by {worst}"));
    }

    // time weights sum to one
    for trial in 0..10 {
        let c = sim(1, 40, 2, 100 + trial);
        for w in [WeightScheme::constant(), WeightScheme::volume(None)] {
            let weights = cell_weights(&c, &w, 200).unwrap();
            let s: f64 = weights.iter().sum();
            if (s - 1.0).abs() > 1e-12 || weights.iter().any(|&v| v < 0.0) {
                failures.push(format!("{:?} weights sum to {s}", w.kind));
            }
        }
    }

    // MFHD ranks survive pointwise affine maps
    for trial in 0..20 {
        let c = sim(if trial % 2 == 0 { 1 } else { 6 }, 30, 2, 200 + trial);
        let before = mfhd(&c, &WeightScheme::constant(), 0).unwrap();
        let mut mapped = c.clone();
        for t in 0..c.grid().len() {
            let a = loop {
                let a: [f64; 4] = std::array::from_fn(|_| rng.random_range(-2.0..2.0));
                if (a[0] * a[3] - a[1] * a[2]).abs() > 0.2 {
                    break a;
                }
            };
            let b = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
            for i in 0..c.n() {
                let (y0, y1) = (c.get(i, 0, t), c.get(i, 1, t));
                mapped.set(i, 0, t, a[0] * y0 + a[1] * y1 + b[0]);
                mapped.set(i, 1, t, a[2] * y0 + a[3] * y1 + b[1]);
            }
        }
        let after = mfhd(&mapped, &WeightScheme::constant(), 0).unwrap();
        if before.ranks != after.ranks {
            failures.push(format!("affine trial {trial} changed the ranks"));
        }
    }

    // complete data: the sparse boxplot is the plain one and has no intensity
    for (model, p) in [(2u8, 1usize), (4, 2), (6, 3)] {
        let c = sim(model, 50, p, 300 + model as u64);
        let d = if p == 1 { mbd(&c) } else { mfhd(&c, &WeightScheme::constant(), 100).unwrap() };
        let full = GridMask::filled(c.n(), c.p(), c.grid().len(), true);
        let opts = BoxplotOptions::default();
        let sparse = functional_boxplot(&c, &d, Some(&full), &opts).unwrap();
        let plain = functional_boxplot(&c, &d, None, &opts).unwrap();
        if sparse != plain {
            failures.push(format!("model {model}: complete-data sparse boxplot differs"));
        }
        let field = intensity_field(&full, &c, &sparse.central_region(), &IntensityOptions::default());
        if !field.is_zero() || field.total_mass() != 0.0 {
            failures.push(format!("model {model}: intensity of complete data is not zero"));
        }
    }

    // one bootstrap resample equal to the sample reproduces the plain fit
    {
        let d = generate(&SimConfig { model: 1, n: 40, p: 2, seed: 400, ..SimConfig::default() }).unwrap();
        let mask = sparsify(
            &d.observed,
            &SparsifyConfig { kind: POINT, p_sparse: 1.0, p_curve: 0.3, seed: 401 },
        );
        let set = SparseSampleSet::from_masked_curves(&d.observed, &mask).unwrap();
        let opts = FpcaOptions::default();
        let model = fit_mfpca(&set, d.observed.grid(), &opts).unwrap();
        let direct = mfpca_fit_curves(&model, 0.05).unwrap();
        let boot = bmfpca_fit_with_resamples(model.data(), &[(0..40).collect()], 0.05, &opts).unwrap();
        if direct.fitted != boot.fitted || direct.lower != boot.lower || direct.upper != boot.upper {
            failures.push("B = 1 identity resample differs from the plain fit".into());
        }
    }

    // byte-identical SVG and JSON, in process and through the CLI
    {
        let c = sim(4, 40, 2, 500);
        let d = mfhd(&c, &WeightScheme::constant(), 100).unwrap();
        let mask = sparsify(&c, &SparsifyConfig { kind: SparsityKind::Peak, p_sparse: 1.0, p_curve: 0.3, seed: 501 });
        let style = StyleConfig::default();
        let render = || {
            let g = functional_boxplot(&c, &d, Some(&mask), &BoxplotOptions::default()).unwrap();
            let field = intensity_field(&mask, &c, &g.central_region(), &IntensityOptions::default());
            let svg = boxplot_svg(&g, &style).unwrap() + &intensity_boxplot_svg(&g, &field, &style).unwrap();
            (svg, emit_json(&GeometryDocument::new(g, Some(field))))
        };
        if render() != render() {
            failures.push("in-process SVG/JSON output is not deterministic".into());
        }

        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data.csv");
        let set = SparseSampleSet::from_masked_curves(&c, &mask).unwrap();
        let mut buf = Vec::new();
        sfbox::fdata::export_long_csv(&set, &mut buf).unwrap();
        fs::write(&data, buf).unwrap();
        let extra = ["--bootstrap", "10", "--sparse-boxplot", "--two-stage", "--intensity", "--seed", "3"];
        let a = cli_pipeline(&data, dir.path(), "a", &extra);
        let b = cli_pipeline(&data, dir.path(), "b", &extra);
        if a != b {
            failures.push("CLI SVG/JSON output is not deterministic".into());
        }
    }

    let secs = start.elapsed().as_secs_f64();
    if secs >= 60.0 {
        failures.push(format!("took {secs:.1} s"));
    }
    let pass = failures.is_empty();
    let detail = if pass { format!("all property suites hold ({secs:.1} s < 60 s)") } else { failures.join("; ") };
    verdict(6, pass, &detail);
    assert!(pass);
}

/// Fitted CD4 counts must stay inside this range (cells per cubic millimetre).
const CD4_BAND: (f64, f64) = (0.0, 3500.0);

#[test]
fn criterion_7_cd4_pipeline_smoke() {
    let _g = serial();
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/cd4_synthetic.csv");
    let dir = tempfile::tempdir().unwrap();
    let run = |tag: &str| {
        let out_dir = dir.path().join(tag);
        let (svg, json) = cli_pipeline(
            &data,
            dir.path(),
            tag,
            &[
                "--grid-len", "61", "--sparse-boxplot", "--two-stage", "--intensity", "--seed", "11", "--out-dir",
                out_dir.to_str().unwrap(),
            ],
        );
        let fitted = fs::read_to_string(out_dir.join("fitted.csv")).unwrap();
        let values: Vec<f64> = fitted
            .lines()
            .skip(1)
            .flat_map(|l| l.split(',').skip(2).map(|v| v.parse::<f64>().unwrap()).collect::<Vec<_>>())
            .collect();
        let doc = sfbox::render::parse_json(std::str::from_utf8(&json).unwrap()).unwrap();
        let stage1 = doc.boxplot.outliers_of(sfbox::boxplot::Stage::Stage1).len();
        let stage2 = doc.boxplot.outliers_of(sfbox::boxplot::Stage::Stage2).len();
        (svg, values, doc.boxplot.n, doc.boxplot.grid.len(), stage1, stage2)
    };
    let (svg_a, fit_a, n, len, s1a, s2a) = run("a");
    let (svg_b, fit_b, _, _, s1b, s2b) = run("b");
    let lo = fit_a.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = fit_a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let in_band = lo >= CD4_BAND.0 && hi <= CD4_BAND.1;
    let stable = (s1a, s2a) == (s1b, s2b) && fit_a == fit_b && svg_a == svg_b;
    let pass = !svg_a.is_empty() && n == 366 && len == 61 && in_band && stable;
    verdict(
        7,
        pass,
        &format!(
            "{n} subjects on {len} grid points, fitted range [{lo:.0}, {hi:.0}] within [{}, {}], \
             outliers {s1a}+{s2a} then {s1b}+{s2b}",
            CD4_BAND.0, CD4_BAND.1
        ),
    );
    assert!(pass);
}
