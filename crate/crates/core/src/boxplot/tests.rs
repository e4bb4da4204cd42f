use proptest::prelude::*;

use super::*;
use crate::depth::{mfhd, DepthMethod, WeightScheme};
use crate::fdata::Grid;
use crate::simgen::{generate, sparsify, SimConfig, SparsifyConfig, SparsityKind};

fn curves(n: usize, p: usize, len: usize, f: impl Fn(usize, usize, usize) -> f64) -> CompleteCurves {
    let grid = Grid::equidistant(len, 0.0, 1.0).unwrap();
    let mut out = CompleteCurves::zeros(n, p, grid);
    for i in 0..n {
        for j in 0..p {
            for c in 0..len {
                out.set(i, j, c, f(i, j, c));
            }
        }
    }
    out
}

fn report(values: Vec<f64>) -> DepthReport {
    DepthReport::new(DepthMethod::Mfhd, values)
}

fn no_flags(n: usize) -> OutlyingnessReport {
    OutlyingnessReport {
        mo: vec![vec![0.0]; n],
        vo: vec![0.0; n],
        distances: vec![0.0; n],
        cutoff: 1.0,
        rule: Default::default(),
        flagged: vec![false; n],
    }
}

fn flags(n: usize, which: &[usize]) -> OutlyingnessReport {
    let mut r = no_flags(n);
    which.iter().for_each(|&i| r.flagged[i] = true);
    r
}

#[test]
fn central_region_examples() {
    let c = curves(4, 1, 5, |i, _, _| (i + 1) as f64);
    let r = central_region(&c, &report(vec![0.1, 0.5, 0.4, 0.2])).unwrap();
    assert_eq!(r.members, vec![1, 2]);
    assert_eq!(r.median, 1);
    assert!(r.lower[0].iter().all(|&v| v == 2.0));
    assert!(r.upper[0].iter().all(|&v| v == 3.0));

    let same = curves(5, 2, 4, |_, j, t| (j + t) as f64);
    let r = central_region(&same, &report(vec![0.5; 5])).unwrap();
    assert_eq!(r.lower, r.upper);

    let three = curves(3, 1, 2, |i, _, _| i as f64);
    assert_eq!(central_region(&three, &report(vec![0.3, 0.6, 0.3])).unwrap().members.len(), 2);
    let one = curves(1, 1, 2, |_, _, _| 0.0);
    assert_eq!(central_region(&one, &report(vec![1.0])), Err(BoxplotError::TooFewCurves(1)));
}

#[test]
fn fences_and_fence_outliers() {
    let c = curves(5, 1, 6, |i, _, _| [1.0, 2.0, 3.0, 4.0, 10.0][i]);
    let d = report(vec![0.2, 0.5, 0.4, 0.3, 0.1]);
    let g = functional_boxplot(&c, &d, None, &BoxplotOptions::default()).unwrap();
    let v = &g.variables[0];
    assert!(v.envelope_lower.iter().all(|&x| x == 2.0) && v.envelope_upper.iter().all(|&x| x == 4.0));
    // width 2, factor 1.5
    assert!(v.fence_lower.iter().all(|&x| x == -1.0) && v.fence_upper.iter().all(|&x| x == 7.0));
    assert_eq!(g.outliers_of(Stage::Stage2), vec![4]);
    assert!(v.whisker_upper.iter().all(|&x| x == 4.0) && v.whisker_lower.iter().all(|&x| x == 1.0));
    assert_eq!(g.median, 1);
    assert!(g.outliers[0].tags[0].iter().all(|&t| t == CellTag::ObservedStage2));

    // the spec's envelope [2, 3] example
    let c = curves(4, 1, 3, |i, _, _| [2.0, 3.0, 10.0, 2.5][i]);
    let d = report(vec![0.5, 0.4, 0.1, 0.3]);
    let g = functional_boxplot(&c, &d, None, &BoxplotOptions::default()).unwrap();
    assert!(g.variables[0].fence_lower.iter().all(|&x| x == 0.5));
    assert!(g.variables[0].fence_upper.iter().all(|&x| x == 4.5));
    assert_eq!(g.outliers_of(Stage::Stage2), vec![2]);
    assert!(matches!(
        functional_boxplot(&c, &d, None, &BoxplotOptions { factor: 0.0, ..Default::default() }),
        Err(BoxplotError::Factor(_))
    ));
}

fn model_one(seed: u64) -> (CompleteCurves, DepthReport) {
    let d = generate(&SimConfig { seed, ..SimConfig::default() }).unwrap().signal;
    let r = mfhd(&d, &WeightScheme::constant(), 200).unwrap();
    (d, r)
}

#[test]
fn complete_mask_reduces_to_functional_boxplot() {
    let (c, d) = model_one(1);
    let opts = BoxplotOptions::default();
    let plain = functional_boxplot(&c, &d, None, &opts).unwrap();
    let full = GridMask::filled(c.n(), c.p(), c.grid().len(), true);
    let sparse = functional_boxplot(&c, &d, Some(&full), &opts).unwrap();
    assert_eq!(plain, sparse);
    for v in &plain.variables {
        assert!(v.sparseness.proportion.iter().all(|&s| s == 0.0));
        assert_eq!(v.sparseness.boundary, v.envelope_upper);
        assert!(v.median_observed.iter().all(|&o| o));
    }
    let region = central_region(&c, &d).unwrap();
    assert_eq!(plain.central_region(), region);
    let field = intensity_field(&full, &c, &region, &IntensityOptions::default());
    assert!(field.is_zero());
    assert!(field.panels.is_empty());
    assert_eq!(field.total_mass(), 0.0);
}

#[test]
fn two_stage_without_flags_matches_functional() {
    let (c, d) = model_one(2);
    let opts = BoxplotOptions::default();
    let a = functional_boxplot(&c, &d, None, &opts).unwrap();
    let b = two_stage_boxplot(&c, &d, &no_flags(c.n()), None, &opts).unwrap();
    assert_eq!(a, b);
}

#[test]
fn two_stage_rebuilds_region_on_the_remainder() {
    let (mut c, d) = model_one(3);
    for j in 0..3 {
        c.curve_mut(7, j).iter_mut().for_each(|v| *v += 30.0);
    }
    let deepest = d.order()[0];
    let outl = flags(c.n(), &[7, deepest]);
    let mask = sparsify(&c, &SparsifyConfig { kind: SparsityKind::Point, p_sparse: 1.0, p_curve: 0.3, seed: 4 });
    let g = two_stage_boxplot(&c, &d, &outl, Some(&mask), &BoxplotOptions::default()).unwrap();
    assert_eq!(g.kind, BoxplotKind::TwoStage);
    assert_ne!(g.median, deepest);
    assert_eq!(g.median, d.order()[1]);
    assert_eq!(g.members.len(), 49);
    assert!(!g.members.contains(&deepest));
    let region = g.central_region();
    assert_eq!((region.median, region.members.len()), (g.median, 49));
    let s1 = g.outliers_of(Stage::Stage1);
    let s2 = g.outliers_of(Stage::Stage2);
    assert_eq!(s1, vec![7.min(deepest), 7.max(deepest)]);
    assert!(s2.iter().all(|i| !s1.contains(i)));
    let flagged: Vec<usize> = (0..c.n()).filter(|&i| g.outlier_flags()[i]).collect();
    let mut union = [s1.clone(), s2].concat();
    union.sort_unstable();
    assert_eq!(flagged, union);
    let o = g.outliers.iter().find(|o| o.subject == 7).unwrap();
    for j in 0..3 {
        for t in 0..c.grid().len() {
            let want = if mask.get(7, j, t) { CellTag::ObservedStage1 } else { CellTag::Missing };
            assert_eq!(o.tags[j][t], want);
        }
    }
    let all: Vec<usize> = (0..c.n() - 1).collect();
    assert!(matches!(
        two_stage_boxplot(&c, &d, &flags(c.n(), &all), None, &BoxplotOptions::default()),
        Err(BoxplotError::DegenerateRemainder { .. })
    ));
}

#[test]
fn envelope_contains_median_and_fences_contain_whiskers() {
    for seed in 0..5 {
        let (c, d) = model_one(seed);
        let g = functional_boxplot(&c, &d, None, &BoxplotOptions::default()).unwrap();
        for v in &g.variables {
            for t in 0..g.grid.len() {
                assert!(v.envelope_lower[t] <= v.median[t] && v.median[t] <= v.envelope_upper[t]);
                assert!(v.fence_lower[t] <= v.whisker_lower[t] && v.whisker_upper[t] <= v.fence_upper[t]);
                assert!(v.whisker_lower[t] <= v.envelope_lower[t] && v.envelope_upper[t] <= v.whisker_upper[t]);
            }
        }
    }
}

#[test]
fn sparseness_profile_examples() {
    let grid: Vec<f64> = (0..5).map(|c| c as f64 / 4.0).collect();
    let mut mask = GridMask::filled(4, 1, 5, true);
    mask.set(0, 0, 2, false);
    mask.set(3, 0, 2, false);
    let lower = [0.0; 5];
    let upper = [2.0; 5];
    let s = sparseness_profile(Some(&mask), &[0, 1, 3, 2], 0, &grid, &lower, &upper, Some(1e-3));
    assert_eq!(s.proportion, vec![0.0, 0.0, 0.5, 0.0, 0.0]);
    // with a tiny bandwidth the boundary crosses the reference line at t_2
    assert!((s.boundary[2] - 1.0).abs() < 1e-9);
    // only members count
    let mut other = mask.clone();
    other.set(1, 0, 4, false);
    let s2 = sparseness_profile(Some(&other), &[0, 3], 0, &grid, &lower, &upper, None);
    assert_eq!(s2.proportion, vec![0.0, 0.0, 1.0, 0.0, 0.0]);
    assert!(s2.observed_smooth.iter().all(|&v| (0.0..=1.0).contains(&v)));
}

#[test]
fn point_sparseness_gives_expected_proportion() {
    let (c, d) = model_one(9);
    let mask = sparsify(&c, &SparsifyConfig { kind: SparsityKind::Point, p_sparse: 1.0, p_curve: 0.2, seed: 9 });
    let g = functional_boxplot(&c, &d, Some(&mask), &BoxplotOptions::default()).unwrap();
    for v in &g.variables {
        let mean = v.sparseness.proportion.iter().sum::<f64>() / v.sparseness.proportion.len() as f64;
        assert!((0.15..=0.25).contains(&mean), "{mean}");
    }
}

#[test]
fn intensity_normalization_and_mass() {
    let (c, d) = model_one(5);
    let region = central_region(&c, &d).unwrap();
    let mask_at = |pc: f64| sparsify(&c, &SparsifyConfig { kind: SparsityKind::Point, p_sparse: 1.0, p_curve: pc, seed: 5 });
    let opts = IntensityOptions::default();
    let low = intensity_field(&mask_at(0.2), &c, &region, &opts);
    let high = intensity_field(&mask_at(0.6), &c, &region, &opts);
    assert!(high.total_mass() > low.total_mass());
    for panel in &low.panels {
        assert!((panel.max() - 1.0).abs() < 1e-9);
        assert!(panel.values.iter().all(|&v| v >= 0.0));
        assert_eq!(panel.values.len(), INTENSITY_CELLS * INTENSITY_CELLS);
    }
    let global = intensity_field(&mask_at(0.2), &c, &region, &IntensityOptions { normalization: Normalization::Global, ..opts });
    let maxima: Vec<f64> = global.panels.iter().map(|p| p.max()).collect();
    assert!(maxima.iter().all(|&m| m <= 1.0 + 1e-12));
    assert!(maxima.iter().any(|&m| (m - 1.0).abs() < 1e-12));
    // clipped to the envelope
    let p0 = &low.panels[0];
    for r in 0..p0.rows {
        for col in 0..p0.cols {
            let [x, y] = p0.cell_center(r, col);
            let lo = c.grid().interpolate(&region.lower[0], x);
            let hi = c.grid().interpolate(&region.upper[0], x);
            if y < lo || y > hi {
                assert_eq!(p0.get(r, col), 0.0);
            }
        }
    }
}

#[test]
fn contours_trace_the_level() {
    // one blob of events in the middle of a wide constant envelope
    let grid = Grid::equidistant(21, 0.0, 1.0).unwrap();
    let n = 4;
    let mut c = CompleteCurves::zeros(n, 1, grid);
    let mut mask = GridMask::filled(n, 1, 21, true);
    for i in 0..n {
        for t in 0..21 {
            c.set(i, 0, t, if i % 2 == 0 { -1.0 } else { 1.0 });
        }
    }
    let region = CentralRegion { members: vec![0, 1], median: 0, lower: vec![vec![-1.0; 21]], upper: vec![vec![1.0; 21]] };
    c.set(1, 0, 10, 0.0);
    mask.set(1, 0, 10, false);
    let opts = IntensityOptions { bandwidths: Some((0.1, 0.2)), ..Default::default() };
    let f = intensity_field(&mask, &c, &region, &opts);
    let panel = &f.panels[0];
    assert_eq!(panel.events, 1);
    let half = panel.contours.iter().find(|k| k.level == 0.5).unwrap();
    assert_eq!(half.lines.len(), 1);
    let line = &half.lines[0];
    assert_eq!(line.first(), line.last(), "closed loop");
    // a Gaussian bump's half-level set is the ellipse with
    // (x/0.1)^2 + (y/0.2)^2 = 2 ln 2
    for [x, y] in line {
        let r = ((x - 0.5) / 0.1).powi(2) + (y / 0.2).powi(2);
        assert!((r - 2.0 * 2f64.ln()).abs() < 0.05, "{x} {y} {r}");
    }
}

proptest! {
    #[test]
    fn geometry_depends_on_ranks_only(seed in 0u64..20, scale in 0.1f64..0.9) {
        let c = curves(12, 2, 6, |i, j, t| ((i * 7 + j * 3 + t) % 11) as f64 + 0.1 * i as f64);
        let values: Vec<f64> = (0..12).map(|i| ((i as u64 * 5 + seed) % 12) as f64 / 12.0).collect();
        let a = report(values.clone());
        let b = report(values.iter().map(|v| v * scale + 0.01).collect());
        prop_assert_eq!(&a.ranks, &b.ranks);
        let opts = BoxplotOptions::default();
        prop_assert_eq!(functional_boxplot(&c, &a, None, &opts).unwrap(), functional_boxplot(&c, &b, None, &opts).unwrap());
    }

    #[test]
    fn membership_is_the_top_half_by_rank(n in 2usize..30, seed in 0u64..100) {
        let c = curves(n, 1, 3, |i, _, t| (i + t) as f64);
        let values: Vec<f64> = (0..n).map(|i| ((i as u64 * 31 + seed * 17) % 7) as f64).collect();
        let d = report(values);
        let r = central_region(&c, &d).unwrap();
        prop_assert_eq!(r.members.len(), n.div_ceil(2));
        for i in 0..n {
            prop_assert_eq!(r.members.contains(&i), d.ranks[i] <= n.div_ceil(2));
        }
    }
}
