//! Library-level runs from simulation to rendered output.

use proptest::prelude::*;

use sfbox::boxplot::{intensity_field, two_stage_boxplot, BoxplotOptions, IntensityOptions, Stage};
use sfbox::depth::{directional_outlyingness, mfhd, revised_depths, RevisedVariant, WeightScheme};
use sfbox::fdata::{export_long_csv, ingest_long_csv, CsvSchema, SparseSampleSet};
use sfbox::fpca::{bmfpca_fit, FpcaOptions};
use sfbox::render::{emit_json, intensity_boxplot_svg, parse_json, GeometryDocument, StyleConfig};
use sfbox::simgen::{generate, sparsify, SimConfig, SparsifyConfig, SparsityKind};

#[test]
fn persistent_outliers_are_found_through_the_whole_chain() {
    let data = generate(&SimConfig { model: 2, n: 60, p: 2, seed: 17, ..SimConfig::default() }).unwrap();
    let mask = sparsify(
        &data.observed,
        &SparsifyConfig { kind: SparsityKind::Point, p_sparse: 1.0, p_curve: 0.2, seed: 18 },
    );
    let set = SparseSampleSet::from_masked_curves(&data.observed, &mask).unwrap();

    // the long CSV is a faithful carrier of the sample
    let mut buf = Vec::new();
    export_long_csv(&set, &mut buf).unwrap();
    let back = ingest_long_csv(buf.as_slice(), &CsvSchema::default()).unwrap();
    assert_eq!(back.set, set);

    let fit = bmfpca_fit(&set, data.observed.grid(), 10, 0.05, 3, &FpcaOptions::default()).unwrap();
    let revised = revised_depths(
        &fit.fitted,
        &fit.upper,
        &fit.lower,
        &[RevisedVariant::Aw, RevisedVariant::Naw, RevisedVariant::Dm],
        &WeightScheme::constant(),
        100,
    )
    .unwrap();
    assert_eq!(revised.len(), 3);

    let depth = mfhd(&fit.fitted, &WeightScheme::constant(), 100).unwrap();
    let outl = directional_outlyingness(&fit.fitted, 0.993, 100).unwrap();
    let g = two_stage_boxplot(&fit.fitted, &depth, &outl, Some(&mask), &BoxplotOptions::default()).unwrap();
    let flags = g.outlier_flags();
    let caught = data.truth.iter().zip(&flags).filter(|(t, f)| **t && **f).count();
    assert_eq!(caught, data.truth.iter().filter(|t| **t).count(), "every persistent outlier is flagged");
    assert!(g.outliers_of(Stage::Stage1).len() + g.outliers_of(Stage::Stage2).len() == g.outliers.len());

    let field = intensity_field(&mask, &fit.fitted, &g.central_region(), &IntensityOptions::default());
    assert!(!field.is_zero());
    let svg = intensity_boxplot_svg(&g, &field, &StyleConfig::default()).unwrap();
    for o in &g.outliers {
        assert!(svg.contains(&format!("data-subject=\"{}\"", o.subject)));
    }

    let doc = GeometryDocument::new(g, Some(field));
    assert_eq!(parse_json(&emit_json(&doc)).unwrap(), doc);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sparsified_samples_round_trip_through_csv(
        model in 1u8..=8,
        p in 1usize..=3,
        p_curve in 0.0f64..0.9,
        seed in any::<u64>(),
    ) {
        let data = generate(&SimConfig { model, n: 12, p, seed, ..SimConfig::default() }).unwrap();
        let mask = sparsify(
            &data.observed,
            &SparsifyConfig { kind: SparsityKind::Peak, p_sparse: 0.7, p_curve, seed: seed ^ 1 },
        );
        let set = SparseSampleSet::from_masked_curves(&data.observed, &mask).unwrap();
        prop_assert_eq!(set.total_observations(), mask.count_present());
        let mut buf = Vec::new();
        export_long_csv(&set, &mut buf).unwrap();
        let back = ingest_long_csv(buf.as_slice(), &CsvSchema::default()).unwrap();
        prop_assert_eq!(back.rows, set.total_observations());
        for i in 0..set.n() {
            for j in 0..set.p() {
                prop_assert_eq!(back.set.observations(i, j), set.observations(i, j));
            }
        }
    }
}
