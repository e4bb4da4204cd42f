//! Browser bindings for the static demo page in `www/`.
//!
//! A [`Demo`] simulates one sample, hides cells and fits it once; the page
//! then asks for a sparse (two-stage) boxplot, an intensity boxplot or the
//! depth ranking without refitting. The logic lives in [`Session`] so it can
//! be tested natively.

use serde_json::json;
use wasm_bindgen::prelude::*;

use sfbox::boxplot::{
    functional_boxplot, intensity_field, two_stage_boxplot, BoxplotGeometry, BoxplotOptions, IntensityOptions,
    Normalization,
};
use sfbox::depth::{directional_outlyingness, mfhd, DepthReport, WeightScheme, DEFAULT_CUTOFF_Q};
use sfbox::fdata::{CompleteCurves, GridMask, SparseSampleSet};
use sfbox::fpca::{bmfpca_fit_prepared, fit_mfpca, FpcaOptions};
use sfbox::render::{boxplot_svg, intensity_boxplot_svg, StyleConfig};
use sfbox::seeding;
use sfbox::simgen::{generate, sparsify, SimConfig, SparsifyConfig, SparsityKind};

/// Fewer projection directions than the library default keep p = 3 snappy.
const NDIRS: usize = 200;

#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    pub model: u8,
    pub n: usize,
    pub p: usize,
    pub p_curve: f64,
    pub kind: SparsityKind,
    pub bootstrap: usize,
    pub seed: u64,
}

/// One simulated, sparsified and fitted sample.
pub struct Session {
    fitted: CompleteCurves,
    mask: GridMask,
    truth: Vec<bool>,
    depth: DepthReport,
    style: StyleConfig,
}

impl Session {
    pub fn new(p: &Params) -> Result<Self, String> {
        let err = |e: &dyn std::fmt::Display| e.to_string();
        let data = generate(&SimConfig {
            model: p.model,
            n: p.n,
            p: p.p,
            seed: seeding::derive(p.seed, &[1]),
            ..SimConfig::default()
        })
        .map_err(|e| err(&e))?;
        let mask = sparsify(
            &data.observed,
            &SparsifyConfig {
                kind: p.kind,
                p_sparse: 1.0,
                p_curve: p.p_curve,
                seed: seeding::derive(p.seed, &[2]),
            },
        );
        let set = SparseSampleSet::from_masked_curves(&data.observed, &mask).map_err(|e| err(&e))?;
        let opts = FpcaOptions::default();
        let model = fit_mfpca(&set, data.observed.grid(), &opts).map_err(|e| err(&e))?;
        let fit = bmfpca_fit_prepared(model.data(), p.bootstrap.max(1), 0.05, seeding::derive(p.seed, &[3]), &opts)
            .map_err(|e| err(&e))?;
        let depth = mfhd(&fit.fitted, &WeightScheme::constant(), NDIRS).map_err(|e| err(&e))?;
        Ok(Self { fitted: fit.fitted, mask, truth: data.truth, depth, style: StyleConfig::default() })
    }

    fn geometry(&self, two_stage: bool, factor: f64) -> Result<BoxplotGeometry, String> {
        let opts = BoxplotOptions { factor, ..BoxplotOptions::default() };
        let g = if two_stage {
            let outl = directional_outlyingness(&self.fitted, DEFAULT_CUTOFF_Q, NDIRS).map_err(|e| e.to_string())?;
            two_stage_boxplot(&self.fitted, &self.depth, &outl, Some(&self.mask), &opts)
        } else {
            functional_boxplot(&self.fitted, &self.depth, Some(&self.mask), &opts)
        };
        g.map_err(|e| e.to_string())
    }

    pub fn boxplot_svg(&self, two_stage: bool, factor: f64) -> Result<String, String> {
        boxplot_svg(&self.geometry(two_stage, factor)?, &self.style).map_err(|e| e.to_string())
    }

    pub fn intensity_svg(&self, two_stage: bool, normalization: &str) -> Result<String, String> {
        let normalization: Normalization = normalization.parse()?;
        let g = self.geometry(two_stage, sfbox::boxplot::DEFAULT_FACTOR)?;
        let opts = IntensityOptions { normalization, ..IntensityOptions::default() };
        let field = intensity_field(&self.mask, &self.fitted, &g.central_region(), &opts);
        intensity_boxplot_svg(&g, &field, &self.style).map_err(|e| e.to_string())
    }

    /// Curves from deepest to least deep, with their true labels.
    pub fn ranking_json(&self) -> String {
        let rows: Vec<_> = self
            .depth
            .order()
            .into_iter()
            .map(|i| json!({ "subject": i + 1, "depth": self.depth.values[i], "rank": self.depth.ranks[i], "outlier": self.truth[i] }))
            .collect();
        json!({ "method": self.depth.method.as_str(), "curves": rows }).to_string()
    }

    pub fn observed_fraction(&self) -> f64 {
        let (n, p, len) = self.mask.dims();
        self.mask.count_present() as f64 / (n * p * len) as f64
    }
}

#[wasm_bindgen]
pub struct Demo(Session);

#[wasm_bindgen]
impl Demo {
    /// `kind` is point, peak or partial.
    #[wasm_bindgen(constructor)]
    pub fn new(model: u8, n: usize, p: usize, p_curve: f64, kind: &str, bootstrap: usize, seed: u32) -> Result<Demo, JsError> {
        let kind: SparsityKind = kind.parse().map_err(|e: String| JsError::new(&e))?;
        let params = Params { model, n, p, p_curve, kind, bootstrap, seed: seed as u64 };
        Session::new(&params).map(Demo).map_err(|e| JsError::new(&e))
    }

    #[wasm_bindgen(js_name = boxplotSvg)]
    pub fn boxplot_svg(&self, two_stage: bool, factor: f64) -> Result<String, JsError> {
        self.0.boxplot_svg(two_stage, factor).map_err(|e| JsError::new(&e))
    }

    #[wasm_bindgen(js_name = intensitySvg)]
    pub fn intensity_svg(&self, two_stage: bool, normalization: &str) -> Result<String, JsError> {
        self.0.intensity_svg(two_stage, normalization).map_err(|e| JsError::new(&e))
    }

    /// JSON `{ method, curves: [{ subject, depth, rank, outlier }] }`.
    #[wasm_bindgen(js_name = rankingJson)]
    pub fn ranking_json(&self) -> String {
        self.0.ranking_json()
    }

    #[wasm_bindgen(js_name = observedFraction)]
    pub fn observed_fraction(&self) -> f64 {
        self.0.observed_fraction()
    }
}
