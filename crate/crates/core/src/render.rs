//! Deterministic SVG and JSON output for boxplot geometry and intensity
//! fields.
//!
//! SVG numbers are printed with six significant digits and no locale, so the
//! same geometry always gives the same bytes. JSON keeps full precision so
//! that parsing restores the geometry exactly.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::boxplot::{BoxplotGeometry, CellTag, IntensityField, IntensityPanel, Normalization, Stage, VariableGeometry};

pub const SCHEMA_VERSION: &str = "sfbox.geometry/1";

#[derive(Debug, thiserror::Error)]
pub enum RenderError {
    #[error("invalid colour '{value}' for {field}: expected #RRGGBB")]
    Colour { field: &'static str, value: String },
    #[error("panel size must be positive")]
    PanelSize,
    #[error("invalid geometry JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported schema version '{0}'")]
    Schema(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StyleConfig {
    /// Observed-proportion part of the central region.
    pub central_fill: String,
    /// Sparseness-proportion part of the central region.
    pub sparse_fill: String,
    pub reference_line: String,
    pub stage1_outlier: String,
    pub stage2_outlier: String,
    pub missing_segment: String,
    pub median_observed: String,
    pub median_missing: String,
    pub whisker: String,
    pub stroke_width: f64,
    pub outlier_width: f64,
    pub panel_width: f64,
    pub panel_height: f64,
    /// Intensity colours from zero to the maximum.
    pub colormap: Vec<String>,
    pub contour: String,
    pub show_contours: bool,
}

impl Default for StyleConfig {
    fn default() -> Self {
        Self {
            central_fill: "#FF00FF".into(),
            sparse_fill: "#BEBEBE".into(),
            reference_line: "#00FFFF".into(),
            stage1_outlier: "#00A000".into(),
            stage2_outlier: "#FF0000".into(),
            missing_segment: "#808080".into(),
            median_observed: "#000000".into(),
            median_missing: "#808080".into(),
            whisker: "#0000FF".into(),
            stroke_width: 1.5,
            outlier_width: 1.0,
            panel_width: 420.0,
            panel_height: 300.0,
            colormap: vec!["#FF00FF".into(), "#FFA500".into(), "#FFFF00".into(), "#FFFFFF".into()],
            contour: "#000000".into(),
            show_contours: true,
        }
    }
}

fn parse_hex(s: &str) -> Option<[u8; 3]> {
    let h = s.strip_prefix('#')?;
    if h.len() != 6 || !h.bytes().all(|b| b.is_ascii_hexdigit()) {
        return None;
    }
    let v = u32::from_str_radix(h, 16).ok()?;
    Some([(v >> 16) as u8, (v >> 8) as u8, v as u8])
}

impl StyleConfig {
    pub fn validate(&self) -> Result<(), RenderError> {
        let fields = [
            ("central_fill", &self.central_fill),
            ("sparse_fill", &self.sparse_fill),
            ("reference_line", &self.reference_line),
            ("stage1_outlier", &self.stage1_outlier),
            ("stage2_outlier", &self.stage2_outlier),
            ("missing_segment", &self.missing_segment),
            ("median_observed", &self.median_observed),
            ("median_missing", &self.median_missing),
            ("whisker", &self.whisker),
            ("contour", &self.contour),
        ];
        for (field, value) in fields.into_iter().chain(self.colormap.iter().map(|c| ("colormap", c))) {
            if parse_hex(value).is_none() {
                return Err(RenderError::Colour { field, value: value.clone() });
            }
        }
        if self.colormap.is_empty() {
            return Err(RenderError::Colour { field: "colormap", value: String::new() });
        }
        if !(self.panel_width > 0.0 && self.panel_height > 0.0) {
            return Err(RenderError::PanelSize);
        }
        Ok(())
    }

    /// Colour for a normalized intensity in [0, 1].
    pub fn intensity_colour(&self, v: f64) -> String {
        let stops: Vec<[u8; 3]> = self.colormap.iter().map(|c| parse_hex(c).unwrap_or([0, 0, 0])).collect();
        if stops.len() == 1 {
            return hex(stops[0]);
        }
        let x = v.clamp(0.0, 1.0) * (stops.len() - 1) as f64;
        let k = (x.floor() as usize).min(stops.len() - 2);
        let f = x - k as f64;
        let mix = |a: u8, b: u8| (a as f64 + f * (b as f64 - a as f64)).round() as u8;
        hex([mix(stops[k][0], stops[k + 1][0]), mix(stops[k][1], stops[k + 1][1]), mix(stops[k][2], stops[k + 1][2])])
    }
}

fn hex(c: [u8; 3]) -> String {
    format!("#{:02X}{:02X}{:02X}", c[0], c[1], c[2])
}

/// Six significant digits, no exponent, trailing zeros removed.
pub fn num(x: f64) -> String {
    if !x.is_finite() {
        return "0".into();
    }
    if x == 0.0 {
        return "0".into();
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (5 - magnitude).clamp(0, 17) as usize;
    let mut s = format!("{x:.decimals$}");
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
    if s == "-0" {
        s = "0".into();
    }
    s
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

const MARGIN_LEFT: f64 = 56.0;
const MARGIN_RIGHT: f64 = 16.0;
const MARGIN_TOP: f64 = 28.0;
const MARGIN_BOTTOM: f64 = 36.0;
const LEGEND_HEIGHT: f64 = 26.0;

/// Affine map from data to pixels for one panel.
struct Frame {
    x0: f64,
    y0: f64,
    w: f64,
    h: f64,
    t: (f64, f64),
    v: (f64, f64),
}

impl Frame {
    fn new(panel: usize, style: &StyleConfig, t: (f64, f64), v: (f64, f64)) -> Self {
        let x0 = panel as f64 * style.panel_width + MARGIN_LEFT;
        let w = style.panel_width - MARGIN_LEFT - MARGIN_RIGHT;
        let h = style.panel_height - MARGIN_TOP - MARGIN_BOTTOM;
        let t = if t.1 > t.0 { t } else { (t.0 - 0.5, t.0 + 0.5) };
        let v = if v.1 > v.0 { v } else { (v.0 - 0.5, v.0 + 0.5) };
        Self { x0, y0: MARGIN_TOP, w: w.max(1.0), h: h.max(1.0), t, v }
    }

    fn x(&self, t: f64) -> f64 {
        self.x0 + (t - self.t.0) / (self.t.1 - self.t.0) * self.w
    }

    fn y(&self, v: f64) -> f64 {
        self.y0 + (self.v.1 - v) / (self.v.1 - self.v.0) * self.h
    }

    fn pt(&self, t: f64, v: f64) -> String {
        format!("{},{}", num(self.x(t)), num(self.y(v)))
    }
}

fn points(frame: &Frame, t: &[f64], v: &[f64]) -> String {
    t.iter().zip(v).map(|(&a, &b)| frame.pt(a, b)).collect::<Vec<_>>().join(" ")
}

/// Path data over the segments `c -> c+1` for which `keep(c)` holds.
fn segment_path(frame: &Frame, t: &[f64], v: &[f64], keep: impl Fn(usize) -> bool) -> String {
    let mut d = String::new();
    let mut open = false;
    for c in 0..t.len().saturating_sub(1) {
        if keep(c) {
            if !open {
                let _ = write!(d, "M{}", frame.pt(t[c], v[c]));
                open = true;
            }
            let _ = write!(d, " L{}", frame.pt(t[c + 1], v[c + 1]));
        } else {
            open = false;
        }
    }
    d
}

fn value_range(v: &VariableGeometry, outliers: &[(Stage, &[f64])]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let series = [&v.whisker_lower, &v.whisker_upper, &v.envelope_lower, &v.envelope_upper, &v.median];
    for s in series.iter().map(|s| s.as_slice()).chain(outliers.iter().map(|o| o.1)) {
        for &x in s {
            if x.is_finite() {
                lo = lo.min(x);
                hi = hi.max(x);
            }
        }
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = 0.05 * (hi - lo).max(1e-12);
    (lo - pad, hi + pad)
}

fn header(out: &mut String, width: f64, height: f64) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{}" height="{}" viewBox="0 0 {} {}" font-family="sans-serif" font-size="11">"#,
        num(width),
        num(height),
        num(width),
        num(height)
    );
    let _ = writeln!(out, r##"<rect x="0" y="0" width="{}" height="{}" fill="#FFFFFF"/>"##, num(width), num(height));
}

fn axes(out: &mut String, f: &Frame, title: &str) {
    let _ = writeln!(
        out,
        r##"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="#000000" stroke-width="0.5"/>"##,
        num(f.x0),
        num(f.y0),
        num(f.w),
        num(f.h)
    );
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, num(f.x0 + f.w / 2.0), num(f.y0 - 10.0), esc(title));
    for (k, frac) in [0.0, 0.5, 1.0].into_iter().enumerate() {
        let t = f.t.0 + frac * (f.t.1 - f.t.0);
        let v = f.v.0 + frac * (f.v.1 - f.v.0);
        let anchor = ["start", "middle", "end"][k];
        let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="{anchor}">{}</text>"#, num(f.x(t)), num(f.y0 + f.h + 14.0), num(t));
        let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, num(f.x0 - 4.0), num(f.y(v) + 4.0), num(v));
    }
}

fn polygon_between(f: &Frame, t: &[f64], lower: &[f64], upper: &[f64]) -> String {
    let mut pts: Vec<String> = t.iter().zip(lower).map(|(&a, &b)| f.pt(a, b)).collect();
    pts.extend(t.iter().zip(upper).rev().map(|(&a, &b)| f.pt(a, b)));
    pts.join(" ")
}

fn draw_region(out: &mut String, f: &Frame, t: &[f64], v: &VariableGeometry, style: &StyleConfig, intensity: Option<&IntensityPanel>, clip_id: &str) {
    match intensity {
        None => {
            let _ = writeln!(
                out,
                r#"<polygon points="{}" fill="{}" stroke="none"/>"#,
                polygon_between(f, t, &v.envelope_lower, &v.sparseness.boundary),
                style.central_fill
            );
            let _ = writeln!(
                out,
                r#"<polygon points="{}" fill="{}" stroke="none"/>"#,
                polygon_between(f, t, &v.sparseness.boundary, &v.envelope_upper),
                style.sparse_fill
            );
            let mid: Vec<f64> = v.envelope_lower.iter().zip(&v.envelope_upper).map(|(l, u)| 0.5 * (l + u)).collect();
            let _ = writeln!(
                out,
                r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="0.75" stroke-dasharray="1,2"/>"#,
                points(f, t, &mid),
                style.reference_line
            );
        }
        Some(panel) => {
            let _ = writeln!(
                out,
                r#"<clipPath id="{clip_id}"><polygon points="{}"/></clipPath>"#,
                polygon_between(f, t, &v.envelope_lower, &v.envelope_upper)
            );
            let _ = writeln!(out, r#"<g clip-path="url(#{clip_id})">"#);
            let _ = writeln!(
                out,
                r#"<polygon points="{}" fill="{}" stroke="none"/>"#,
                polygon_between(f, t, &v.envelope_lower, &v.envelope_upper),
                style.intensity_colour(0.0)
            );
            raster(out, f, panel, style);
            if style.show_contours {
                contours(out, f, panel, style);
            }
            let _ = writeln!(out, "</g>");
        }
    }
    for s in [&v.envelope_lower, &v.envelope_upper] {
        let _ = writeln!(out, r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1"/>"#, points(f, t, s), style.whisker);
    }
}

/// Intensity cells, with runs of equal colour in a row merged.
fn raster(out: &mut String, f: &Frame, panel: &IntensityPanel, style: &StyleConfig) {
    let dx = (panel.time_range[1] - panel.time_range[0]) / panel.cols as f64;
    let dy = (panel.value_range[1] - panel.value_range[0]) / panel.rows as f64;
    for r in 0..panel.rows {
        let mut c = 0;
        while c < panel.cols {
            let v = panel.get(r, c);
            if v <= 0.0 {
                c += 1;
                continue;
            }
            let colour = style.intensity_colour(v);
            let mut end = c + 1;
            while end < panel.cols && panel.get(r, end) > 0.0 && style.intensity_colour(panel.get(r, end)) == colour {
                end += 1;
            }
            let t0 = panel.time_range[0] + c as f64 * dx;
            let t1 = panel.time_range[0] + end as f64 * dx;
            let v0 = panel.value_range[0] + r as f64 * dy;
            let v1 = v0 + dy;
            let _ = writeln!(
                out,
                r#"<rect x="{}" y="{}" width="{}" height="{}" fill="{colour}"/>"#,
                num(f.x(t0)),
                num(f.y(v1)),
                num(f.x(t1) - f.x(t0)),
                num(f.y(v0) - f.y(v1))
            );
            c = end;
        }
    }
}

fn contours(out: &mut String, f: &Frame, panel: &IntensityPanel, style: &StyleConfig) {
    for contour in &panel.contours {
        for line in &contour.lines {
            let d: Vec<String> = line
                .iter()
                .enumerate()
                .map(|(k, p)| format!("{}{}", if k == 0 { "M" } else { "L" }, f.pt(p[0], p[1])))
                .collect();
            let _ = writeln!(
                out,
                r#"<path d="{}" fill="none" stroke="{}" stroke-width="0.6" data-level="{}"/>"#,
                d.join(" "),
                style.contour,
                num(contour.level)
            );
        }
    }
}

fn draw_panel(out: &mut String, g: &BoxplotGeometry, j: usize, style: &StyleConfig, intensity: Option<&IntensityPanel>) {
    let v = &g.variables[j];
    let t = &g.grid;
    let outliers: Vec<(Stage, &[f64])> = g.outliers.iter().map(|o| (o.stage, o.values[j].as_slice())).collect();
    let frame = Frame::new(j, style, (t[0], t[t.len() - 1]), value_range(v, &outliers));
    axes(out, &frame, &v.name);
    draw_region(out, &frame, t, v, style, intensity, &format!("region{j}"));

    // whiskers: the non-outlying range, joined to the envelope at mid-time
    for s in [&v.whisker_lower, &v.whisker_upper] {
        let _ = writeln!(out, r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1"/>"#, points(&frame, t, s), style.whisker);
    }
    let mid = t.len() / 2;
    for (a, b) in [(v.envelope_upper[mid], v.whisker_upper[mid]), (v.envelope_lower[mid], v.whisker_lower[mid])] {
        let _ = writeln!(
            out,
            r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{}" stroke-width="1"/>"#,
            num(frame.x(t[mid])),
            num(frame.y(a)),
            num(frame.x(t[mid])),
            num(frame.y(b)),
            style.whisker
        );
    }

    for o in &g.outliers {
        let tags = &o.tags[j];
        let values = &o.values[j];
        let colour = match o.stage {
            Stage::Stage1 => &style.stage1_outlier,
            Stage::Stage2 => &style.stage2_outlier,
        };
        let observed = |c: usize| tags[c] != CellTag::Missing && tags[c + 1] != CellTag::Missing;
        let d = segment_path(&frame, t, values, observed);
        if !d.is_empty() {
            let _ = writeln!(
                out,
                r#"<path d="{d}" fill="none" stroke="{colour}" stroke-width="{}" stroke-dasharray="4,3" data-subject="{}"/>"#,
                num(style.outlier_width),
                o.subject
            );
        }
        let d = segment_path(&frame, t, values, |c| !observed(c));
        if !d.is_empty() {
            let _ = writeln!(
                out,
                r#"<path d="{d}" fill="none" stroke="{}" stroke-width="{}" stroke-dasharray="4,3" data-subject="{}"/>"#,
                style.missing_segment,
                num(style.outlier_width),
                o.subject
            );
        }
    }

    let obs = |c: usize| v.median_observed[c] && v.median_observed[c + 1];
    for (keep, colour) in [
        (&obs as &dyn Fn(usize) -> bool, &style.median_observed),
        (&|c: usize| !obs(c), &style.median_missing),
    ] {
        let d = segment_path(&frame, t, &v.median, keep);
        if !d.is_empty() {
            let _ = writeln!(out, r#"<path d="{d}" fill="none" stroke="{colour}" stroke-width="{}"/>"#, num(style.stroke_width));
        }
    }
}

fn legend(out: &mut String, y: f64, style: &StyleConfig) {
    let items = [
        (&style.stage1_outlier, "outlier (directional outlyingness)"),
        (&style.stage2_outlier, "outlier (functional boxplot)"),
        (&style.missing_segment, "fitted missing values"),
    ];
    let mut x = MARGIN_LEFT;
    for (colour, label) in items {
        let _ = writeln!(
            out,
            r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{colour}" stroke-width="1.5" stroke-dasharray="4,3"/>"#,
            num(x),
            num(y),
            num(x + 24.0),
            num(y)
        );
        let _ = writeln!(out, r#"<text x="{}" y="{}">{}</text>"#, num(x + 30.0), num(y + 4.0), label);
        x += 230.0;
    }
}

fn document(g: &BoxplotGeometry, field: Option<&IntensityField>, style: &StyleConfig) -> Result<String, RenderError> {
    style.validate()?;
    let p = g.variables.len().max(1);
    let width = style.panel_width * p as f64;
    let height = style.panel_height + LEGEND_HEIGHT;
    let mut out = String::new();
    header(&mut out, width.max(3.0 * 230.0), height);
    for j in 0..g.variables.len() {
        let panel = field.and_then(|f| f.panels.iter().find(|q| q.variable == j));
        // an empty field still draws the region in the zero-intensity colour
        let zero;
        let panel = match (field, panel) {
            (Some(_), None) => {
                zero = IntensityPanel {
                    variable: j,
                    time_range: [g.grid[0], g.grid[g.grid.len() - 1]],
                    value_range: [0.0, 1.0],
                    cols: 1,
                    rows: 1,
                    values: vec![0.0],
                    events: 0,
                    mass: 0.0,
                    raw_max: 0.0,
                    bandwidths: [0.0, 0.0],
                    contours: Vec::new(),
                };
                Some(&zero)
            }
            (_, found) => found,
        };
        draw_panel(&mut out, g, j, style, panel);
    }
    legend(&mut out, style.panel_height + LEGEND_HEIGHT / 2.0, style);
    out.push_str("</svg>\n");
    Ok(out)
}

/// Sparse (or two-stage) functional boxplot as an SVG document, one panel
/// per variable.
pub fn boxplot_svg(g: &BoxplotGeometry, style: &StyleConfig) -> Result<String, RenderError> {
    document(g, None, style)
}

/// Intensity sparse functional boxplot: the central region is coloured by
/// the sparseness intensity instead of the sparseness proportion.
pub fn intensity_boxplot_svg(g: &BoxplotGeometry, field: &IntensityField, style: &StyleConfig) -> Result<String, RenderError> {
    document(g, Some(field), style)
}

/// Serialized geometry: the boxplot and its intensity field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometryDocument {
    pub schema_version: String,
    pub boxplot: BoxplotGeometry,
    pub normalization: Normalization,
    pub intensity: Vec<IntensityPanel>,
}

impl GeometryDocument {
    pub fn new(boxplot: BoxplotGeometry, field: Option<IntensityField>) -> Self {
        let (normalization, intensity) = match field {
            Some(f) => (f.normalization, f.panels),
            None => (Normalization::default(), Vec::new()),
        };
        Self { schema_version: SCHEMA_VERSION.into(), boxplot, normalization, intensity }
    }

    pub fn intensity_field(&self) -> IntensityField {
        IntensityField { normalization: self.normalization, panels: self.intensity.clone() }
    }
}

pub fn emit_json(doc: &GeometryDocument) -> String {
    let mut s = serde_json::to_string_pretty(doc).expect("geometry serializes");
    s.push('\n');
    s
}

pub fn parse_json(text: &str) -> Result<GeometryDocument, RenderError> {
    let doc: GeometryDocument = serde_json::from_str(text)?;
    if doc.schema_version != SCHEMA_VERSION {
        return Err(RenderError::Schema(doc.schema_version));
    }
    Ok(doc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boxplot::{functional_boxplot, intensity_field, two_stage_boxplot, BoxplotOptions, IntensityOptions};
    use crate::depth::{mfhd, WeightScheme};
    use crate::fdata::{CompleteCurves, GridMask};
    use crate::simgen::{generate, sparsify, SimConfig, SparsifyConfig, SparsityKind};

    fn dashed_paths(svg: &str) -> Vec<&str> {
        svg.lines().filter(|l| l.starts_with("<path") && l.contains("stroke-dasharray")).collect()
    }

    fn sample(model: u8, seed: u64) -> (CompleteCurves, BoxplotGeometry, GridMask) {
        let data = generate(&SimConfig { model, seed, n: 40, p: 2, ..SimConfig::default() }).unwrap();
        let c = data.signal;
        let d = mfhd(&c, &WeightScheme::constant(), 1).unwrap();
        let mask = sparsify(&c, &SparsifyConfig { kind: SparsityKind::Point, p_sparse: 1.0, p_curve: 0.2, seed });
        let g = functional_boxplot(&c, &d, Some(&mask), &BoxplotOptions::default()).unwrap();
        (c, g, mask)
    }

    #[test]
    fn numbers_have_six_significant_digits() {
        assert_eq!(num(0.0), "0");
        assert_eq!(num(-0.0), "0");
        assert_eq!(num(1.0), "1");
        assert_eq!(num(123.4567891), "123.457");
        assert_eq!(num(-0.000123456789), "-0.000123457");
        assert_eq!(num(1234567.0), "1234567");
        assert_eq!(num(2.5), "2.5");
    }

    #[test]
    fn no_outliers_means_no_dashed_paths() {
        let (_, mut g, _) = sample(1, 1);
        g.outliers.clear();
        let svg = boxplot_svg(&g, &StyleConfig::default()).unwrap();
        assert!(dashed_paths(&svg).is_empty());
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn one_outlier_per_stage_gives_two_coloured_dashed_paths() {
        let (c, _, _) = sample(1, 2);
        let mut c = c;
        for v in c.curve_mut(3, 0) {
            *v += 50.0;
        }
        let d = mfhd(&c, &WeightScheme::constant(), 1).unwrap();
        let mut outl = crate::depth::directional_outlyingness(&c, 1.0, 50).unwrap();
        outl.flagged[5] = true;
        // complete data: every outlier cell is observed
        let g = two_stage_boxplot(&c, &d, &outl, None, &BoxplotOptions::default()).unwrap();
        assert_eq!(g.outliers_of(Stage::Stage1), vec![5]);
        assert_eq!(g.outliers_of(Stage::Stage2), vec![3]);
        let style = StyleConfig::default();
        let svg = boxplot_svg(&g, &style).unwrap();
        let dashed = dashed_paths(&svg);
        // one per outlier in each of the two panels; variable 1 of curve 3
        // is unchanged but still drawn as an outlier
        assert_eq!(dashed.len(), 4);
        let one_panel: Vec<&&str> = dashed.iter().take(2).collect();
        assert!(one_panel[0].contains(&style.stage2_outlier) && one_panel[0].contains("data-subject=\"3\""));
        assert!(one_panel[1].contains(&style.stage1_outlier) && one_panel[1].contains("data-subject=\"5\""));
        assert_ne!(style.stage1_outlier, style.stage2_outlier);
    }

    #[test]
    fn single_variable_two_outliers_two_dashed_paths() {
        let (c, _, _) = sample(1, 3);
        let mut one = CompleteCurves::zeros(c.n(), 1, c.grid().clone());
        for i in 0..c.n() {
            one.curve_mut(i, 0).copy_from_slice(c.curve(i, 0));
        }
        for v in one.curve_mut(0, 0) {
            *v -= 40.0;
        }
        let d = mfhd(&one, &WeightScheme::constant(), 1).unwrap();
        let mut outl = crate::depth::directional_outlyingness(&one, 1.0, 1).unwrap();
        outl.flagged[1] = true;
        let g = two_stage_boxplot(&one, &d, &outl, None, &BoxplotOptions::default()).unwrap();
        assert_eq!(g.outliers.len(), 2);
        let style = StyleConfig::default();
        let svg = boxplot_svg(&g, &style).unwrap();
        let dashed = dashed_paths(&svg);
        assert_eq!(dashed.len(), 2);
        let colours: Vec<bool> = dashed.iter().map(|l| l.contains(&style.stage1_outlier)).collect();
        assert_eq!(colours.iter().filter(|&&b| b).count(), 1);
        assert_eq!(dashed.iter().filter(|l| l.contains(&style.stage2_outlier)).count(), 1);
    }

    #[test]
    fn missing_outlier_cells_are_drawn_grey() {
        let (c, _, mask) = sample(2, 4);
        let d = mfhd(&c, &WeightScheme::constant(), 1).unwrap();
        let g = functional_boxplot(&c, &d, Some(&mask), &BoxplotOptions::default()).unwrap();
        let style = StyleConfig::default();
        let svg = boxplot_svg(&g, &style).unwrap();
        if !g.outliers.is_empty() {
            assert!(dashed_paths(&svg).iter().any(|l| l.contains(&style.missing_segment)));
        }
    }

    #[test]
    fn svg_and_json_are_deterministic() {
        let (c, g, mask) = sample(2, 5);
        let style = StyleConfig::default();
        assert_eq!(boxplot_svg(&g, &style).unwrap(), boxplot_svg(&g.clone(), &style).unwrap());
        let d = mfhd(&c, &WeightScheme::constant(), 1).unwrap();
        let region = crate::boxplot::central_region(&c, &d).unwrap();
        let field = intensity_field(&mask, &c, &region, &IntensityOptions::default());
        let a = intensity_boxplot_svg(&g, &field, &style).unwrap();
        assert_eq!(a, intensity_boxplot_svg(&g, &field.clone(), &style).unwrap());
        assert!(a.contains("<rect") && a.contains("data-level"));
        let doc = GeometryDocument::new(g, Some(field));
        assert_eq!(emit_json(&doc), emit_json(&doc.clone()));
    }

    #[test]
    fn json_round_trip() {
        let (c, g, mask) = sample(2, 6);
        let d = mfhd(&c, &WeightScheme::constant(), 1).unwrap();
        let region = crate::boxplot::central_region(&c, &d).unwrap();
        let field = intensity_field(&mask, &c, &region, &IntensityOptions::default());
        let doc = GeometryDocument::new(g, Some(field));
        let text = emit_json(&doc);
        assert_eq!(parse_json(&text).unwrap(), doc);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["schema_version"], SCHEMA_VERSION);
    }

    #[test]
    fn empty_field_serializes_as_empty_array() {
        let (c, g, _) = sample(1, 7);
        let full = GridMask::filled(c.n(), c.p(), c.grid().len(), true);
        let d = mfhd(&c, &WeightScheme::constant(), 1).unwrap();
        let region = crate::boxplot::central_region(&c, &d).unwrap();
        let opts = IntensityOptions { normalization: Normalization::Global, ..Default::default() };
        let field = intensity_field(&full, &c, &region, &opts);
        let doc = GeometryDocument::new(g.clone(), Some(field.clone()));
        let v: serde_json::Value = serde_json::from_str(&emit_json(&doc)).unwrap();
        assert_eq!(v["intensity"], serde_json::json!([]));
        assert_eq!(v["normalization"], "global");
        assert_eq!(parse_json(&emit_json(&doc)).unwrap().intensity_field(), field);
        // the intensity plot of an empty field still renders
        assert!(intensity_boxplot_svg(&g, &field, &StyleConfig::default()).is_ok());
    }

    #[test]
    fn style_validation_and_schema_check() {
        let bad = StyleConfig { stage1_outlier: "green".into(), ..Default::default() };
        assert!(matches!(bad.validate(), Err(RenderError::Colour { field: "stage1_outlier", .. })));
        let bad = StyleConfig { panel_width: 0.0, ..Default::default() };
        assert!(matches!(bad.validate(), Err(RenderError::PanelSize)));
        let style = StyleConfig::default();
        assert_eq!(style.intensity_colour(0.0), "#FF00FF");
        assert_eq!(style.intensity_colour(1.0), "#FFFFFF");
        let (_, g, _) = sample(1, 8);
        let text = emit_json(&GeometryDocument::new(g, None)).replace(SCHEMA_VERSION, "sfbox.geometry/0");
        assert!(matches!(parse_json(&text), Err(RenderError::Schema(_))));
    }

    #[test]
    fn pixel_order_follows_value_order() {
        let (_, g, _) = sample(1, 9);
        let v = &g.variables[0];
        let f = Frame::new(0, &StyleConfig::default(), (g.grid[0], g.grid[g.grid.len() - 1]), value_range(v, &[]));
        for c in 0..g.grid.len() {
            assert!(f.y(v.envelope_lower[c]) >= f.y(v.envelope_upper[c]));
        }
        assert!(f.x(g.grid[1]) > f.x(g.grid[0]));
    }
}
