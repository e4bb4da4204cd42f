//! Data model for sparse multivariate functional samples.
//!
//! A [`SparseSampleSet`] holds, for each subject and variable, the irregular
//! `(time, value)` records that were actually observed. Everything downstream
//! (fitting, depths, boxplots) works on a common evaluation [`Grid`]; the
//! bridge between the two is [`snap_to_grid`], which records which grid
//! cells carry an observation in a [`GridMask`].
//!
//! Long CSV (`subject_id, variable, time, value`) is the only ingestion
//! format.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum FdataError {
    #[error("grid needs at least 2 points, got {0}")]
    GridTooShort(usize),
    #[error("grid points must be finite and strictly increasing (index {0})")]
    GridNotIncreasing(usize),
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("line {line}: non-finite {field} value")]
    NonFinite { line: u64, field: &'static str },
    #[error("duplicate observation for subject `{subject}`, variable `{variable}`, time {time}")]
    Duplicate {
        subject: String,
        variable: String,
        time: f64,
    },
    #[error("missing CSV column `{0}`")]
    MissingColumn(String),
    #[error("subject `{0}` has no observations in any variable")]
    EmptySubject(String),
    #[error("{0} observation(s) lie farther than the snap tolerance from every grid point: {1}")]
    OffGrid(usize, String),
    #[error("inconsistent dimensions: {0}")]
    Dimension(String),
    #[error("non-finite value in curve data at subject {subject}, variable {variable}, grid index {index}")]
    NonFiniteCurve {
        subject: usize,
        variable: usize,
        index: usize,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Ordered evaluation points on a closed interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Grid {
    points: Vec<f64>,
}

impl Grid {
    pub fn new(points: Vec<f64>) -> Result<Self, FdataError> {
        if points.len() < 2 {
            return Err(FdataError::GridTooShort(points.len()));
        }
        for (k, w) in points.windows(2).enumerate() {
            if !w[0].is_finite() || !w[1].is_finite() || w[1] <= w[0] {
                return Err(FdataError::GridNotIncreasing(k + 1));
            }
        }
        Ok(Self { points })
    }

    /// `len` equidistant points from `start` to `end`, both included.
    pub fn equidistant(len: usize, start: f64, end: f64) -> Result<Self, FdataError> {
        if len < 2 {
            return Err(FdataError::GridTooShort(len));
        }
        let step = (end - start) / (len - 1) as f64;
        let mut points: Vec<f64> = (0..len).map(|c| start + step * c as f64).collect();
        points[len - 1] = end;
        Self::new(points)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn start(&self) -> f64 {
        self.points[0]
    }

    pub fn end(&self) -> f64 {
        self.points[self.points.len() - 1]
    }

    pub fn span(&self) -> f64 {
        self.end() - self.start()
    }

    pub fn min_spacing(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
    }

    /// Trapezoid quadrature weights; they sum to the span.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let n = self.points.len();
        (0..n)
            .map(|c| {
                let left = if c == 0 { self.points[0] } else { self.points[c - 1] };
                let right = if c + 1 == n { self.points[n - 1] } else { self.points[c + 1] };
                0.5 * (right - left)
            })
            .collect()
    }

    /// Index of the grid point nearest to `t` (ties go to the lower index).
    pub fn nearest(&self, t: f64) -> usize {
        let k = self.points.partition_point(|&x| x < t);
        if k == 0 {
            return 0;
        }
        if k == self.points.len() {
            return k - 1;
        }
        if (t - self.points[k - 1]) <= (self.points[k] - t) {
            k - 1
        } else {
            k
        }
    }

    /// Piecewise-linear interpolation of grid `values` at `t`, constant
    /// beyond the ends.
    pub fn interpolate(&self, values: &[f64], t: f64) -> f64 {
        debug_assert_eq!(values.len(), self.points.len());
        let n = self.points.len();
        if t <= self.points[0] {
            return values[0];
        }
        if t >= self.points[n - 1] {
            return values[n - 1];
        }
        let k = self.points.partition_point(|&x| x <= t);
        let (t0, t1) = (self.points[k - 1], self.points[k]);
        let w = (t - t0) / (t1 - t0);
        values[k - 1] * (1.0 - w) + values[k] * w
    }

    /// Interpolation stencil `(lower index, weight of upper index)` for `t`.
    pub fn stencil(&self, t: f64) -> (usize, f64) {
        let n = self.points.len();
        if t <= self.points[0] {
            return (0, 0.0);
        }
        if t >= self.points[n - 1] {
            return (n - 2, 1.0);
        }
        let k = self.points.partition_point(|&x| x <= t);
        let (t0, t1) = (self.points[k - 1], self.points[k]);
        (k - 1, (t - t0) / (t1 - t0))
    }
}

impl Default for Grid {
    fn default() -> Self {
        Self::equidistant(50, 0.0, 1.0).expect("default grid is valid")
    }
}

impl TryFrom<Vec<f64>> for Grid {
    type Error = FdataError;
    fn try_from(points: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(points)
    }
}

impl From<Grid> for Vec<f64> {
    fn from(g: Grid) -> Self {
        g.points
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub time: f64,
    pub value: f64,
}

/// Irregular observations of `n` subjects on `p` variables.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseSampleSet {
    subject_ids: Vec<String>,
    variable_names: Vec<String>,
    domains: Vec<(f64, f64)>,
    obs: Vec<Vec<Vec<Observation>>>,
}

impl SparseSampleSet {
    /// Validates and normalizes: each `(subject, variable)` list is sorted by
    /// time; duplicates, non-finite values, out-of-domain times and subjects
    /// without any observation are rejected.
    pub fn new(
        subject_ids: Vec<String>,
        variable_names: Vec<String>,
        domains: Vec<(f64, f64)>,
        mut obs: Vec<Vec<Vec<Observation>>>,
    ) -> Result<Self, FdataError> {
        let n = subject_ids.len();
        let p = variable_names.len();
        if n == 0 || p == 0 {
            return Err(FdataError::Dimension(format!(
                "need at least one subject and one variable (n = {n}, p = {p})"
            )));
        }
        if obs.len() != n || domains.len() != p {
            return Err(FdataError::Dimension(format!(
                "{} observation rows for {n} subjects, {} domains for {p} variables",
                obs.len(),
                domains.len()
            )));
        }
        for (i, row) in obs.iter_mut().enumerate() {
            if row.len() != p {
                return Err(FdataError::Dimension(format!(
                    "subject {} has {} variables, expected {p}",
                    subject_ids[i],
                    row.len()
                )));
            }
            let mut total = 0;
            for (j, list) in row.iter_mut().enumerate() {
                let (lo, hi) = domains[j];
                for o in list.iter() {
                    if !o.time.is_finite() || !o.value.is_finite() {
                        return Err(FdataError::Dimension(format!(
                            "non-finite observation for subject {}, variable {}",
                            subject_ids[i], variable_names[j]
                        )));
                    }
                    if o.time < lo || o.time > hi {
                        return Err(FdataError::Dimension(format!(
                            "time {} outside domain [{lo}, {hi}] of variable {}",
                            o.time, variable_names[j]
                        )));
                    }
                }
                list.sort_by(|a, b| a.time.total_cmp(&b.time));
                if let Some(w) = list.windows(2).find(|w| w[0].time == w[1].time) {
                    return Err(FdataError::Duplicate {
                        subject: subject_ids[i].clone(),
                        variable: variable_names[j].clone(),
                        time: w[0].time,
                    });
                }
                total += list.len();
            }
            if total == 0 {
                return Err(FdataError::EmptySubject(subject_ids[i].clone()));
            }
        }
        Ok(Self {
            subject_ids,
            variable_names,
            domains,
            obs,
        })
    }

    /// Observed cells of complete curves, as selected by `mask`.
    pub fn from_masked_curves(curves: &CompleteCurves, mask: &GridMask) -> Result<Self, FdataError> {
        let (n, p, len) = (curves.n(), curves.p(), curves.grid().len());
        if mask.dims() != (n, p, len) {
            return Err(FdataError::Dimension(format!(
                "mask {:?} does not match curves {:?}",
                mask.dims(),
                (n, p, len)
            )));
        }
        let times = curves.grid().points();
        let obs = (0..n)
            .map(|i| {
                (0..p)
                    .map(|j| {
                        curves
                            .curve(i, j)
                            .iter()
                            .zip(mask.row(i, j))
                            .zip(times)
                            .filter(|((_, &m), _)| m)
                            .map(|((&value, _), &time)| Observation { time, value })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let domain = (curves.grid().start(), curves.grid().end());
        Self::new(
            (1..=n).map(|i| i.to_string()).collect(),
            (1..=p).map(|j| format!("X{j}")).collect(),
            vec![domain; p],
            obs,
        )
    }

    pub fn n(&self) -> usize {
        self.subject_ids.len()
    }

    pub fn p(&self) -> usize {
        self.variable_names.len()
    }

    pub fn subject_ids(&self) -> &[String] {
        &self.subject_ids
    }

    pub fn variable_names(&self) -> &[String] {
        &self.variable_names
    }

    pub fn domain(&self, j: usize) -> (f64, f64) {
        self.domains[j]
    }

    pub fn observations(&self, i: usize, j: usize) -> &[Observation] {
        &self.obs[i][j]
    }

    pub fn total_observations(&self) -> usize {
        self.obs.iter().flatten().map(Vec::len).sum()
    }

    /// Smallest closed interval containing every variable's domain.
    pub fn joint_domain(&self) -> (f64, f64) {
        self.domains.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(a, b)| {
            (lo.min(a), hi.max(b))
        })
    }

    /// Subjects picked by `indices` (repeats allowed), e.g. a bootstrap
    /// resample.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            subject_ids: indices.iter().map(|&i| self.subject_ids[i].clone()).collect(),
            variable_names: self.variable_names.clone(),
            domains: self.domains.clone(),
            obs: indices.iter().map(|&i| self.obs[i].clone()).collect(),
        }
    }
}

/// Column names used to read a long CSV.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub subject: String,
    pub variable: String,
    pub time: String,
    pub value: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            subject: "subject_id".into(),
            variable: "variable".into(),
            time: "time".into(),
            value: "value".into(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Ingested {
    pub set: SparseSampleSet,
    pub rows: usize,
}

/// Reads a long-format CSV with a header row.
///
/// Subjects and variables are indexed in order of first appearance and
/// each variable's domain is the range of its observed times.
pub fn ingest_long_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<Ingested, FdataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| FdataError::MissingColumn(name.to_string()))
    };
    let (cs, cv, ct, cy) = (
        column(&schema.subject)?,
        column(&schema.variable)?,
        column(&schema.time)?,
        column(&schema.value)?,
    );

    let mut subject_index: HashMap<String, usize> = HashMap::new();
    let mut variable_index: HashMap<String, usize> = HashMap::new();
    let mut subjects = Vec::new();
    let mut variables = Vec::new();
    let mut raw: Vec<(usize, usize, f64, f64, u64)> = Vec::new();

    let mut record = csv::StringRecord::new();
    loop {
        let more = rdr.read_record(&mut record).map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            FdataError::Malformed {
                line,
                message: e.to_string(),
            }
        })?;
        if !more {
            break;
        }
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let field = |k: usize| {
            record.get(k).ok_or_else(|| FdataError::Malformed {
                line,
                message: format!("missing field {}", k + 1),
            })
        };
        let number = |k: usize, name: &'static str| -> Result<f64, FdataError> {
            let s = field(k)?;
            let v: f64 = s.parse().map_err(|_| FdataError::Malformed {
                line,
                message: format!("cannot parse {name} `{s}` as a number"),
            })?;
            if !v.is_finite() {
                return Err(FdataError::NonFinite { line, field: name });
            }
            Ok(v)
        };
        let time = number(ct, "time")?;
        let value = number(cy, "value")?;
        let subject = field(cs)?;
        let variable = field(cv)?;
        let i = *subject_index.entry(subject.to_string()).or_insert_with(|| {
            subjects.push(subject.to_string());
            subjects.len() - 1
        });
        let j = *variable_index.entry(variable.to_string()).or_insert_with(|| {
            variables.push(variable.to_string());
            variables.len() - 1
        });
        raw.push((i, j, time, value, line));
    }

    let n = subjects.len();
    let p = variables.len();
    let mut obs = vec![vec![Vec::new(); p]; n];
    let mut domains = vec![(f64::INFINITY, f64::NEG_INFINITY); p];
    for &(i, j, time, value, _) in &raw {
        obs[i][j].push(Observation { time, value });
        domains[j] = (domains[j].0.min(time), domains[j].1.max(time));
    }
    let set = SparseSampleSet::new(subjects, variables, domains, obs)?;
    Ok(Ingested { set, rows: raw.len() })
}

/// Writes `set` as long CSV with the default column names. Values use the
/// shortest representation that parses back to the same `f64`.
pub fn export_long_csv<W: Write>(set: &SparseSampleSet, writer: W) -> Result<(), FdataError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["subject_id", "variable", "time", "value"])?;
    for i in 0..set.n() {
        for j in 0..set.p() {
            for o in set.observations(i, j) {
                w.write_record([
                    set.subject_ids[i].as_str(),
                    set.variable_names[j].as_str(),
                    &o.time.to_string(),
                    &o.value.to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Presence of an observation per `(subject, variable, grid point)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridMask {
    n: usize,
    p: usize,
    len: usize,
    present: Vec<bool>,
}

impl GridMask {
    pub fn filled(n: usize, p: usize, len: usize, value: bool) -> Self {
        Self {
            n,
            p,
            len,
            present: vec![value; n * p * len],
        }
    }

    pub fn from_vec(n: usize, p: usize, len: usize, present: Vec<bool>) -> Result<Self, FdataError> {
        if present.len() != n * p * len {
            return Err(FdataError::Dimension(format!(
                "mask has {} cells, expected {n} x {p} x {len}",
                present.len()
            )));
        }
        Ok(Self { n, p, len, present })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.n, self.p, self.len)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, c: usize) -> bool {
        self.present[(i * self.p + j) * self.len + c]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, c: usize, value: bool) {
        self.present[(i * self.p + j) * self.len + c] = value;
    }

    pub fn row(&self, i: usize, j: usize) -> &[bool] {
        let start = (i * self.p + j) * self.len;
        &self.present[start..start + self.len]
    }

    pub fn row_mut(&mut self, i: usize, j: usize) -> &mut [bool] {
        let start = (i * self.p + j) * self.len;
        &mut self.present[start..start + self.len]
    }

    pub fn count_present(&self) -> usize {
        self.present.iter().filter(|&&b| b).count()
    }

    pub fn all_present(&self) -> bool {
        self.present.iter().all(|&b| b)
    }

    /// Rows picked by subject `indices`.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut present = Vec::with_capacity(indices.len() * self.p * self.len);
        for &i in indices {
            for j in 0..self.p {
                present.extend_from_slice(self.row(i, j));
            }
        }
        Self {
            n: indices.len(),
            p: self.p,
            len: self.len,
            present,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapped {
    pub mask: GridMask,
    /// Observations that landed on a grid cell already taken by another
    /// observation of the same subject and variable.
    pub collapsed: usize,
}

/// Marks the grid cell nearest to every observation. The default tolerance
/// is half the minimum grid spacing.
pub fn snap_to_grid(set: &SparseSampleSet, grid: &Grid, tolerance: Option<f64>) -> Result<Snapped, FdataError> {
    let tol = tolerance.unwrap_or(0.5 * grid.min_spacing());
    let mut mask = GridMask::filled(set.n(), set.p(), grid.len(), false);
    let mut collapsed = 0;
    let mut offending = Vec::new();
    for i in 0..set.n() {
        for j in 0..set.p() {
            for o in set.observations(i, j) {
                let c = grid.nearest(o.time);
                // small slack so points exactly at the tolerance survive rounding
                if (grid.points()[c] - o.time).abs() > tol * (1.0 + 1e-9) + f64::EPSILON {
                    offending.push((i, j, o.time));
                    continue;
                }
                if mask.get(i, j, c) {
                    collapsed += 1;
                } else {
                    mask.set(i, j, c, true);
                }
            }
        }
    }
    if !offending.is_empty() {
        let listing: Vec<String> = offending
            .iter()
            .take(5)
            .map(|&(i, j, t)| format!("({}, {}, {t})", set.subject_ids[i], set.variable_names[j]))
            .collect();
        let more = if offending.len() > 5 { ", ..." } else { "" };
        return Err(FdataError::OffGrid(offending.len(), format!("{}{more}", listing.join(", "))));
    }
    Ok(Snapped { mask, collapsed })
}

/// Empirical sparseness rates of one variable.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsenessSummary {
    /// Fraction of subjects with at least one missing cell.
    pub p_sparse: f64,
    /// Mean missing fraction over those subjects; 0 when there are none.
    pub p_curve: f64,
}

pub fn sparseness_summary(mask: &GridMask) -> Vec<SparsenessSummary> {
    let (n, p, len) = mask.dims();
    (0..p)
        .map(|j| {
            let mut sparse = 0usize;
            let mut frac_sum = 0.0;
            for i in 0..n {
                let missing = mask.row(i, j).iter().filter(|&&b| !b).count();
                if missing > 0 {
                    sparse += 1;
                    frac_sum += missing as f64 / len as f64;
                }
            }
            SparsenessSummary {
                p_sparse: if n == 0 { 0.0 } else { sparse as f64 / n as f64 },
                p_curve: if sparse == 0 { 0.0 } else { frac_sum / sparse as f64 },
            }
        })
        .collect()
}

/// Curve values of `n` subjects and `p` variables on a common grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompleteCurves {
    n: usize,
    p: usize,
    grid: Grid,
    values: Vec<f64>,
}

impl CompleteCurves {
    pub fn new(n: usize, p: usize, grid: Grid, values: Vec<f64>) -> Result<Self, FdataError> {
        let len = grid.len();
        if values.len() != n * p * len {
            return Err(FdataError::Dimension(format!(
                "{} values for {n} x {p} x {len} curves",
                values.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(FdataError::NonFiniteCurve {
                subject: k / (p * len),
                variable: (k / len) % p,
                index: k % len,
            });
        }
        Ok(Self { n, p, grid, values })
    }

    pub fn zeros(n: usize, p: usize, grid: Grid) -> Self {
        let len = grid.len();
        Self {
            n,
            p,
            grid,
            values: vec![0.0; n * p * len],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, c: usize) -> f64 {
        self.values[(i * self.p + j) * self.grid.len() + c]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, c: usize, v: f64) {
        let len = self.grid.len();
        self.values[(i * self.p + j) * len + c] = v;
    }

    pub fn curve(&self, i: usize, j: usize) -> &[f64] {
        let len = self.grid.len();
        let start = (i * self.p + j) * len;
        &self.values[start..start + len]
    }

    pub fn curve_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        let len = self.grid.len();
        let start = (i * self.p + j) * len;
        &mut self.values[start..start + len]
    }

    /// The p-vector of subject `i` at grid index `c`.
    pub fn point(&self, i: usize, c: usize) -> Vec<f64> {
        (0..self.p).map(|j| self.get(i, j, c)).collect()
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        let len = self.grid.len();
        let mut values = Vec::with_capacity(indices.len() * self.p * len);
        for &i in indices {
            let start = i * self.p * len;
            values.extend_from_slice(&self.values[start..start + self.p * len]);
        }
        Self {
            n: indices.len(),
            p: self.p,
            grid: self.grid.clone(),
            values,
        }
    }

    /// Concatenates the variables of `self` and `other` subject by subject.
    pub fn stack_variables(&self, other: &Self) -> Result<Self, FdataError> {
        if self.n != other.n || self.grid != other.grid {
            return Err(FdataError::Dimension("stacked curve sets differ in subjects or grid".into()));
        }
        let len = self.grid.len();
        let p = self.p + other.p;
        let mut values = Vec::with_capacity(self.n * p * len);
        for i in 0..self.n {
            values.extend_from_slice(&self.values[i * self.p * len..(i + 1) * self.p * len]);
            values.extend_from_slice(&other.values[i * other.p * len..(i + 1) * other.p * len]);
        }
        Ok(Self {
            n: self.n,
            p,
            grid: self.grid.clone(),
            values,
        })
    }

    /// Appends the subjects of `others` after those of `self`.
    pub fn concat_subjects(&self, others: &[&Self]) -> Result<Self, FdataError> {
        let mut values = self.values.clone();
        let mut n = self.n;
        for o in others {
            if o.p != self.p || o.grid != self.grid {
                return Err(FdataError::Dimension("concatenated curve sets differ in variables or grid".into()));
            }
            values.extend_from_slice(&o.values);
            n += o.n;
        }
        Ok(Self {
            n,
            p: self.p,
            grid: self.grid.clone(),
            values,
        })
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} points on [{}, {}]", self.len(), self.start(), self.end())
    }
}
