//! File formats shared by the subcommands.
//!
//! Curves and masks use a wide CSV: `subject_id,variable,t_1,...,t_N`, one
//! row per subject and variable, subjects outermost. Numbers are written in
//! the shortest form that parses back to the same `f64`.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufReader, Write};
use std::path::Path;

use sfbox::depth::{DepthMethod, DepthReport, OutlyingnessReport};
use sfbox::fdata::{ingest_long_csv, CompleteCurves, CsvSchema, Grid, GridMask, SparseSampleSet};

use crate::error::CliError;

/// Labels that travel with wide curve files.
#[derive(Clone, Debug, PartialEq)]
pub struct Labels {
    pub subjects: Vec<String>,
    pub variables: Vec<String>,
}

impl Labels {
    pub fn of(set: &SparseSampleSet) -> Self {
        Self { subjects: set.subject_ids().to_vec(), variables: set.variable_names().to_vec() }
    }
}

pub fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

/// Writes to `path`, or to stdout when there is none.
pub fn emit(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => write_text(p, text),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Io(format!("stdout: {e}"))),
    }
}

pub fn read_long(path: &Path, schema: &CsvSchema) -> Result<SparseSampleSet, CliError> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let ingested = ingest_long_csv(BufReader::new(file), schema).map_err(|e| CliError::io(path, e))?;
    Ok(ingested.set)
}

pub fn long_csv(set: &SparseSampleSet) -> Result<String, CliError> {
    let mut buf = Vec::new();
    sfbox::fdata::export_long_csv(set, &mut buf)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

fn csv_string(rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.write_record(&r).expect("writing to memory");
    }
    String::from_utf8(w.into_inner().expect("flush to memory")).expect("csv output is utf-8")
}

fn wide_csv(labels: &Labels, grid: &[f64], cell: impl Fn(usize, usize, usize) -> String) -> String {
    let header = ["subject_id".to_string(), "variable".to_string()]
        .into_iter()
        .chain(grid.iter().map(|t| t.to_string()))
        .collect();
    let rows = labels.subjects.iter().enumerate().flat_map(|(i, s)| {
        let cell = &cell;
        labels.variables.iter().enumerate().map(move |(j, v)| {
            [s.clone(), v.clone()].into_iter().chain((0..grid.len()).map(|c| cell(i, j, c))).collect()
        })
    });
    csv_string(std::iter::once(header).chain(rows))
}

pub fn curves_csv(curves: &CompleteCurves, labels: &Labels) -> String {
    wide_csv(labels, curves.grid().points(), |i, j, c| curves.get(i, j, c).to_string())
}

pub fn mask_csv(mask: &GridMask, grid: &Grid, labels: &Labels) -> String {
    wide_csv(labels, grid.points(), |i, j, c| if mask.get(i, j, c) { "1" } else { "0" }.to_string())
}

struct Wide {
    labels: Labels,
    grid: Grid,
    /// subject-major, then variable, then grid point
    cells: Vec<String>,
}

fn read_wide(path: &Path) -> Result<Wide, CliError> {
    let bad = |m: String| CliError::Io(format!("{}: {m}", path.display()));
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::io(path, e))?;
    let header = rdr.headers().map_err(|e| CliError::io(path, e))?.clone();
    if header.len() < 4 || &header[0] != "subject_id" || &header[1] != "variable" {
        return Err(bad("expected a header `subject_id,variable,t_1,...,t_N` with N >= 2".into()));
    }
    let times = header
        .iter()
        .skip(2)
        .map(|h| h.parse::<f64>().map_err(|_| bad(format!("grid point `{h}` is not a number"))))
        .collect::<Result<Vec<_>, _>>()?;
    let grid = Grid::new(times).map_err(|e| bad(e.to_string()))?;
    let len = grid.len();

    let mut subjects = Vec::new();
    let mut variables = Vec::new();
    let mut s_index = HashMap::new();
    let mut v_index = HashMap::new();
    let mut rows: HashMap<(usize, usize), Vec<String>> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::io(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != len + 2 {
            return Err(bad(format!("line {line}: {} fields, expected {}", rec.len(), len + 2)));
        }
        let i = *s_index.entry(rec[0].to_string()).or_insert_with(|| {
            subjects.push(rec[0].to_string());
            subjects.len() - 1
        });
        let j = *v_index.entry(rec[1].to_string()).or_insert_with(|| {
            variables.push(rec[1].to_string());
            variables.len() - 1
        });
        let cells = rec.iter().skip(2).map(str::to_string).collect();
        if rows.insert((i, j), cells).is_some() {
            return Err(bad(format!("line {line}: duplicate row for ({}, {})", &rec[0], &rec[1])));
        }
    }
    let (n, p) = (subjects.len(), variables.len());
    if n == 0 {
        return Err(bad("no data rows".into()));
    }
    let mut cells = Vec::with_capacity(n * p * len);
    for (i, s) in subjects.iter().enumerate() {
        for (j, v) in variables.iter().enumerate() {
            let row = rows.remove(&(i, j)).ok_or_else(|| bad(format!("missing row for ({s}, {v})")))?;
            cells.extend(row);
        }
    }
    Ok(Wide { labels: Labels { subjects, variables }, grid, cells })
}

pub fn read_curves(path: &Path) -> Result<(CompleteCurves, Labels), CliError> {
    let w = read_wide(path)?;
    let values = w
        .cells
        .iter()
        .map(|s| match s.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(CliError::Io(format!("{}: `{s}` is not a finite number", path.display()))),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let curves = CompleteCurves::new(w.labels.subjects.len(), w.labels.variables.len(), w.grid, values)?;
    Ok((curves, w.labels))
}

pub fn read_mask(path: &Path) -> Result<(GridMask, Grid, Labels), CliError> {
    let w = read_wide(path)?;
    let present = w
        .cells
        .iter()
        .map(|s| match s.as_str() {
            "1" => Ok(true),
            "0" => Ok(false),
            _ => Err(CliError::Io(format!("{}: mask cell `{s}` is not 0 or 1", path.display()))),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mask = GridMask::from_vec(w.labels.subjects.len(), w.labels.variables.len(), w.grid.len(), present)?;
    Ok((mask, w.grid, w.labels))
}

pub fn depth_csv(report: &DepthReport, labels: &Labels) -> String {
    let header = ["subject_id", "method", "depth", "rank"].map(String::from).to_vec();
    let rows = labels.subjects.iter().enumerate().map(|(i, s)| {
        vec![s.clone(), report.method.to_string(), report.values[i].to_string(), report.ranks[i].to_string()]
    });
    csv_string(std::iter::once(header).chain(rows))
}

/// Reads a depth table and orders it like `labels`.
pub fn read_depth(path: &Path, labels: &Labels) -> Result<DepthReport, CliError> {
    let bad = |m: String| CliError::Io(format!("{}: {m}", path.display()));
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::io(path, e))?;
    let mut method = None;
    let mut by_subject = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::io(path, e))?;
        if rec.len() < 3 {
            return Err(bad("expected columns subject_id,method,depth,rank".into()));
        }
        let m: DepthMethod = rec[1].parse().map_err(bad)?;
        if method.is_some_and(|prev| prev != m) {
            return Err(bad("mixed depth methods in one table".into()));
        }
        method = Some(m);
        let v: f64 = rec[2].parse().map_err(|_| bad(format!("depth `{}` is not a number", &rec[2])))?;
        by_subject.insert(rec[0].to_string(), v);
    }
    let values = labels
        .subjects
        .iter()
        .map(|s| by_subject.get(s).copied().ok_or_else(|| bad(format!("no depth for subject `{s}`"))))
        .collect::<Result<Vec<_>, _>>()?;
    if by_subject.len() != labels.subjects.len() {
        return Err(bad(format!("{} depths for {} curves", by_subject.len(), labels.subjects.len())));
    }
    Ok(DepthReport::new(method.ok_or_else(|| bad("empty table".into()))?, values))
}

pub fn outlyingness_csv(report: &OutlyingnessReport, labels: &Labels) -> String {
    let p = report.mo.first().map_or(0, Vec::len);
    let header = std::iter::once("subject_id".to_string())
        .chain((1..=p).map(|k| format!("mo_{k}")))
        .chain(["vo", "flagged", "distance"].map(String::from))
        .collect();
    let rows = labels.subjects.iter().enumerate().map(|(i, s)| {
        std::iter::once(s.clone())
            .chain(report.mo[i].iter().map(|v| v.to_string()))
            .chain([
                report.vo[i].to_string(),
                u8::from(report.flagged[i]).to_string(),
                report.distances[i].to_string(),
            ])
            .collect()
    });
    csv_string(std::iter::once(header).chain(rows))
}

/// Stage-1 flags from an outlyingness table, ordered like `labels`.
pub fn read_flags(path: &Path, labels: &Labels) -> Result<Vec<bool>, CliError> {
    let bad = |m: String| CliError::Io(format!("{}: {m}", path.display()));
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::io(path, e))?;
    let header = rdr.headers().map_err(|e| CliError::io(path, e))?.clone();
    let col = header.iter().position(|h| h == "flagged").ok_or_else(|| bad("no `flagged` column".into()))?;
    let mut by_subject = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::io(path, e))?;
        let flag = match rec.get(col) {
            Some("1") | Some("true") => true,
            Some("0") | Some("false") => false,
            other => return Err(bad(format!("bad flag {other:?}"))),
        };
        by_subject.insert(rec[0].to_string(), flag);
    }
    labels
        .subjects
        .iter()
        .map(|s| by_subject.get(s).copied().ok_or_else(|| bad(format!("no flag for subject `{s}`"))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels() -> Labels {
        Labels { subjects: vec!["a".into(), "b".into()], variables: vec!["x".into()] }
    }

    #[test]
    fn curves_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let grid = Grid::new(vec![0.0, 0.1, 1.0 / 3.0]).unwrap();
        let curves = CompleteCurves::new(2, 1, grid, vec![1.5, -0.0, 1e-300, 2.0, 3.25, 0.1 + 0.2]).unwrap();
        let path = dir.path().join("c.csv");
        write_text(&path, &curves_csv(&curves, &labels())).unwrap();
        let (back, l) = read_curves(&path).unwrap();
        assert_eq!(l, labels());
        assert_eq!(back.values(), curves.values());
        assert_eq!(back.grid(), curves.grid());
    }

    #[test]
    fn mask_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let grid = Grid::equidistant(3, 0.0, 1.0).unwrap();
        let mask = GridMask::from_vec(2, 1, 3, vec![true, false, true, false, true, true]).unwrap();
        let path = dir.path().join("m.csv");
        write_text(&path, &mask_csv(&mask, &grid, &labels())).unwrap();
        let (back, g, _) = read_mask(&path).unwrap();
        assert_eq!(back, mask);
        assert_eq!(g, grid);
    }

    #[test]
    fn depth_table_reorders_by_subject() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        write_text(&path, "subject_id,method,depth,rank\nb,mbd,0.2,2\na,mbd,0.7,1\n").unwrap();
        let d = read_depth(&path, &labels()).unwrap();
        assert_eq!(d.values, vec![0.7, 0.2]);
        assert_eq!(d.ranks, vec![1, 2]);
        assert_eq!(d.method, DepthMethod::Mbd);
    }

    #[test]
    fn ragged_rows_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.csv");
        write_text(&path, "subject_id,variable,0,1\na,x,1\n").unwrap();
        assert!(matches!(read_curves(&path), Err(CliError::Io(_))));
    }
}
