//! CSV ingestion and emission.
//!
//! Input tables carry a header `x1,...,xd,y` (training data) or `x1,...,xd` (query
//! points); the dimension is read off the header.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use condexp::{Dataset, Point};

use crate::CliError;

fn open(path: &Path) -> Result<csv::Reader<File>, CliError> {
    let file = File::open(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn bad_row(path: &Path, line: u64, msg: impl Into<String>) -> CliError {
    CliError::Csv {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Number of leading `x1, x2, ...` columns.
fn coordinate_columns(headers: &csv::StringRecord) -> usize {
    headers
        .iter()
        .enumerate()
        .take_while(|(k, h)| *h == format!("x{}", k + 1))
        .count()
}

fn parse_row(path: &Path, record: &csv::StringRecord, width: usize) -> Result<Vec<f64>, CliError> {
    let line = record.position().map_or(0, |p| p.line());
    if record.len() != width {
        return Err(bad_row(
            path,
            line,
            format!("expected {width} fields, found {}", record.len()),
        ));
    }
    record
        .iter()
        .enumerate()
        .map(|(k, field)| match field.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(bad_row(
                path,
                line,
                format!("column {} is not a finite number: `{field}`", k + 1),
            )),
        })
        .collect()
}

/// Reads a training table with header `x1,...,xd,y`.
pub fn read_dataset(path: &Path) -> Result<Dataset, CliError> {
    let mut reader = open(path)?;
    let headers = reader
        .headers()
        .map_err(|e| bad_row(path, 1, e.to_string()))?
        .clone();
    let d = coordinate_columns(&headers);
    if d == 0 || headers.len() != d + 1 || &headers[d] != "y" {
        return Err(bad_row(
            path,
            1,
            format!(
                "header must be `x1,...,xd,y`, found `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            bad_row(path, line, e.to_string())
        })?;
        let mut row = parse_row(path, &record, d + 1)?;
        ys.push(row.pop().expect("width checked"));
        xs.push(Point::new(row)?);
    }
    Ok(Dataset::new(xs, ys)?)
}

/// Query points with header `x1,...,xd`; a trailing `y` column is ignored. An empty
/// file yields `None`.
pub fn read_points(path: &Path) -> Result<Option<(usize, Vec<Point>)>, CliError> {
    let mut reader = open(path)?;
    let headers = reader
        .headers()
        .map_err(|e| bad_row(path, 1, e.to_string()))?
        .clone();
    if headers.is_empty() {
        return Ok(None);
    }
    let d = coordinate_columns(&headers);
    let width = headers.len();
    if d == 0 || !(width == d || (width == d + 1 && &headers[d] == "y")) {
        return Err(bad_row(
            path,
            1,
            format!(
                "header must be `x1,...,xd`, found `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    let mut points = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            bad_row(path, line, e.to_string())
        })?;
        let mut row = parse_row(path, &record, width)?;
        row.truncate(d);
        points.push(Point::new(row)?);
    }
    Ok(Some((d, points)))
}

/// `x1,...,xd,prediction` rows, formatted with the shortest round-trip representation.
pub fn predictions_csv(dim: usize, points: &[Point], predictions: &[f64]) -> String {
    let mut out = String::new();
    for k in 1..=dim {
        out.push_str(&format!("x{k},"));
    }
    out.push_str("prediction\n");
    for (p, y) in points.iter().zip(predictions) {
        for c in p.coords() {
            out.push_str(&format!("{c},"));
        }
        out.push_str(&format!("{y}\n"));
    }
    out
}

/// Writes through a temporary file in the destination directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let io = |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}
