//! Delimited data files: a header row with `left`, `right`, then `z_*`
//! hazard covariates and optional `x_*` cure covariates.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Dataset, Observation};

/// Parses a time field. `inf`, `Inf` and an empty field mean no upper bound.
fn parse_time(field: &str, allow_inf: bool) -> std::result::Result<f64, String> {
    let f = field.trim();
    if allow_inf && (f.is_empty() || f.eq_ignore_ascii_case("inf") || f.eq_ignore_ascii_case("infinity")) {
        return Ok(f64::INFINITY);
    }
    let v: f64 = f.parse().map_err(|_| format!("cannot parse {f:?} as a number"))?;
    if v.is_nan() || (!allow_inf && v.is_infinite()) {
        return Err(format!("invalid value {f:?}"));
    }
    Ok(v)
}

pub fn read_dataset<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let left_col = find("left").ok_or(Error::Parse { line: 1, msg: "missing column 'left'".into() })?;
    let right_col = find("right").ok_or(Error::Parse { line: 1, msg: "missing column 'right'".into() })?;
    let z_cols: Vec<usize> = (0..headers.len()).filter(|&i| headers[i].starts_with("z_")).collect();
    let x_cols: Vec<usize> = (0..headers.len()).filter(|&i| headers[i].starts_with("x_")).collect();
    let mut obs = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let line = row + 2;
        let record = record?;
        let bad = |msg: String| Error::Parse { line, msg };
        if record.len() != headers.len() {
            return Err(bad(format!("expected {} fields, found {}", headers.len(), record.len())));
        }
        let left = parse_time(&record[left_col], false).map_err(bad)?;
        let right = parse_time(&record[right_col], true).map_err(bad)?;
        let covariates = |cols: &[usize]| -> Result<Vec<f64>> {
            cols.iter()
                .map(|&c| {
                    parse_time(&record[c], false)
                        .map_err(|m| Error::Parse { line, msg: format!("column {}: {m}", &headers[c]) })
                })
                .collect()
        };
        let z = covariates(&z_cols)?;
        let x = covariates(&x_cols)?;
        let o = Observation::with_cure_covariates(left, right, z, x).map_err(|e| bad(e.to_string()))?;
        obs.push(o);
    }
    if obs.is_empty() {
        return Err(Error::Parse { line: 1, msg: "no observations".into() });
    }
    Dataset::new(obs)
}

pub fn read_dataset_file(path: impl AsRef<Path>) -> Result<Dataset> {
    read_dataset(std::fs::File::open(path)?)
}

pub fn write_dataset<W: Write>(data: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["left".to_string(), "right".to_string()];
    header.extend((1..=data.dz()).map(|j| format!("z_{j}")));
    header.extend((1..=data.dx()).map(|j| format!("x_{j}")));
    w.write_record(&header)?;
    for o in data.observations() {
        let mut rec = vec![o.left.to_string(), if o.right.is_infinite() { "inf".into() } else { o.right.to_string() }];
        rec.extend(o.z.iter().map(f64::to_string));
        rec.extend(o.x.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_dataset_file(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    write_dataset(data, std::fs::File::create(path)?)
}
