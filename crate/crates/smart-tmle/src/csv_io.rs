//! CSV ingestion and export of trial records.
//!
//! Binary role columns accept exactly the tokens `0` and `1`. The second-stage
//! treatment may also be empty, `NA` or `.` for subjects who were never
//! re-randomized.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use smart_tmle_core::config::RoleMap;
use smart_tmle_core::data::{DataError, TrialColumns, TrialDataset};

use crate::error::IoError;

const MISSING_TOKENS: [&str; 3] = ["", "NA", "."];

fn parse_binary(column: &str, row: usize, token: &str) -> Result<u8, DataError> {
    match token.trim() {
        "0" => Ok(0),
        "1" => Ok(1),
        "" => Err(DataError::MissingValue { column: column.into(), row }),
        other => Err(DataError::NonBinaryValue { column: column.into(), row, token: other.into() }),
    }
}

fn parse_real(column: &str, row: usize, token: &str) -> Result<f64, DataError> {
    let t = token.trim();
    if MISSING_TOKENS.contains(&t) {
        return Err(DataError::MissingValue { column: column.into(), row });
    }
    match t.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(DataError::NonNumericValue { column: column.into(), row, token: t.into() }),
    }
}

/// Parse CSV text with a header row. An empty `roles.baseline` selects every
/// column not claimed by another role, in file order.
pub fn read_csv<R: Read>(reader: R, roles: &RoleMap) -> Result<TrialDataset, IoError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::Headers).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    for (j, h) in header.iter().enumerate() {
        if header[..j].contains(h) {
            return Err(DataError::DuplicateColumn(h.clone()).into());
        }
    }
    let find = |name: &str| header.iter().position(|h| h == name).ok_or_else(|| DataError::MissingColumn(name.into()));

    let a1 = find(&roles.a1)?;
    let y1 = find(&roles.y1)?;
    let y2 = find(&roles.y2)?;
    let a2 = roles.a2.as_deref().map(find).transpose()?;
    let w1: Vec<usize> = roles.w1.iter().map(|c| find(c)).collect::<Result<_, _>>()?;
    let claimed: Vec<usize> = [a1, y1, y2].into_iter().chain(a2).chain(w1.iter().copied()).collect();
    let baseline: Vec<usize> = if roles.baseline.is_empty() {
        (0..header.len()).filter(|j| !claimed.contains(j)).collect()
    } else {
        roles.baseline.iter().map(|c| find(c)).collect::<Result<_, _>>()?
    };

    let mut cols = TrialColumns {
        baseline_names: baseline.iter().map(|&j| header[j].clone()).collect(),
        w1_names: w1.iter().map(|&j| header[j].clone()).collect(),
        ..Default::default()
    };
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let field = |j: usize| record.get(j).unwrap_or("");
        for &j in &baseline {
            cols.baseline.push(parse_real(&header[j], row, field(j))?);
        }
        for &j in &w1 {
            cols.w1.push(parse_real(&header[j], row, field(j))?);
        }
        cols.a1.push(parse_binary(&header[a1], row, field(a1))?);
        cols.y1.push(parse_binary(&header[y1], row, field(y1))?);
        cols.y2.push(parse_binary(&header[y2], row, field(y2))?);
        cols.a2.push(match a2 {
            Some(j) if MISSING_TOKENS.contains(&field(j).trim()) => None,
            Some(j) => Some(parse_binary(&header[j], row, field(j))?),
            None => Some(0),
        });
    }
    if cols.a1.is_empty() {
        return Err(DataError::EmptyDataset.into());
    }
    if a2.is_none() {
        // Without a second-stage treatment column nobody was re-randomized.
        cols.a2.iter_mut().for_each(|v| *v = None);
    }
    Ok(TrialDataset::from_columns(cols)?)
}

pub fn load_csv(path: &Path, roles: &RoleMap) -> Result<TrialDataset, IoError> {
    let file = File::open(path).map_err(|e| IoError::file(path, e))?;
    read_csv(file, roles)
}

/// Write with columns `baseline..., a1, y1, w1..., a2, y2`; a missing `a2`
/// is written as `NA`. Reals use the shortest representation that parses back
/// to the same value.
pub fn write_csv_to<W: Write>(writer: W, data: &TrialDataset) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = data.baseline_names().iter().map(String::as_str).collect();
    header.extend(["a1", "y1"]);
    header.extend(data.w1_names().iter().map(String::as_str));
    header.extend(["a2", "y2"]);
    w.write_record(&header)?;
    for i in 0..data.n() {
        let mut rec: Vec<String> = data.baseline_row(i).iter().map(f64::to_string).collect();
        rec.push(data.a1()[i].to_string());
        rec.push(data.y1()[i].to_string());
        rec.extend(data.w1_row(i).iter().map(f64::to_string));
        rec.push(data.a2()[i].map_or_else(|| "NA".to_string(), |a| a.to_string()));
        rec.push(data.y2()[i].to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| IoError::Io(e.to_string()))?;
    Ok(())
}

pub fn write_csv(path: &Path, data: &TrialDataset) -> Result<(), IoError> {
    let file = File::create(path).map_err(|e| IoError::file(path, e))?;
    write_csv_to(file, data)
}

/// Role map matching [`write_csv`] output for a dataset with these names.
pub fn roles_for(data: &TrialDataset) -> RoleMap {
    RoleMap { baseline: data.baseline_names().to_vec(), w1: data.w1_names().to_vec(), ..RoleMap::default() }
}
