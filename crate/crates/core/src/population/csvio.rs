use std::io::{Read, Write};
use std::path::Path;

use super::{Dataset, VariableKind, VariableSpec};
use crate::error::{Error, Result};

fn is_missing(cell: &str) -> bool {
    matches!(cell.trim(), "" | "NA" | "." | "NaN" | "nan")
}

/// Reads a header-first CSV into a dataset laid out in `schema` order.
///
/// Row numbers in errors count data rows from 1.
pub fn load_csv(path: impl AsRef<Path>, schema: &[VariableSpec]) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    read_csv(file, schema)
}

pub fn read_csv<R: Read>(reader: R, schema: &[VariableSpec]) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let header_names: Vec<&str> = headers.iter().map(str::trim).collect();
    let mut positions = Vec::with_capacity(schema.len());
    for v in schema {
        v.validate()?;
        let pos = header_names
            .iter()
            .position(|h| *h == v.name)
            .ok_or_else(|| Error::UnknownVariable(v.name.clone()))?;
        positions.push(pos);
    }
    if let Some(extra) = header_names.iter().find(|h| !schema.iter().any(|v| v.name == **h)) {
        return Err(Error::Parse {
            row: 0,
            column: extra.to_string(),
            message: "column is not declared in the schema".into(),
        });
    }

    let mut values = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let row = r + 1;
        for (v, &pos) in schema.iter().zip(&positions) {
            let cell = record.get(pos).unwrap_or("");
            if is_missing(cell) {
                return Err(Error::MissingValue { row, column: v.name.clone() });
            }
            let cell = cell.trim();
            match &v.kind {
                VariableKind::Continuous => {
                    let x: f64 = cell.parse().map_err(|_| Error::Parse {
                        row,
                        column: v.name.clone(),
                        message: format!("`{cell}` is not a number"),
                    })?;
                    values.push(x);
                }
                VariableKind::Binary => {
                    let x: f64 = cell.parse().ok().filter(|x| *x == 0.0 || *x == 1.0).ok_or_else(
                        || Error::Parse {
                            row,
                            column: v.name.clone(),
                            message: format!("`{cell}` is not 0 or 1"),
                        },
                    )?;
                    values.push(x);
                }
                VariableKind::Categorical { levels, reference } => {
                    if !levels.iter().any(|l| l == cell) {
                        return Err(Error::UnknownLevel {
                            row,
                            column: v.name.clone(),
                            value: cell.to_string(),
                        });
                    }
                    for l in levels.iter().filter(|l| *l != reference) {
                        values.push(if l == cell { 1.0 } else { 0.0 });
                    }
                }
            }
        }
    }
    Dataset::new(schema.to_vec(), values)
}

/// Writes the dataset back in its variable (not one-hot) representation.
pub fn write_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_csv_to(ds, std::io::BufWriter::new(file))
}

pub fn write_csv_to<W: Write>(ds: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(ds.variables().iter().map(|v| v.name.as_str()))?;
    let groups: Vec<Option<(Vec<String>, Vec<usize>)>> = ds
        .variables()
        .iter()
        .map(|v| match v.kind {
            VariableKind::Categorical { .. } => ds.group_levels(&v.name).ok(),
            _ => None,
        })
        .collect();
    let cols: Vec<usize> = ds
        .variables()
        .iter()
        .map(|v| ds.column_index(&v.column_names()[0]).unwrap_or(0))
        .collect();
    let mut record = Vec::with_capacity(cols.len());
    for r in 0..ds.n() {
        record.clear();
        let row = ds.row(r);
        for (vi, v) in ds.variables().iter().enumerate() {
            record.push(match (&v.kind, &groups[vi]) {
                (VariableKind::Categorical { .. }, Some((levels, idx))) => levels[idx[r]].clone(),
                (VariableKind::Binary, _) => format!("{}", row[cols[vi]] as u8),
                _ => format!("{}", row[cols[vi]]),
            });
        }
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}
