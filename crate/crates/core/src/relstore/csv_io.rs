use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::{ColumnData, ColumnKind, RawColumn, Relation};
use crate::error::{Error, Result};

/// Reads a relation from a CSV file with a header row.
///
/// `schema` maps every column name to its kind; header and schema must name
/// exactly the same columns. Column order follows the header.
pub fn ingest_csv(
    path: impl AsRef<Path>,
    name: &str,
    schema: &BTreeMap<String, ColumnKind>,
) -> Result<Relation> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_reader(file, name, schema)
}

pub fn ingest_reader<R: Read>(
    reader: R,
    name: &str,
    schema: &BTreeMap<String, ColumnKind>,
) -> Result<Relation> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(Error::Empty(format!("CSV for '{name}' has no header")));
    }

    let mut kinds = Vec::with_capacity(headers.len());
    for h in headers.iter() {
        let kind = schema
            .get(h)
            .ok_or_else(|| Error::UnknownColumn(h.to_string()))?;
        kinds.push(*kind);
    }
    if let Some(missing) = schema.keys().find(|k| !headers.iter().any(|h| h == *k)) {
        return Err(Error::InvalidSpec(format!(
            "declared column '{missing}' missing from CSV header of '{name}'"
        )));
    }

    let mut raw: Vec<RawColumn> = kinds
        .iter()
        .map(|k| match k {
            ColumnKind::Numerical => RawColumn::Numerical(Vec::new()),
            ColumnKind::Categorical => RawColumn::Categorical(Vec::new()),
        })
        .collect();

    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        for (column, cell) in record.iter().enumerate() {
            let parse_err = |message: String| Error::Parse {
                row,
                column,
                name: headers[column].to_string(),
                message,
            };
            if cell.is_empty() {
                return Err(parse_err("empty cell (NULL values are not supported)".into()));
            }
            match &mut raw[column] {
                RawColumn::Numerical(v) => {
                    let x: f64 = cell
                        .trim()
                        .parse()
                        .map_err(|_| parse_err(format!("'{cell}' is not a number")))?;
                    if !x.is_finite() {
                        return Err(parse_err(format!("'{cell}' is not finite")));
                    }
                    v.push(x);
                }
                RawColumn::Categorical(v) => v.push(cell.to_string()),
            }
        }
    }

    let columns = headers
        .iter()
        .map(str::to_string)
        .zip(raw)
        .collect::<Vec<_>>();
    Relation::from_columns(name, columns)
}

/// Writes a relation as CSV; numbers use the shortest round-trip formatting.
pub fn write_csv<W: Write>(relation: &Relation, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(relation.columns().iter().map(|c| c.name.as_str()))?;
    let mut record = Vec::with_capacity(relation.columns().len());
    for row in 0..relation.n_rows() {
        record.clear();
        for col in relation.columns() {
            record.push(match &col.data {
                ColumnData::Numerical(v) => format!("{}", v[row]),
                ColumnData::Categorical(_) => col.value(row).to_string(),
            });
        }
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

pub fn export_csv(relation: &Relation, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(relation, std::io::BufWriter::new(file))
}
