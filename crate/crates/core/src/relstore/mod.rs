//! In-memory columnar relations.
//!
//! Relations are immutable once built. Column data is shared behind an
//! `Arc`, so renaming a relation (the way self-joins are expressed) costs
//! nothing.

mod catalog;
mod csv_io;
pub mod synth;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use catalog::{AttrRef, CatalogFile, JoinPair, RelationSource, SchemaCatalog};
pub use csv_io::{export_csv, ingest_csv, ingest_reader, write_csv};

/// Declared kind of a column, as written in schema files.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numerical,
    Categorical,
}

impl fmt::Display for ColumnKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ColumnKind::Numerical => f.write_str("numerical"),
            ColumnKind::Categorical => f.write_str("categorical"),
        }
    }
}

/// Column type together with the domain observed in the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ColumnType {
    Numerical { min: f64, max: f64 },
    /// Domain values, unique and sorted lexicographically.
    Categorical { domain: Vec<String> },
}

impl ColumnType {
    pub fn kind(&self) -> ColumnKind {
        match self {
            ColumnType::Numerical { .. } => ColumnKind::Numerical,
            ColumnType::Categorical { .. } => ColumnKind::Categorical,
        }
    }

    /// Position of a categorical value in the domain.
    pub fn code_of(&self, value: &str) -> Option<usize> {
        match self {
            ColumnType::Categorical { domain } => {
                domain.binary_search_by(|d| d.as_str().cmp(value)).ok()
            }
            ColumnType::Numerical { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ColumnData {
    Numerical(Vec<f64>),
    /// Codes into the column's categorical domain.
    Categorical(Vec<u32>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Column {
    pub name: String,
    pub ctype: ColumnType,
    pub data: ColumnData,
}

impl Column {
    pub fn len(&self) -> usize {
        match &self.data {
            ColumnData::Numerical(v) => v.len(),
            ColumnData::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn value(&self, row: usize) -> Value<'_> {
        match (&self.data, &self.ctype) {
            (ColumnData::Numerical(v), _) => Value::Num(v[row]),
            (ColumnData::Categorical(codes), ColumnType::Categorical { domain }) => {
                Value::Cat(&domain[codes[row] as usize])
            }
            _ => unreachable!("column data and type disagree"),
        }
    }
}

/// A single cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Value<'a> {
    Num(f64),
    Cat(&'a str),
}

impl fmt::Display for Value<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Num(x) => write!(f, "{x}"),
            Value::Cat(s) => f.write_str(s),
        }
    }
}

/// Raw column values before domain statistics are computed.
#[derive(Clone, Debug)]
pub enum RawColumn {
    Numerical(Vec<f64>),
    Categorical(Vec<String>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Relation {
    name: String,
    columns: Arc<Vec<Column>>,
    n_rows: usize,
}

impl Relation {
    /// Builds a relation and computes per-column domains from the data.
    pub fn from_columns(name: impl Into<String>, raw: Vec<(String, RawColumn)>) -> Result<Self> {
        let name = name.into();
        validate_identifier(&name, "relation name")?;
        if raw.is_empty() {
            return Err(Error::InvalidSpec(format!("relation '{name}' has no columns")));
        }
        let mut seen = BTreeSet::new();
        let mut n_rows = None;
        let mut columns = Vec::with_capacity(raw.len());
        for (col_name, data) in raw {
            validate_identifier(&col_name, "column name")?;
            if !seen.insert(col_name.clone()) {
                return Err(Error::Duplicate {
                    what: "column",
                    name: col_name,
                });
            }
            let len = match &data {
                RawColumn::Numerical(v) => v.len(),
                RawColumn::Categorical(v) => v.len(),
            };
            match n_rows {
                None => n_rows = Some(len),
                Some(n) if n != len => {
                    return Err(Error::InvalidSpec(format!(
                        "column '{col_name}' has {len} rows, expected {n}"
                    )))
                }
                _ => {}
            }
            if len == 0 {
                return Err(Error::Empty(format!("relation '{name}' has no rows")));
            }
            columns.push(build_column(col_name, data)?);
        }
        Ok(Relation {
            name,
            columns: Arc::new(columns),
            n_rows: n_rows.unwrap_or(0),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    /// Same data under a different name; used for self-joins.
    pub fn renamed(&self, name: impl Into<String>) -> Result<Self> {
        let name = name.into();
        validate_identifier(&name, "relation name")?;
        Ok(Relation {
            name,
            columns: Arc::clone(&self.columns),
            n_rows: self.n_rows,
        })
    }

    /// Digest of schema, domains and cell contents.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.name.as_bytes());
        h.update((self.n_rows as u64).to_le_bytes());
        for col in self.columns.iter() {
            h.update(col.name.as_bytes());
            h.update([0u8]);
            match &col.ctype {
                ColumnType::Numerical { min, max } => {
                    h.update(b"N");
                    h.update(min.to_le_bytes());
                    h.update(max.to_le_bytes());
                }
                ColumnType::Categorical { domain } => {
                    h.update(b"C");
                    for v in domain {
                        h.update(v.as_bytes());
                        h.update([0u8]);
                    }
                }
            }
            match &col.data {
                ColumnData::Numerical(v) => v.iter().for_each(|x| h.update(x.to_le_bytes())),
                ColumnData::Categorical(v) => v.iter().for_each(|x| h.update(x.to_le_bytes())),
            }
        }
        hex::encode(h.finalize())
    }

    /// Per-column domain summary, keyed by column name.
    pub fn domain_summary(&self) -> BTreeMap<String, ColumnType> {
        self.columns
            .iter()
            .map(|c| (c.name.clone(), c.ctype.clone()))
            .collect()
    }
}

fn build_column(name: String, raw: RawColumn) -> Result<Column> {
    match raw {
        RawColumn::Numerical(values) => {
            let mut min = f64::INFINITY;
            let mut max = f64::NEG_INFINITY;
            for (row, &v) in values.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::InvalidSpec(format!(
                        "column '{name}' row {row}: non-finite value {v}"
                    )));
                }
                min = min.min(v);
                max = max.max(v);
            }
            Ok(Column {
                name,
                ctype: ColumnType::Numerical { min, max },
                data: ColumnData::Numerical(values),
            })
        }
        RawColumn::Categorical(values) => {
            if let Some(row) = values.iter().position(|v| v.is_empty()) {
                return Err(Error::InvalidSpec(format!(
                    "column '{name}' row {row}: empty categorical value"
                )));
            }
            let domain: Vec<String> = values
                .iter()
                .cloned()
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            let codes = values
                .iter()
                .map(|v| domain.binary_search(v).expect("value in domain") as u32)
                .collect();
            Ok(Column {
                name,
                ctype: ColumnType::Categorical { domain },
                data: ColumnData::Categorical(codes),
            })
        }
    }
}

/// Relation and attribute names appear in "Rel.Attr" references, so they
/// may not contain dots and must be non-empty.
pub(crate) fn validate_identifier(name: &str, what: &str) -> Result<()> {
    if name.is_empty() || name.contains('.') || name.chars().any(char::is_control) {
        return Err(Error::InvalidSpec(format!("invalid {what} '{name}'")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numerical_domain_is_min_max() {
        let r = Relation::from_columns(
            "R",
            vec![("a".into(), RawColumn::Numerical(vec![5.0, 2.0, 9.0]))],
        )
        .unwrap();
        assert_eq!(
            r.columns()[0].ctype,
            ColumnType::Numerical { min: 2.0, max: 9.0 }
        );
    }

    #[test]
    fn categorical_domain_is_sorted_distinct() {
        let r = Relation::from_columns(
            "R",
            vec![(
                "c".into(),
                RawColumn::Categorical(vec!["b".into(), "a".into(), "b".into()]),
            )],
        )
        .unwrap();
        let col = &r.columns()[0];
        assert_eq!(
            col.ctype,
            ColumnType::Categorical {
                domain: vec!["a".into(), "b".into()]
            }
        );
        assert_eq!(col.value(0), Value::Cat("b"));
        assert_eq!(col.ctype.code_of("b"), Some(1));
    }

    #[test]
    fn rejects_duplicate_columns_and_ragged_rows() {
        let dup = Relation::from_columns(
            "R",
            vec![
                ("a".into(), RawColumn::Numerical(vec![1.0])),
                ("a".into(), RawColumn::Numerical(vec![1.0])),
            ],
        );
        assert!(matches!(dup, Err(Error::Duplicate { .. })));
        let ragged = Relation::from_columns(
            "R",
            vec![
                ("a".into(), RawColumn::Numerical(vec![1.0])),
                ("b".into(), RawColumn::Numerical(vec![1.0, 2.0])),
            ],
        );
        assert!(ragged.is_err());
    }

    #[test]
    fn rename_shares_data() {
        let r = Relation::from_columns("R", vec![("a".into(), RawColumn::Numerical(vec![1.0]))])
            .unwrap();
        let s = r.renamed("S").unwrap();
        assert_eq!(s.name(), "S");
        assert!(Arc::ptr_eq(&r.columns, &s.columns));
        assert!(r.renamed("bad.name").is_err());
    }
}
