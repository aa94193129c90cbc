use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use super::{ingest_csv, Column, ColumnKind, Relation};
use crate::error::{Error, Result};

/// `Relation.Attribute` reference.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AttrRef {
    pub relation: String,
    pub attribute: String,
}

impl AttrRef {
    pub fn new(relation: impl Into<String>, attribute: impl Into<String>) -> Self {
        AttrRef {
            relation: relation.into(),
            attribute: attribute.into(),
        }
    }
}

impl fmt::Display for AttrRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.relation, self.attribute)
    }
}

impl FromStr for AttrRef {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once('.') {
            Some((r, a)) if !r.is_empty() && !a.is_empty() && !a.contains('.') => {
                Ok(AttrRef::new(r, a))
            }
            _ => Err(Error::InvalidSpec(format!(
                "'{s}' is not a Relation.Attribute reference"
            ))),
        }
    }
}

impl Serialize for AttrRef {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for AttrRef {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// An ordered joinable attribute pair. Join operators apply as
/// `left <op> right`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct JoinPair {
    pub left: AttrRef,
    pub right: AttrRef,
}

impl fmt::Display for JoinPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.left, self.right)
    }
}

/// Relations plus the joinable attribute pairs between them.
///
/// Relations are kept sorted by name and join pairs sorted by their textual
/// form, so encodings derived from the catalog do not depend on insertion
/// order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SchemaCatalog {
    relations: Vec<Relation>,
    join_pairs: Vec<JoinPair>,
}

impl SchemaCatalog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_relation(&mut self, relation: Relation) -> Result<()> {
        match self
            .relations
            .binary_search_by(|r| r.name().cmp(relation.name()))
        {
            Ok(_) => Err(Error::Duplicate {
                what: "relation",
                name: relation.name().to_string(),
            }),
            Err(pos) => {
                self.relations.insert(pos, relation);
                Ok(())
            }
        }
    }

    /// Registers `alias` as a renamed copy of `base` (self-joins).
    pub fn add_alias(&mut self, alias: &str, base: &str) -> Result<()> {
        let rel = self
            .relation(base)
            .ok_or_else(|| Error::UnknownRelation(base.to_string()))?
            .renamed(alias)?;
        self.add_relation(rel)
    }

    pub fn register_join_pair(&mut self, left: AttrRef, right: AttrRef) -> Result<()> {
        let lk = self.column(&left)?.ctype.kind();
        let rk = self.column(&right)?.ctype.kind();
        if lk != rk {
            return Err(Error::TypeMismatch(format!(
                "{left} is {lk} but {right} is {rk}"
            )));
        }
        if left.relation == right.relation {
            return Err(Error::InvalidSpec(format!(
                "join pair ({left}, {right}) stays within one relation; use an alias"
            )));
        }
        let pair = JoinPair { left, right };
        let dup = self.join_pairs.iter().any(|p| {
            (p.left == pair.left && p.right == pair.right)
                || (p.left == pair.right && p.right == pair.left)
        });
        if dup {
            return Err(Error::Duplicate {
                what: "join pair",
                name: pair.to_string(),
            });
        }
        let pos = self
            .join_pairs
            .binary_search_by(|p| pair_key(p).cmp(&pair_key(&pair)))
            .unwrap_or_else(|e| e);
        self.join_pairs.insert(pos, pair);
        Ok(())
    }

    pub fn relations(&self) -> &[Relation] {
        &self.relations
    }

    pub fn relation(&self, name: &str) -> Option<&Relation> {
        self.relations
            .binary_search_by(|r| r.name().cmp(name))
            .ok()
            .map(|i| &self.relations[i])
    }

    pub fn relation_index(&self, name: &str) -> Option<usize> {
        self.relations.binary_search_by(|r| r.name().cmp(name)).ok()
    }

    pub fn join_pairs(&self) -> &[JoinPair] {
        &self.join_pairs
    }

    pub fn column(&self, attr: &AttrRef) -> Result<&Column> {
        self.relation(&attr.relation)
            .ok_or_else(|| Error::UnknownRelation(attr.relation.clone()))?
            .column(&attr.attribute)
            .ok_or_else(|| Error::UnknownAttribute(attr.to_string()))
    }

    /// Every attribute in encoding order: relations by name, then columns
    /// by name within each relation.
    pub fn attributes(&self) -> Vec<(AttrRef, &Column)> {
        let mut out = Vec::new();
        for rel in &self.relations {
            let mut cols: Vec<&Column> = rel.columns().iter().collect();
            cols.sort_by(|a, b| a.name.cmp(&b.name));
            for c in cols {
                out.push((AttrRef::new(rel.name(), c.name.clone()), c));
            }
        }
        out
    }

    /// Attributes that take part in some join pair.
    pub fn is_join_attribute(&self, attr: &AttrRef) -> bool {
        self.join_pairs
            .iter()
            .any(|p| &p.left == attr || &p.right == attr)
    }

    /// Digest over every relation's content and the join pairs.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for r in &self.relations {
            h.update(r.content_hash().as_bytes());
        }
        for p in &self.join_pairs {
            h.update(p.to_string().as_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Loads every relation listed in a catalog file and registers its
    /// aliases and join pairs. Relative paths resolve against the catalog
    /// file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: CatalogFile = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        file.materialize(base)
    }
}

fn pair_key(p: &JoinPair) -> (String, String) {
    (p.left.to_string(), p.right.to_string())
}

/// Catalog file: where each relation's CSV and schema live, aliases for
/// self-joins, and join pairs as `"Rel.Attr"` strings.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogFile {
    pub relations: Vec<RelationSource>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub aliases: BTreeMap<String, String>,
    #[serde(default)]
    pub join_pairs: Vec<(AttrRef, AttrRef)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelationSource {
    pub name: String,
    pub csv: PathBuf,
    pub schema: PathBuf,
}

impl CatalogFile {
    pub fn materialize(&self, base: &Path) -> Result<SchemaCatalog> {
        let mut catalog = SchemaCatalog::new();
        for src in &self.relations {
            let schema_path = base.join(&src.schema);
            let text =
                std::fs::read_to_string(&schema_path).map_err(|e| Error::io(&schema_path, e))?;
            let schema: BTreeMap<String, ColumnKind> = serde_json::from_str(&text)?;
            catalog.add_relation(ingest_csv(base.join(&src.csv), &src.name, &schema)?)?;
        }
        for (alias, of) in &self.aliases {
            catalog.add_alias(alias, of)?;
        }
        for (l, r) in &self.join_pairs {
            catalog.register_join_pair(l.clone(), r.clone())?;
        }
        Ok(catalog)
    }
}
