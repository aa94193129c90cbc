use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::relstore::{AttrRef, ColumnType, SchemaCatalog};

/// Comparison operator of a join condition, applied as `left <op> right`
/// for the pair's declared orientation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CmpOp {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = "=")]
    Eq,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = "!=")]
    Ne,
}

impl CmpOp {
    pub const ALL: [CmpOp; 6] = [
        CmpOp::Lt,
        CmpOp::Le,
        CmpOp::Eq,
        CmpOp::Ge,
        CmpOp::Gt,
        CmpOp::Ne,
    ];

    /// Whether the operator makes sense on an unordered (categorical) domain.
    pub fn is_order_free(self) -> bool {
        matches!(self, CmpOp::Eq | CmpOp::Ne)
    }

    pub fn holds(self, ord: std::cmp::Ordering) -> bool {
        use std::cmp::Ordering::*;
        match self {
            CmpOp::Lt => ord == Less,
            CmpOp::Le => ord != Greater,
            CmpOp::Eq => ord == Equal,
            CmpOp::Ge => ord != Less,
            CmpOp::Gt => ord == Greater,
            CmpOp::Ne => ord != Equal,
        }
    }
}

impl fmt::Display for CmpOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Eq => "=",
            CmpOp::Ge => ">=",
            CmpOp::Gt => ">",
            CmpOp::Ne => "!=",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum Filter {
    /// Closed interval `lb <= A <= ub`.
    Range(f64, f64),
    /// `A IN {values}`.
    In(Vec<String>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Selection {
    pub attr: AttrRef,
    pub filter: Filter,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JoinCondition {
    /// Index into the catalog's join pairs.
    pub pair: usize,
    pub op: CmpOp,
}

/// Conjunctive select-join query.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Query {
    pub relations: Vec<String>,
    #[serde(default)]
    pub selections: Vec<Selection>,
    #[serde(default)]
    pub joins: Vec<JoinCondition>,
}

impl Query {
    pub fn single(relation: impl Into<String>, selections: Vec<Selection>) -> Self {
        Query {
            relations: vec![relation.into()],
            selections,
            joins: Vec::new(),
        }
    }

    /// Selection plus join condition count; the stratification key.
    pub fn n_conditions(&self) -> usize {
        self.selections.len() + self.joins.len()
    }

    /// Sorted relations, selections by attribute, IN sets and joins; two
    /// queries are structurally equal iff their canonical forms are equal.
    pub fn canonicalize(&mut self) {
        self.relations.sort();
        self.selections.sort_by(|a, b| a.attr.cmp(&b.attr));
        for s in &mut self.selections {
            if let Filter::In(values) = &mut s.filter {
                values.sort();
                values.dedup();
            }
        }
        self.joins.sort();
    }

    pub fn canonical(&self) -> Query {
        let mut q = self.clone();
        q.canonicalize();
        q
    }

    /// Checks every structural precondition against the catalog.
    pub fn validate(&self, catalog: &SchemaCatalog) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidQuery(m));
        if self.relations.is_empty() {
            return bad("query references no relation".into());
        }
        let mut rels = BTreeSet::new();
        for r in &self.relations {
            if catalog.relation(r).is_none() {
                return Err(Error::UnknownRelation(r.clone()));
            }
            if !rels.insert(r.as_str()) {
                return bad(format!("relation '{r}' listed twice"));
            }
        }

        let mut seen_attrs = BTreeSet::new();
        for s in &self.selections {
            if !rels.contains(s.attr.relation.as_str()) {
                return bad(format!(
                    "selection on {} but relation not in query",
                    s.attr
                ));
            }
            if !seen_attrs.insert(&s.attr) {
                return bad(format!("attribute {} selected twice", s.attr));
            }
            let col = catalog.column(&s.attr)?;
            match (&s.filter, &col.ctype) {
                (Filter::Range(lb, ub), ColumnType::Numerical { min, max }) => {
                    if !(lb.is_finite() && ub.is_finite()) {
                        return bad(format!("non-finite range on {}", s.attr));
                    }
                    if lb > ub {
                        return bad(format!("range on {} has lb {lb} > ub {ub}", s.attr));
                    }
                    if lb < min || ub > max {
                        return bad(format!(
                            "range [{lb}, {ub}] on {} leaves domain [{min}, {max}]",
                            s.attr
                        ));
                    }
                }
                (Filter::In(values), ColumnType::Categorical { .. }) => {
                    if values.is_empty() {
                        return bad(format!("empty IN set on {}", s.attr));
                    }
                    let mut uniq = BTreeSet::new();
                    for v in values {
                        if col.ctype.code_of(v).is_none() {
                            return bad(format!("'{v}' not in domain of {}", s.attr));
                        }
                        if !uniq.insert(v) {
                            return bad(format!("'{v}' repeated in IN set on {}", s.attr));
                        }
                    }
                }
                (Filter::Range(..), _) => {
                    return Err(Error::TypeMismatch(format!(
                        "range filter on categorical attribute {}",
                        s.attr
                    )))
                }
                (Filter::In(_), _) => {
                    return Err(Error::TypeMismatch(format!(
                        "IN filter on numerical attribute {}",
                        s.attr
                    )))
                }
            }
        }

        let pairs = catalog.join_pairs();
        let mut seen_pairs = BTreeSet::new();
        // adjacency for the connectivity check
        let mut adj: BTreeMap<&str, Vec<&str>> = rels.iter().map(|r| (*r, Vec::new())).collect();
        for j in &self.joins {
            let Some(pair) = pairs.get(j.pair) else {
                return bad(format!("join pair index {} out of range", j.pair));
            };
            if !seen_pairs.insert(j.pair) {
                return bad(format!("join pair {pair} constrained twice"));
            }
            let (l, r) = (pair.left.relation.as_str(), pair.right.relation.as_str());
            if !rels.contains(l) || !rels.contains(r) {
                return bad(format!("join on {pair} but a side is not in the query"));
            }
            if !j.op.is_order_free()
                && catalog.column(&pair.left)?.ctype.kind()
                    == crate::relstore::ColumnKind::Categorical
            {
                return bad(format!(
                    "operator {} on categorical pair {pair}; only = and != allowed",
                    j.op
                ));
            }
            adj.get_mut(l).unwrap().push(r);
            adj.get_mut(r).unwrap().push(l);
        }

        let start = *rels.iter().next().unwrap();
        let mut reached = BTreeSet::from([start]);
        let mut stack = vec![start];
        while let Some(r) = stack.pop() {
            for &n in &adj[r] {
                if reached.insert(n) {
                    stack.push(n);
                }
            }
        }
        if reached.len() != rels.len() {
            return bad("joined relations are not connected".into());
        }
        Ok(())
    }
}

/// One line of a query or labeled-workload JSONL file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub id: u64,
    #[serde(flatten)]
    pub query: Query,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cardinality: Option<u64>,
}
