use std::collections::HashMap;

use rayon::prelude::*;

use super::query::{CmpOp, Filter, JoinCondition, Query};
use crate::error::{Error, Result};
use crate::relstore::{Column, ColumnData, ColumnType, Relation, SchemaCatalog, Value};

/// How joins are evaluated. Both strategies return identical counts; the
/// nested-loop form exists for differential testing.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum JoinStrategy {
    /// Hash join when an equality condition links the next relation,
    /// nested loops otherwise.
    #[default]
    Auto,
    NestedLoop,
}

/// Exact cardinality of `query`.
pub fn execute(query: &Query, catalog: &SchemaCatalog) -> Result<u64> {
    execute_with(query, catalog, JoinStrategy::Auto)
}

pub fn execute_with(query: &Query, catalog: &SchemaCatalog, strategy: JoinStrategy) -> Result<u64> {
    query.validate(catalog)?;
    Ok(run(query, catalog, strategy))
}

/// Element-wise [`execute`], order preserved. Every query is validated
/// before any runs; the first invalid one is reported with its index.
/// `threads` of `None` uses the ambient rayon pool.
pub fn execute_batch(
    queries: &[Query],
    catalog: &SchemaCatalog,
    threads: Option<usize>,
) -> Result<Vec<u64>> {
    for (index, q) in queries.iter().enumerate() {
        q.validate(catalog).map_err(|e| Error::InBatch {
            index,
            source: Box::new(e),
        })?;
    }
    let work = || {
        queries
            .par_iter()
            .map(|q| run(q, catalog, JoinStrategy::Auto))
            .collect::<Vec<_>>()
    };
    match threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
            Ok(pool.install(work))
        }
        None => Ok(work()),
    }
}

/// Hashable join key. Numerical keys compare by bit pattern with `-0.0`
/// folded into `0.0`, which matches `==` on finite values.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
enum Key<'a> {
    Num(u64),
    Cat(&'a str),
}

fn key_of(v: Value<'_>) -> Key<'_> {
    match v {
        Value::Num(x) => Key::Num(if x == 0.0 { 0 } else { x.to_bits() }),
        Value::Cat(s) => Key::Cat(s),
    }
}

fn compare(a: Value<'_>, b: Value<'_>) -> std::cmp::Ordering {
    match (a, b) {
        (Value::Num(x), Value::Num(y)) => x.partial_cmp(&y).expect("finite values"),
        (Value::Cat(x), Value::Cat(y)) => x.cmp(y),
        _ => unreachable!("join pair types validated"),
    }
}

/// Row ids of `relation` passing all of the query's selections on it.
fn filtered_rows(query: &Query, relation: &Relation) -> Vec<u32> {
    enum Pred<'a> {
        Range(&'a [f64], f64, f64),
        In(&'a [u32], Vec<bool>),
    }
    let preds: Vec<Pred<'_>> = query
        .selections
        .iter()
        .filter(|s| s.attr.relation == relation.name())
        .map(|s| {
            let col = relation.column(&s.attr.attribute).expect("validated");
            match (&s.filter, &col.data, &col.ctype) {
                (Filter::Range(lb, ub), ColumnData::Numerical(v), _) => Pred::Range(v, *lb, *ub),
                (Filter::In(values), ColumnData::Categorical(codes), ColumnType::Categorical { domain }) => {
                    let mut mask = vec![false; domain.len()];
                    for v in values {
                        mask[col.ctype.code_of(v).expect("validated")] = true;
                    }
                    Pred::In(codes, mask)
                }
                _ => unreachable!("filter types validated"),
            }
        })
        .collect();
    (0..relation.n_rows())
        .filter(|&row| {
            preds.iter().all(|p| match p {
                Pred::Range(v, lb, ub) => *lb <= v[row] && v[row] <= *ub,
                Pred::In(codes, mask) => mask[codes[row] as usize],
            })
        })
        .map(|r| r as u32)
        .collect()
}

/// Condition linking the relation being added (`new_col`) to a relation
/// already in the intermediate result at `slot`.
struct Link<'a> {
    slot: usize,
    old_col: &'a Column,
    new_col: &'a Column,
    /// Operator with the new relation's attribute on the right.
    op: CmpOp,
}

fn flip(op: CmpOp) -> CmpOp {
    match op {
        CmpOp::Lt => CmpOp::Gt,
        CmpOp::Le => CmpOp::Ge,
        CmpOp::Ge => CmpOp::Le,
        CmpOp::Gt => CmpOp::Lt,
        other => other,
    }
}

fn run(query: &Query, catalog: &SchemaCatalog, strategy: JoinStrategy) -> u64 {
    let mut rels: Vec<&Relation> = query
        .relations
        .iter()
        .map(|r| catalog.relation(r).expect("validated"))
        .collect();
    rels.sort_by_key(|r| catalog.relation_index(r.name()));

    if rels.len() == 1 {
        return filtered_rows(query, rels[0]).len() as u64;
    }

    let pairs = catalog.join_pairs();
    let joins: Vec<JoinCondition> = query.joins.clone();

    // left-deep order: catalog order, taking the first relation connected
    // to what has been joined so far
    let mut order: Vec<&Relation> = vec![rels.remove(0)];
    while !rels.is_empty() {
        let pos = rels
            .iter()
            .position(|r| {
                joins.iter().any(|j| {
                    let p = &pairs[j.pair];
                    let (l, rr) = (p.left.relation.as_str(), p.right.relation.as_str());
                    (l == r.name() && order.iter().any(|o| o.name() == rr))
                        || (rr == r.name() && order.iter().any(|o| o.name() == l))
                })
            })
            .expect("validated connectivity");
        order.push(rels.remove(pos));
    }

    // intermediate result: row-major tuples of row ids, `width` per tuple
    let mut tuples: Vec<u32> = filtered_rows(query, order[0]);
    let mut width = 1;

    for (step, rel) in order.iter().enumerate().skip(1) {
        let last = step + 1 == order.len();
        let new_rows = filtered_rows(query, rel);
        let links: Vec<Link<'_>> = joins
            .iter()
            .filter_map(|j| {
                let p = &pairs[j.pair];
                let slot_of = |name: &str| order[..step].iter().position(|o| o.name() == name);
                if p.right.relation == rel.name() {
                    slot_of(&p.left.relation).map(|slot| Link {
                        slot,
                        old_col: catalog.column(&p.left).expect("validated"),
                        new_col: catalog.column(&p.right).expect("validated"),
                        op: j.op,
                    })
                } else if p.left.relation == rel.name() {
                    slot_of(&p.right.relation).map(|slot| Link {
                        slot,
                        old_col: catalog.column(&p.right).expect("validated"),
                        new_col: catalog.column(&p.left).expect("validated"),
                        op: flip(j.op),
                    })
                } else {
                    None
                }
            })
            .collect();

        let satisfied = |tuple: &[u32], new_row: u32, skip: Option<usize>| {
            links.iter().enumerate().all(|(i, l)| {
                Some(i) == skip
                    || l.op.holds(compare(
                        l.old_col.value(tuple[l.slot] as usize),
                        l.new_col.value(new_row as usize),
                    ))
            })
        };

        let hash_link = match strategy {
            JoinStrategy::Auto => links.iter().position(|l| l.op == CmpOp::Eq),
            JoinStrategy::NestedLoop => None,
        };

        let mut next: Vec<u32> = Vec::new();
        let mut count: u64 = 0;
        let mut emit = |tuple: &[u32], new_row: u32| {
            if last {
                count += 1;
            } else {
                next.extend_from_slice(tuple);
                next.push(new_row);
            }
        };

        match hash_link {
            Some(h) => {
                let link = &links[h];
                let mut table: HashMap<Key<'_>, Vec<u32>> = HashMap::new();
                for &r in &new_rows {
                    table
                        .entry(key_of(link.new_col.value(r as usize)))
                        .or_default()
                        .push(r);
                }
                for tuple in tuples.chunks_exact(width) {
                    let k = key_of(link.old_col.value(tuple[link.slot] as usize));
                    if let Some(matches) = table.get(&k) {
                        for &r in matches {
                            if satisfied(tuple, r, Some(h)) {
                                emit(tuple, r);
                            }
                        }
                    }
                }
            }
            None => {
                for tuple in tuples.chunks_exact(width) {
                    for &r in &new_rows {
                        if satisfied(tuple, r, None) {
                            emit(tuple, r);
                        }
                    }
                }
            }
        }

        if last {
            return count;
        }
        tuples = next;
        width += 1;
    }
    unreachable!("loop returns on the last relation")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::query::{JoinCondition, Selection};
    use crate::relstore::RawColumn;

    fn rel(name: &str, cols: Vec<(&str, RawColumn)>) -> Relation {
        Relation::from_columns(
            name,
            cols.into_iter().map(|(n, c)| (n.to_string(), c)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn single_relation_range() {
        let mut c = SchemaCatalog::new();
        c.add_relation(rel(
            "R",
            vec![
                ("A1", RawColumn::Numerical(vec![1.0, 2.0, 3.0])),
                (
                    "A2",
                    RawColumn::Categorical(vec!["a".into(), "b".into(), "a".into()]),
                ),
            ],
        ))
        .unwrap();
        let q = Query::single(
            "R",
            vec![Selection {
                attr: "R.A1".parse().unwrap(),
                filter: Filter::Range(1.0, 2.0),
            }],
        );
        assert_eq!(execute(&q, &c).unwrap(), 2);
    }

    #[test]
    fn two_relation_equi_join() {
        let mut c = SchemaCatalog::new();
        c.add_relation(rel("R1", vec![("v", RawColumn::Numerical(vec![1.0, 2.0]))]))
            .unwrap();
        c.add_relation(rel("R2", vec![("v", RawColumn::Numerical(vec![2.0, 3.0]))]))
            .unwrap();
        c.register_join_pair("R1.v".parse().unwrap(), "R2.v".parse().unwrap())
            .unwrap();
        let q = Query {
            relations: vec!["R1".into(), "R2".into()],
            selections: vec![],
            joins: vec![JoinCondition {
                pair: 0,
                op: CmpOp::Eq,
            }],
        };
        assert_eq!(execute(&q, &c).unwrap(), 1);
        let lt = Query {
            joins: vec![JoinCondition {
                pair: 0,
                op: CmpOp::Lt,
            }],
            ..q.clone()
        };
        // (1,2) (1,3) (2,3)
        assert_eq!(execute(&lt, &c).unwrap(), 3);
        assert_eq!(
            execute_with(&lt, &c, JoinStrategy::NestedLoop).unwrap(),
            3
        );
    }

    #[test]
    fn empty_result_is_zero_not_error() {
        let mut c = SchemaCatalog::new();
        c.add_relation(rel("R", vec![("a", RawColumn::Numerical(vec![1.0, 5.0]))]))
            .unwrap();
        let q = Query::single(
            "R",
            vec![Selection {
                attr: "R.a".parse().unwrap(),
                filter: Filter::Range(2.0, 3.0),
            }],
        );
        assert_eq!(execute(&q, &c).unwrap(), 0);
    }

    #[test]
    fn batch_contract() {
        let mut c = SchemaCatalog::new();
        c.add_relation(rel(
            "R",
            vec![("a", RawColumn::Numerical(vec![1.0, 2.0, 3.0, 4.0]))],
        ))
        .unwrap();
        let mk = |lb: f64, ub: f64| {
            Query::single(
                "R",
                vec![Selection {
                    attr: "R.a".parse().unwrap(),
                    filter: Filter::Range(lb, ub),
                }],
            )
        };
        assert!(execute_batch(&[], &c, None).unwrap().is_empty());
        let qs = vec![mk(1.0, 2.0), mk(1.0, 2.0)];
        assert_eq!(execute_batch(&qs, &c, Some(2)).unwrap(), vec![2, 2]);
        let qs = vec![mk(1.0, 4.0), mk(2.0, 2.0), mk(3.0, 4.0)];
        let rev: Vec<Query> = qs.iter().rev().cloned().collect();
        assert_eq!(execute_batch(&qs, &c, None).unwrap(), vec![4, 1, 2]);
        assert_eq!(execute_batch(&rev, &c, None).unwrap(), vec![2, 1, 4]);
        let bad = vec![mk(1.0, 2.0), mk(3.0, 1.0)];
        match execute_batch(&bad, &c, None) {
            Err(Error::InBatch { index, .. }) => assert_eq!(index, 1),
            other => panic!("expected batch error, got {other:?}"),
        }
    }

    #[test]
    fn self_join_via_alias_matches_physical_copy() {
        let data = vec![1.0, 2.0, 2.0, 5.0];
        let mut aliased = SchemaCatalog::new();
        aliased
            .add_relation(rel("R", vec![("v", RawColumn::Numerical(data.clone()))]))
            .unwrap();
        aliased.add_alias("S", "R").unwrap();
        aliased
            .register_join_pair("R.v".parse().unwrap(), "S.v".parse().unwrap())
            .unwrap();

        let mut copied = SchemaCatalog::new();
        copied
            .add_relation(rel("R", vec![("v", RawColumn::Numerical(data.clone()))]))
            .unwrap();
        copied
            .add_relation(rel("S", vec![("v", RawColumn::Numerical(data))]))
            .unwrap();
        copied
            .register_join_pair("R.v".parse().unwrap(), "S.v".parse().unwrap())
            .unwrap();

        for op in CmpOp::ALL {
            let q = Query {
                relations: vec!["R".into(), "S".into()],
                selections: vec![],
                joins: vec![JoinCondition { pair: 0, op }],
            };
            assert_eq!(execute(&q, &aliased).unwrap(), execute(&q, &copied).unwrap());
        }
    }
}
