use std::collections::{BTreeSet, HashSet};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::oracle::{execute_batch, CmpOp, Filter, JoinCondition, Query, QueryRecord, Selection};
use crate::relstore::{AttrRef, ColumnData, ColumnKind, ColumnType, Relation, SchemaCatalog};

/// Largest IN set drawn for a categorical attribute.
const MAX_IN_SET: usize = 8;

/// Draws a condition on `col` centred on row `row`: a range around the
/// row's value with half-width uniform in `(0, (max - min) / 2]` clipped to
/// the domain, or an IN set holding the row's value plus `k - 1` other
/// distinct domain values, `k` uniform in `[1, min(m, 8)]`. The chosen row
/// always satisfies the condition.
fn data_centric_filter(rel: &Relation, col_idx: usize, row: usize, rng: &mut ChaCha8Rng) -> Filter {
    let col = &rel.columns()[col_idx];
    match (&col.ctype, &col.data) {
        (ColumnType::Numerical { min, max }, ColumnData::Numerical(v)) => {
            let center = v[row];
            let half = (max - min) / 2.0;
            if half <= 0.0 {
                return Filter::Range(*min, *max);
            }
            // 1 - U[0,1) lies in (0, 1]
            let hw = (1.0 - rng.random::<f64>()) * half;
            Filter::Range((center - hw).max(*min), (center + hw).min(*max))
        }
        (ColumnType::Categorical { domain }, ColumnData::Categorical(codes)) => {
            let m = domain.len();
            let own = codes[row] as usize;
            let k = rng.random_range(1..=m.min(MAX_IN_SET));
            let mut picked = BTreeSet::from([own]);
            if k > 1 {
                let others: Vec<usize> = (0..m).filter(|&i| i != own).collect();
                for i in sample(rng, others.len(), k - 1) {
                    picked.insert(others[i]);
                }
            }
            Filter::In(picked.into_iter().map(|i| domain[i].clone()).collect())
        }
        _ => unreachable!("column data and type disagree"),
    }
}

/// Selections on the given columns of `rel`, all centred on one random row.
fn selections_for(rel: &Relation, col_idxs: &[usize], rng: &mut ChaCha8Rng) -> Vec<Selection> {
    let row = rng.random_range(0..rel.n_rows());
    let mut sels: Vec<Selection> = col_idxs
        .iter()
        .map(|&c| Selection {
            attr: AttrRef::new(rel.name(), rel.columns()[c].name.clone()),
            filter: data_centric_filter(rel, c, row, rng),
        })
        .collect();
    sels.sort_by(|a, b| a.attr.cmp(&b.attr));
    sels
}

/// `n` single-relation queries, each with selections on exactly `d`
/// distinct attributes chosen uniformly from the relation's `D`.
pub fn gen_single_relation(relation: &Relation, d: usize, n: usize, seed: u64) -> Result<Vec<Query>> {
    let big_d = relation.columns().len();
    if d < 2 || d > big_d {
        return Err(Error::InvalidArgument(format!(
            "condition count d = {d} outside [2, {big_d}]"
        )));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("query count n must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| {
            let mut cols = sample(&mut rng, big_d, d).into_vec();
            cols.sort_unstable();
            Query::single(relation.name(), selections_for(relation, &cols, &mut rng))
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct JoinGenOptions {
    /// Selection conditions drawn per participating relation.
    pub selections_per_relation: usize,
    /// Draw join operators from all operators valid for the pair instead of
    /// only equality.
    pub theta_joins: bool,
}

impl Default for JoinGenOptions {
    fn default() -> Self {
        JoinGenOptions {
            selections_per_relation: 1,
            theta_joins: false,
        }
    }
}

/// `n` queries with exactly `t` join conditions. Each query starts at a
/// uniformly chosen relation and grows by `t` steps, every step following a
/// uniformly chosen join-graph edge from the joined set to a new relation.
/// Selections avoid join attributes.
pub fn gen_join(
    catalog: &SchemaCatalog,
    t: usize,
    n: usize,
    seed: u64,
    opts: &JoinGenOptions,
) -> Result<Vec<Query>> {
    let rels = catalog.relations();
    if rels.is_empty() {
        return Err(Error::InvalidArgument("catalog has no relations".into()));
    }
    if t + 1 > rels.len() {
        return Err(Error::InvalidArgument(format!(
            "t = {t} joins needs {} relations, catalog has {}",
            t + 1,
            rels.len()
        )));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("query count n must be at least 1".into()));
    }
    let pairs = catalog.join_pairs();

    // starts whose connected component can host t joins
    let component_size = |start: &str| {
        let mut seen = BTreeSet::from([start.to_string()]);
        let mut stack = vec![start.to_string()];
        while let Some(r) = stack.pop() {
            for p in pairs {
                for (a, b) in [(&p.left.relation, &p.right.relation), (&p.right.relation, &p.left.relation)] {
                    if *a == r && seen.insert(b.clone()) {
                        stack.push(b.clone());
                    }
                }
            }
        }
        seen.len()
    };
    let starts: Vec<&Relation> = rels
        .iter()
        .filter(|r| component_size(r.name()) > t)
        .collect();
    if starts.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no connected set of {} relations in the join graph",
            t + 1
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let start = starts[rng.random_range(0..starts.len())];
        let mut joined: Vec<String> = vec![start.name().to_string()];
        let mut joins = Vec::with_capacity(t);
        for _ in 0..t {
            let frontier: Vec<usize> = pairs
                .iter()
                .enumerate()
                .filter(|(_, p)| {
                    joined.contains(&p.left.relation) != joined.contains(&p.right.relation)
                })
                .map(|(i, _)| i)
                .collect();
            let pi = frontier[rng.random_range(0..frontier.len())];
            let p = &pairs[pi];
            let added = if joined.contains(&p.left.relation) {
                &p.right.relation
            } else {
                &p.left.relation
            };
            joined.push(added.clone());
            let op = if opts.theta_joins {
                let categorical = catalog.column(&p.left)?.ctype.kind() == ColumnKind::Categorical;
                let ops: &[CmpOp] = if categorical {
                    &[CmpOp::Eq, CmpOp::Ne]
                } else {
                    &CmpOp::ALL
                };
                ops[rng.random_range(0..ops.len())]
            } else {
                CmpOp::Eq
            };
            joins.push(JoinCondition { pair: pi, op });
        }

        let mut selections = Vec::new();
        joined.sort();
        for name in &joined {
            let rel = catalog.relation(name).expect("catalog relation");
            let candidates: Vec<usize> = rel
                .columns()
                .iter()
                .enumerate()
                .filter(|(_, c)| !catalog.is_join_attribute(&AttrRef::new(name.clone(), c.name.clone())))
                .map(|(i, _)| i)
                .collect();
            let k = opts.selections_per_relation.min(candidates.len());
            if k == 0 {
                continue;
            }
            let mut cols: Vec<usize> = sample(&mut rng, candidates.len(), k)
                .into_iter()
                .map(|i| candidates[i])
                .collect();
            cols.sort_unstable();
            selections.extend(selections_for(rel, &cols, &mut rng));
        }
        joins.sort();
        out.push(Query {
            relations: joined,
            selections,
            joins,
        });
    }
    Ok(out)
}

/// Wraps queries into records with consecutive ids starting at `first_id`.
pub fn records(queries: Vec<Query>, first_id: u64) -> Vec<QueryRecord> {
    queries
        .into_iter()
        .enumerate()
        .map(|(i, query)| QueryRecord {
            id: first_id + i as u64,
            query,
            cardinality: None,
        })
        .collect()
}

/// Canonicalizes, drops structural duplicates (first occurrence wins),
/// labels every survivor with the oracle and removes empty results.
pub fn finalize(
    queries: Vec<QueryRecord>,
    catalog: &SchemaCatalog,
    threads: Option<usize>,
) -> Result<Vec<QueryRecord>> {
    let mut seen = HashSet::new();
    let mut unique = Vec::with_capacity(queries.len());
    for mut rec in queries {
        rec.query.canonicalize();
        let key = serde_json::to_string(&rec.query)?;
        if seen.insert(key) {
            unique.push(rec);
        }
    }
    let plain: Vec<Query> = unique.iter().map(|r| r.query.clone()).collect();
    let labels = execute_batch(&plain, catalog, threads)?;
    Ok(unique
        .into_iter()
        .zip(labels)
        .filter(|(_, c)| *c > 0)
        .map(|(mut rec, c)| {
            rec.cardinality = Some(c);
            rec
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relstore::synth::{presets, synthesize};
    use crate::relstore::synth::ColumnSpec;
    use crate::relstore::RawColumn;

    fn wide_relation() -> Relation {
        let cols = (0..10)
            .map(|i| {
                (
                    format!("c{i}"),
                    RawColumn::Numerical((0..50).map(|r| ((r * (i + 3)) % 17) as f64).collect()),
                )
            })
            .collect();
        Relation::from_columns("W", cols).unwrap()
    }

    #[test]
    fn exactly_d_distinct_attributes() {
        let r = wide_relation();
        let qs = gen_single_relation(&r, 2, 200, 1).unwrap();
        assert_eq!(qs.len(), 200);
        for q in &qs {
            let attrs: BTreeSet<_> = q.selections.iter().map(|s| &s.attr).collect();
            assert_eq!(attrs.len(), 2);
            assert_eq!(q.selections.len(), 2);
        }
    }

    #[test]
    fn attribute_subsets_uniform() {
        let cols: Vec<_> = (0..6).map(|i| (format!("c{i}"), RawColumn::Numerical(vec![0.0, 1.0]))).collect();
        let r6 = Relation::from_columns("S", cols).unwrap();
        let qs = gen_single_relation(&r6, 2, 3000, 11).unwrap();
        let mut counts = std::collections::BTreeMap::new();
        for q in &qs {
            let key: Vec<_> = q.selections.iter().map(|s| s.attr.attribute.clone()).collect();
            *counts.entry(key).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 15);
        let e = 3000.0 / 15.0;
        let chi2: f64 = counts.values().map(|&c| (c as f64 - e).powi(2) / e).sum();
        // 0.999 quantile of chi-square with 14 degrees of freedom
        assert!(chi2 < 36.12, "chi2 = {chi2}");
    }

    #[test]
    fn argument_errors() {
        let r = wide_relation();
        assert!(gen_single_relation(&r, 2, 0, 1).is_err());
        assert!(gen_single_relation(&r, 1, 5, 1).is_err());
        assert!(gen_single_relation(&r, 11, 5, 1).is_err());
    }

    #[test]
    fn deterministic_under_seed() {
        let r = wide_relation();
        assert_eq!(
            gen_single_relation(&r, 3, 50, 9).unwrap(),
            gen_single_relation(&r, 3, 50, 9).unwrap()
        );
    }

    #[test]
    fn generated_queries_validate_and_hit() {
        let cat = synthesize(&presets::join_chain(30), 5).unwrap();
        for t in 0..=3 {
            let qs = gen_join(&cat, t, 40, t as u64, &JoinGenOptions::default()).unwrap();
            for q in &qs {
                q.validate(&cat).unwrap();
                assert_eq!(q.joins.len(), t);
                assert_eq!(q.relations.len(), t + 1);
                for s in &q.selections {
                    assert!(!cat.is_join_attribute(&s.attr));
                }
            }
        }
        let single = synthesize(&presets::single_relation(300), 2).unwrap();
        let rel = &single.relations()[0];
        let qs = gen_single_relation(rel, 4, 100, 3).unwrap();
        let labels = execute_batch(&qs, &single, None).unwrap();
        // the centre row satisfies every condition
        assert!(labels.iter().all(|&c| c >= 1));
    }

    #[test]
    fn t_zero_has_no_joins_and_t_one_covers_both() {
        let spec = crate::relstore::synth::SynthSpec {
            relations: vec![
                crate::relstore::synth::RelationSpec {
                    name: "P".into(),
                    rows: 10,
                    columns: vec![
                        ColumnSpec::new("id", crate::relstore::synth::ColumnGen::Sequence { start: 0 }),
                        ColumnSpec::new("x", crate::relstore::synth::ColumnGen::Uniform { low: 0.0, high: 1.0 }),
                    ],
                },
                crate::relstore::synth::RelationSpec {
                    name: "Q".into(),
                    rows: 20,
                    columns: vec![
                        ColumnSpec::new("pid", crate::relstore::synth::ColumnGen::UniformInt { low: 0, high: 9 }),
                        ColumnSpec::new("y", crate::relstore::synth::ColumnGen::Uniform { low: 0.0, high: 1.0 }),
                    ],
                },
            ],
            aliases: Default::default(),
            join_pairs: vec![(AttrRef::new("P", "id"), AttrRef::new("Q", "pid"))],
        };
        let cat = synthesize(&spec, 1).unwrap();
        let t0 = gen_join(&cat, 0, 10, 1, &JoinGenOptions::default()).unwrap();
        assert!(t0.iter().all(|q| q.joins.is_empty() && q.relations.len() == 1));
        let t1 = gen_join(&cat, 1, 10, 1, &JoinGenOptions::default()).unwrap();
        for q in &t1 {
            assert_eq!(q.relations, vec!["P".to_string(), "Q".to_string()]);
            assert_eq!(q.joins.len(), 1);
        }
        assert!(gen_join(&cat, 2, 10, 1, &JoinGenOptions::default()).is_err());
    }

    #[test]
    fn chain_walk_yields_connected_subpath() {
        let cat = synthesize(&presets::join_chain(10), 4).unwrap();
        let order = ["A", "B", "C", "D"];
        let qs = gen_join(&cat, 3 - 1, 100, 8, &JoinGenOptions::default()).unwrap();
        for q in &qs {
            // oracle: positions along the chain form a contiguous run
            let mut pos: Vec<usize> = q
                .relations
                .iter()
                .map(|r| order.iter().position(|o| o == r).unwrap())
                .collect();
            pos.sort_unstable();
            assert!(pos.windows(2).all(|w| w[1] == w[0] + 1), "{:?}", q.relations);
        }
        let full = gen_join(&cat, 3, 20, 8, &JoinGenOptions::default()).unwrap();
        assert!(full.iter().all(|q| q.relations.len() == 4));
    }

    #[test]
    fn finalize_dedups_and_drops_empty() {
        let mut c = SchemaCatalog::new();
        c.add_relation(
            Relation::from_columns(
                "R",
                vec![
                    ("a".into(), RawColumn::Numerical(vec![0.0, 1.0, 2.0, 10.0])),
                    ("b".into(), RawColumn::Numerical(vec![0.0, 1.0, 2.0, 10.0])),
                ],
            )
            .unwrap(),
        )
        .unwrap();
        let sel = |a: &str, lb: f64, ub: f64| Selection {
            attr: a.parse().unwrap(),
            filter: Filter::Range(lb, ub),
        };
        let q1 = Query::single("R", vec![sel("R.a", 0.0, 1.0), sel("R.b", 0.0, 2.0)]);
        let q1_perm = Query::single("R", vec![sel("R.b", 0.0, 2.0), sel("R.a", 0.0, 1.0)]);
        let empty = Query::single("R", vec![sel("R.a", 3.0, 4.0)]);
        let q2 = Query::single("R", vec![sel("R.a", 0.0, 10.0)]);
        let out = finalize(records(vec![q1, q1_perm, empty, q2], 0), &c, None).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].id, 0);
        assert_eq!(out[0].cardinality, Some(2));
        assert_eq!(out[1].id, 3);
        assert_eq!(out[1].cardinality, Some(4));

        let distinct = finalize(
            records(vec![Query::single("R", vec![sel("R.a", 0.0, 1.0)]), Query::single("R", vec![sel("R.a", 0.0, 2.0)])], 0),
            &c,
            None,
        )
        .unwrap();
        assert_eq!(distinct.len(), 2);
    }
}
