#![allow(dead_code)]

use nngp_card::oracle::{CmpOp, Filter, JoinCondition, Query, Selection};
use nngp_card::relstore::{AttrRef, ColumnType, RawColumn, Relation, SchemaCatalog, Value};
use rand::seq::IndexedRandom;
use rand::Rng;

const CATS: [&str; 3] = ["a", "b", "c"];

/// Up to three relations of one to eight rows with small integer and
/// categorical columns (lots of ties), every relation pair joinable on
/// both column kinds.
pub fn random_catalog(rng: &mut impl Rng) -> SchemaCatalog {
    let n_rel = rng.random_range(1..=3);
    let mut c = SchemaCatalog::new();
    for r in 0..n_rel {
        let rows = rng.random_range(1..=8);
        let num: Vec<f64> = (0..rows).map(|_| rng.random_range(0..4) as f64).collect();
        let frac: Vec<f64> = (0..rows).map(|_| rng.random_range(0..5) as f64 * 0.5).collect();
        let cat: Vec<String> = (0..rows).map(|_| CATS.choose(rng).unwrap().to_string()).collect();
        let rel = Relation::from_columns(
            format!("R{r}"),
            vec![
                ("n".into(), RawColumn::Numerical(num)),
                ("m".into(), RawColumn::Numerical(frac)),
                ("c".into(), RawColumn::Categorical(cat)),
            ],
        )
        .unwrap();
        c.add_relation(rel).unwrap();
    }
    for i in 0..n_rel {
        for j in i + 1..n_rel {
            for col in ["n", "c"] {
                c.register_join_pair(AttrRef::new(format!("R{i}"), col), AttrRef::new(format!("R{j}"), col))
                    .unwrap();
            }
        }
    }
    c
}

fn random_selection(rng: &mut impl Rng, attr: AttrRef, ctype: &ColumnType) -> Selection {
    let filter = match ctype {
        ColumnType::Numerical { min, max } => {
            let a = rng.random_range(*min..=*max);
            let b = rng.random_range(*min..=*max);
            let (lo, hi) = (a.min(b), a.max(b));
            // snap to the value grid half the time so bounds hit ties
            if rng.random_bool(0.5) {
                Filter::Range(lo.round().clamp(*min, *max), hi.round().clamp(*min, *max))
            } else {
                Filter::Range(lo, hi)
            }
        }
        ColumnType::Categorical { domain } => {
            let k = rng.random_range(1..=domain.len());
            Filter::In(domain.choose_multiple(rng, k).cloned().collect())
        }
    };
    Selection { attr, filter }
}

/// A valid random query over a random subset of the catalog's relations.
pub fn random_query(rng: &mut impl Rng, c: &SchemaCatalog) -> Query {
    loop {
        let names: Vec<String> = c.relations().iter().map(|r| r.name().to_string()).collect();
        let k = rng.random_range(1..=names.len());
        let mut rels: Vec<String> = names.choose_multiple(rng, k).cloned().collect();
        rels.sort();
        let mut joins = Vec::new();
        for (i, p) in c.join_pairs().iter().enumerate() {
            if rels.contains(&p.left.relation) && rels.contains(&p.right.relation) && rng.random_bool(0.6) {
                let ops: &[CmpOp] = if c.column(&p.left).unwrap().ctype.kind() == nngp_card::relstore::ColumnKind::Categorical {
                    &[CmpOp::Eq, CmpOp::Ne]
                } else {
                    &CmpOp::ALL
                };
                joins.push(JoinCondition {
                    pair: i,
                    op: *ops.choose(rng).unwrap(),
                });
            }
        }
        let mut selections = Vec::new();
        for (attr, col) in c.attributes() {
            if rels.contains(&attr.relation) && rng.random_bool(0.35) {
                selections.push(random_selection(rng, attr.clone(), &col.ctype));
            }
        }
        let q = Query {
            relations: rels,
            selections,
            joins,
        };
        if q.validate(c).is_ok() {
            return q;
        }
    }
}

fn cmp(a: Value<'_>, b: Value<'_>) -> std::cmp::Ordering {
    match (a, b) {
        (Value::Num(x), Value::Num(y)) => x.partial_cmp(&y).unwrap(),
        (Value::Cat(x), Value::Cat(y)) => x.cmp(y),
        _ => panic!("mixed kinds"),
    }
}

/// Count by walking the full cross product of the query's relations.
pub fn naive_count(q: &Query, c: &SchemaCatalog) -> u64 {
    let rels: Vec<&Relation> = q.relations.iter().map(|r| c.relation(r).unwrap()).collect();
    let pos = |name: &str| q.relations.iter().position(|r| r == name).unwrap();
    let mut idx = vec![0usize; rels.len()];
    let mut count = 0;
    'outer: loop {
        let cell = |a: &AttrRef| {
            let r = pos(&a.relation);
            rels[r].column(&a.attribute).unwrap().value(idx[r])
        };
        let sel_ok = q.selections.iter().all(|s| match (&s.filter, cell(&s.attr)) {
            (Filter::Range(lb, ub), Value::Num(v)) => *lb <= v && v <= *ub,
            (Filter::In(set), Value::Cat(v)) => set.iter().any(|x| x == v),
            _ => false,
        });
        let join_ok = q.joins.iter().all(|j| {
            let p = &c.join_pairs()[j.pair];
            let ord = cmp(cell(&p.left), cell(&p.right));
            match j.op {
                CmpOp::Lt => ord.is_lt(),
                CmpOp::Le => ord.is_le(),
                CmpOp::Eq => ord.is_eq(),
                CmpOp::Ge => ord.is_ge(),
                CmpOp::Gt => ord.is_gt(),
                CmpOp::Ne => ord.is_ne(),
            }
        });
        if sel_ok && join_ok {
            count += 1;
        }
        for k in (0..idx.len()).rev() {
            idx[k] += 1;
            if idx[k] < rels[k].n_rows() {
                continue 'outer;
            }
            idx[k] = 0;
        }
        break;
    }
    count
}
