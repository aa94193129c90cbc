//! Seeded synthetic relations.
//!
//! Columns can be independent (uniform, integer, Gaussian mixture, Zipf
//! categorical) or linear combinations of earlier columns plus noise, so
//! range predicates over several attributes have non-trivial joint
//! selectivities.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, Zipf};
use serde::{Deserialize, Serialize};

use super::{AttrRef, RawColumn, Relation, SchemaCatalog};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: f64,
    pub std_dev: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrelationTerm {
    pub source: String,
    pub coef: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ColumnGen {
    Uniform {
        low: f64,
        high: f64,
    },
    /// Inclusive integer range.
    UniformInt {
        low: i64,
        high: i64,
    },
    /// `start, start + 1, ...`; a key column.
    Sequence {
        #[serde(default)]
        start: i64,
    },
    GaussianMixture {
        components: Vec<MixtureComponent>,
    },
    /// `offset + sum(coef * source) + N(0, noise_std^2)` over earlier
    /// numerical columns.
    Correlated {
        terms: Vec<CorrelationTerm>,
        #[serde(default)]
        offset: f64,
        noise_std: f64,
    },
    /// Values `v000, v001, ...` drawn from a Zipf law with exponent `skew`
    /// (0 is uniform).
    Categorical {
        cardinality: usize,
        #[serde(default)]
        skew: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnSpec {
    pub name: String,
    pub gen: ColumnGen,
}

impl ColumnSpec {
    pub fn new(name: impl Into<String>, gen: ColumnGen) -> Self {
        ColumnSpec {
            name: name.into(),
            gen,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelationSpec {
    pub name: String,
    pub rows: usize,
    pub columns: Vec<ColumnSpec>,
}

/// A whole synthetic database.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub relations: Vec<RelationSpec>,
    #[serde(default)]
    pub aliases: BTreeMap<String, String>,
    #[serde(default)]
    pub join_pairs: Vec<(AttrRef, AttrRef)>,
}

/// Generates one relation. Identical `(seed, n_rows, columns)` always yield
/// identical data.
pub fn synth_relation(
    name: &str,
    seed: u64,
    n_rows: usize,
    columns: &[ColumnSpec],
) -> Result<Relation> {
    if n_rows == 0 {
        return Err(Error::InvalidSpec("n_rows must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut numeric: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut out = Vec::with_capacity(columns.len());

    for spec in columns {
        let invalid = |msg: String| Error::InvalidSpec(format!("column '{}': {msg}", spec.name));
        let raw = match &spec.gen {
            ColumnGen::Uniform { low, high } => {
                if !(low.is_finite() && high.is_finite() && low < high) {
                    return Err(invalid(format!("bad uniform range [{low}, {high})")));
                }
                RawColumn::Numerical(
                    (0..n_rows)
                        .map(|_| rng.random_range(*low..*high))
                        .collect(),
                )
            }
            ColumnGen::UniformInt { low, high } => {
                if low > high {
                    return Err(invalid(format!("bad integer range [{low}, {high}]")));
                }
                RawColumn::Numerical(
                    (0..n_rows)
                        .map(|_| rng.random_range(*low..=*high) as f64)
                        .collect(),
                )
            }
            ColumnGen::Sequence { start } => {
                RawColumn::Numerical((0..n_rows).map(|i| (*start + i as i64) as f64).collect())
            }
            ColumnGen::GaussianMixture { components } => {
                if components.is_empty() {
                    return Err(invalid("mixture needs at least one component".into()));
                }
                let weights = WeightedIndex::new(components.iter().map(|c| c.weight))
                    .map_err(|e| invalid(format!("mixture weights: {e}")))?;
                let normals = components
                    .iter()
                    .map(|c| Normal::new(c.mean, c.std_dev))
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| invalid(format!("mixture component: {e}")))?;
                RawColumn::Numerical(
                    (0..n_rows)
                        .map(|_| normals[weights.sample(&mut rng)].sample(&mut rng))
                        .collect(),
                )
            }
            ColumnGen::Correlated {
                terms,
                offset,
                noise_std,
            } => {
                let noise = Normal::new(0.0, *noise_std)
                    .map_err(|e| invalid(format!("noise: {e}")))?;
                let mut values = vec![*offset; n_rows];
                for t in terms {
                    let src = numeric.get(t.source.as_str()).ok_or_else(|| {
                        invalid(format!(
                            "source '{}' is not an earlier numerical column",
                            t.source
                        ))
                    })?;
                    values.iter_mut().zip(src).for_each(|(v, s)| *v += t.coef * s);
                }
                values.iter_mut().for_each(|v| *v += noise.sample(&mut rng));
                RawColumn::Numerical(values)
            }
            ColumnGen::Categorical { cardinality, skew } => {
                if *cardinality == 0 {
                    return Err(invalid("cardinality must be at least 1".into()));
                }
                let width = (cardinality - 1).to_string().len().max(3);
                let labels: Vec<String> = (0..*cardinality)
                    .map(|i| format!("v{i:0width$}"))
                    .collect();
                let values = if *skew > 0.0 {
                    let zipf = Zipf::new(*cardinality as f64, *skew)
                        .map_err(|e| invalid(format!("zipf: {e}")))?;
                    (0..n_rows)
                        .map(|_| labels[zipf.sample(&mut rng) as usize - 1].clone())
                        .collect()
                } else {
                    (0..n_rows)
                        .map(|_| labels[rng.random_range(0..*cardinality)].clone())
                        .collect()
                };
                RawColumn::Categorical(values)
            }
        };
        if let RawColumn::Numerical(v) = &raw {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(invalid("generated non-finite values".into()));
            }
            numeric.insert(spec.name.as_str(), v.clone());
        }
        out.push((spec.name.clone(), raw));
    }
    Relation::from_columns(name, out)
}

/// Builds every relation of `spec` (relation `i` uses a seed derived from
/// `seed` and `i`), then registers aliases and join pairs.
pub fn synthesize(spec: &SynthSpec, seed: u64) -> Result<SchemaCatalog> {
    let mut catalog = SchemaCatalog::new();
    for (i, rel) in spec.relations.iter().enumerate() {
        let rel_seed = seed ^ (i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        catalog.add_relation(synth_relation(&rel.name, rel_seed, rel.rows, &rel.columns)?)?;
    }
    for (alias, of) in &spec.aliases {
        catalog.add_alias(alias, of)?;
    }
    for (l, r) in &spec.join_pairs {
        catalog.register_join_pair(l.clone(), r.clone())?;
    }
    Ok(catalog)
}

/// Ready-made databases.
pub mod presets {
    use super::*;

    fn mix(parts: &[(f64, f64, f64)]) -> ColumnGen {
        ColumnGen::GaussianMixture {
            components: parts
                .iter()
                .map(|&(weight, mean, std_dev)| MixtureComponent {
                    weight,
                    mean,
                    std_dev,
                })
                .collect(),
        }
    }

    fn corr(terms: &[(&str, f64)], offset: f64, noise_std: f64) -> ColumnGen {
        ColumnGen::Correlated {
            terms: terms
                .iter()
                .map(|(s, c)| CorrelationTerm {
                    source: s.to_string(),
                    coef: *c,
                })
                .collect(),
            offset,
            noise_std,
        }
    }

    /// One relation `T` with six numerical attributes: independent,
    /// multi-modal and correlated columns.
    pub fn single_relation(rows: usize) -> SynthSpec {
        SynthSpec {
            relations: vec![RelationSpec {
                name: "T".into(),
                rows,
                columns: vec![
                    ColumnSpec::new("a0", ColumnGen::Uniform { low: 0.0, high: 100.0 }),
                    ColumnSpec::new("a1", mix(&[(0.3, 20.0, 5.0), (0.7, 70.0, 10.0)])),
                    ColumnSpec::new("a2", corr(&[("a0", 0.8)], 0.0, 10.0)),
                    ColumnSpec::new("a3", ColumnGen::UniformInt { low: 0, high: 49 }),
                    ColumnSpec::new("a4", corr(&[("a1", 0.5), ("a3", 0.5)], 0.0, 5.0)),
                    ColumnSpec::new("a5", mix(&[(0.5, 0.0, 1.0), (0.5, 5.0, 2.0)])),
                ],
            }],
            aliases: BTreeMap::new(),
            join_pairs: Vec::new(),
        }
    }

    /// Four relations joined key-to-foreign-key in a chain
    /// `A.id = B.a_id`, `B.id = C.b_id`, `C.id = D.c_id`, each with two
    /// non-key attributes (one categorical).
    pub fn join_chain(scale: usize) -> SynthSpec {
        let scale = scale.max(1);
        let sizes = [scale, 2 * scale, 4 * scale, 8 * scale];
        let names = ["A", "B", "C", "D"];
        let mut relations = Vec::new();
        let mut join_pairs = Vec::new();
        for (i, name) in names.iter().enumerate() {
            let mut columns = vec![ColumnSpec::new("id", ColumnGen::Sequence { start: 0 })];
            if i > 0 {
                let parent = names[i - 1].to_lowercase();
                let fk = format!("{parent}_id");
                columns.push(ColumnSpec::new(
                    fk.clone(),
                    ColumnGen::UniformInt {
                        low: 0,
                        high: sizes[i - 1] as i64 - 1,
                    },
                ));
                join_pairs.push((AttrRef::new(names[i - 1], "id"), AttrRef::new(*name, fk)));
            }
            columns.push(ColumnSpec::new("x", mix(&[(0.5, 10.0, 3.0), (0.5, 30.0, 6.0)])));
            columns.push(ColumnSpec::new(
                "k",
                ColumnGen::Categorical {
                    cardinality: 6 + 6 * i,
                    skew: 1.1,
                },
            ));
            relations.push(RelationSpec {
                name: name.to_string(),
                rows: sizes[i],
                columns,
            });
        }
        SynthSpec {
            relations,
            aliases: BTreeMap::new(),
            join_pairs,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relstore::{write_csv, ColumnData};

    fn uniform2() -> Vec<ColumnSpec> {
        vec![
            ColumnSpec::new("x", ColumnGen::Uniform { low: 0.0, high: 1.0 }),
            ColumnSpec::new("y", ColumnGen::Uniform { low: -5.0, high: 5.0 }),
        ]
    }

    #[test]
    fn deterministic_under_seed() {
        let a = synth_relation("R", 7, 100, &uniform2()).unwrap();
        let b = synth_relation("R", 7, 100, &uniform2()).unwrap();
        let (mut ba, mut bb) = (Vec::new(), Vec::new());
        write_csv(&a, &mut ba).unwrap();
        write_csv(&b, &mut bb).unwrap();
        assert_eq!(ba, bb);
        let c = synth_relation("R", 8, 100, &uniform2()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_rows_rejected() {
        assert!(synth_relation("R", 7, 0, &uniform2()).is_err());
    }

    #[test]
    fn mixture_sample_mean_within_three_standard_errors() {
        let comps = [(0.3, 20.0, 5.0), (0.7, 70.0, 10.0)];
        let spec = vec![ColumnSpec::new(
            "m",
            ColumnGen::GaussianMixture {
                components: comps
                    .iter()
                    .map(|&(weight, mean, std_dev)| MixtureComponent {
                        weight,
                        mean,
                        std_dev,
                    })
                    .collect(),
            },
        )];
        let n = 20_000;
        let r = synth_relation("R", 11, n, &spec).unwrap();
        let ColumnData::Numerical(v) = &r.columns()[0].data else {
            unreachable!()
        };
        // analytic mixture moments
        let mean: f64 = comps.iter().map(|(w, m, _)| w * m).sum();
        let second: f64 = comps.iter().map(|(w, m, s)| w * (s * s + m * m)).sum();
        let var = second - mean * mean;
        let se = (var / n as f64).sqrt();
        let sample_mean = v.iter().sum::<f64>() / n as f64;
        assert!(
            (sample_mean - mean).abs() < 3.0 * se,
            "sample mean {sample_mean} vs {mean} (se {se})"
        );
    }

    #[test]
    fn correlated_requires_earlier_numerical_source() {
        let spec = vec![ColumnSpec::new(
            "c",
            ColumnGen::Correlated {
                terms: vec![CorrelationTerm {
                    source: "missing".into(),
                    coef: 1.0,
                }],
                offset: 0.0,
                noise_std: 1.0,
            },
        )];
        assert!(synth_relation("R", 1, 10, &spec).is_err());
    }

    #[test]
    fn presets_build() {
        let single = synthesize(&presets::single_relation(500), 3).unwrap();
        assert_eq!(single.relations()[0].columns().len(), 6);
        let chain = synthesize(&presets::join_chain(20), 3).unwrap();
        assert_eq!(chain.relations().len(), 4);
        assert_eq!(chain.join_pairs().len(), 3);
    }

    #[test]
    fn spec_json_rejects_unknown_keys() {
        let bad = r#"{"name":"x","gen":{"kind":"uniform","low":0,"high":1,"oops":2}}"#;
        assert!(serde_json::from_str::<ColumnSpec>(bad).is_err());
        let good = r#"{"name":"x","gen":{"kind":"uniform","low":0,"high":1}}"#;
        assert!(serde_json::from_str::<ColumnSpec>(good).is_ok());
    }
}
