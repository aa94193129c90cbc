use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::QueryRecord;

/// Strata with fewer queries than this go wholly to train.
pub const MIN_STRATUM: usize = 3;

pub const DEFAULT_FRACTIONS: [f64; 3] = [0.6, 0.2, 0.2];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StratumCounts {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Split {
    pub train: Vec<QueryRecord>,
    pub valid: Vec<QueryRecord>,
    pub test: Vec<QueryRecord>,
    /// Per-stratum sizes keyed by the strata key.
    pub strata: BTreeMap<usize, StratumCounts>,
    /// Strata that were too small to split.
    pub undersized: Vec<usize>,
}

/// Stratified three-way split. Each stratum is shuffled with its own
/// seeded stream; train and valid take `round(n * f)` queries and test the
/// remainder. Within each output the input order is kept.
pub fn split<F>(workload: &[QueryRecord], fractions: [f64; 3], key: F, seed: u64) -> Result<Split>
where
    F: Fn(&QueryRecord) -> usize,
{
    if fractions.iter().any(|f| !f.is_finite() || *f < 0.0) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split fractions {fractions:?} must be non-negative and sum to 1"
        )));
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, rec) in workload.iter().enumerate() {
        groups.entry(key(rec)).or_default().push(i);
    }

    // 0 train, 1 valid, 2 test
    let mut dest = vec![0u8; workload.len()];
    let mut out = Split::default();
    for (&stratum, idx) in &groups {
        let n = idx.len();
        if n < MIN_STRATUM {
            out.undersized.push(stratum);
            out.strata.insert(stratum, StratumCounts { train: n, valid: 0, test: 0 });
            continue;
        }
        let n_train = ((n as f64) * fractions[0]).round() as usize;
        let n_train = n_train.min(n);
        let n_valid = (((n as f64) * fractions[1]).round() as usize).min(n - n_train);
        let mut shuffled = idx.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (stratum as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        shuffled.shuffle(&mut rng);
        for &i in &shuffled[n_train..n_train + n_valid] {
            dest[i] = 1;
        }
        for &i in &shuffled[n_train + n_valid..] {
            dest[i] = 2;
        }
        out.strata.insert(
            stratum,
            StratumCounts {
                train: n_train,
                valid: n_valid,
                test: n - n_train - n_valid,
            },
        );
    }
    for (rec, d) in workload.iter().zip(dest) {
        match d {
            0 => out.train.push(rec.clone()),
            1 => out.valid.push(rec.clone()),
            _ => out.test.push(rec.clone()),
        }
    }
    Ok(out)
}

/// Shape of a labeled workload: query count, condition-count range,
/// cardinality range and the per-condition-count histogram.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSummary {
    pub n_queries: usize,
    pub conditions: Option<(usize, usize)>,
    pub cardinality: Option<(u64, u64)>,
    pub strata: BTreeMap<usize, usize>,
}

impl WorkloadSummary {
    pub fn of(workload: &[QueryRecord]) -> Self {
        let mut strata = BTreeMap::new();
        for r in workload {
            *strata.entry(r.query.n_conditions()).or_insert(0) += 1;
        }
        let cards: Vec<u64> = workload.iter().filter_map(|r| r.cardinality).collect();
        WorkloadSummary {
            n_queries: workload.len(),
            conditions: match (strata.keys().next(), strata.keys().next_back()) {
                (Some(&a), Some(&b)) => Some((a, b)),
                _ => None,
            },
            cardinality: cards.iter().min().zip(cards.iter().max()).map(|(a, b)| (*a, *b)),
            strata,
        }
    }
}

/// Metadata record written next to the three split files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitMetadata {
    pub seed: u64,
    pub fractions: [f64; 3],
    pub strata: BTreeMap<usize, StratumCounts>,
    pub undersized: Vec<usize>,
    pub workload: WorkloadSummary,
    pub train: WorkloadSummary,
    pub valid: WorkloadSummary,
    pub test: WorkloadSummary,
}

impl SplitMetadata {
    pub fn new(workload: &[QueryRecord], split: &Split, seed: u64, fractions: [f64; 3]) -> Self {
        SplitMetadata {
            seed,
            fractions,
            strata: split.strata.clone(),
            undersized: split.undersized.clone(),
            workload: WorkloadSummary::of(workload),
            train: WorkloadSummary::of(&split.train),
            valid: WorkloadSummary::of(&split.valid),
            test: WorkloadSummary::of(&split.test),
        }
    }
}
