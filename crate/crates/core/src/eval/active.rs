use serde::{Deserialize, Serialize};

use super::mse_log;
use crate::encoder::EncodedBatch;
use crate::error::{Error, Result};
use crate::gp::{coefficient_of_variation, CovMode, Prediction, TrainedEstimator, VarianceMode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ALIteration {
    /// 0 is the model trained on the initial set.
    pub iteration: usize,
    pub n_train: usize,
    pub test_mse: f64,
    /// Ids moved from the pool in this iteration, most uncertain first.
    pub selected: Vec<u64>,
}

/// Pools for uncertainty sampling. Queries leave `pool` for `train`
/// exactly once.
#[derive(Clone, Debug)]
pub struct ALState {
    pub train: EncodedBatch,
    pub pool: EncodedBatch,
    pub test: EncodedBatch,
    pub k: usize,
    pub history: Vec<ALIteration>,
}

impl ALState {
    pub fn new(train: EncodedBatch, pool: EncodedBatch, test: EncodedBatch, k: usize) -> Result<Self> {
        for b in [&pool, &test] {
            if b.layout_hash != train.layout_hash {
                return Err(Error::LayoutMismatch {
                    expected: train.layout_hash.clone(),
                    got: b.layout_hash.clone(),
                });
            }
        }
        Ok(ALState {
            train,
            pool,
            test,
            k,
            history: Vec::new(),
        })
    }

    pub fn iteration(&self) -> usize {
        self.history.len().saturating_sub(1)
    }
}

/// Pool indices by CoV, largest first; equal CoV keeps index order.
pub fn rank_by_cov(preds: &[Prediction], mode: CovMode) -> Vec<usize> {
    let cov: Vec<f64> = preds.iter().map(|p| coefficient_of_variation(p, mode)).collect();
    let mut idx: Vec<usize> = (0..preds.len()).collect();
    idx.sort_by(|&a, &b| cov[b].total_cmp(&cov[a]));
    idx
}

fn test_mse(est: &TrainedEstimator, test: &EncodedBatch) -> Result<f64> {
    let preds = est.predict(test, VarianceMode::Latent)?;
    let truth: Vec<f64> = test.y_log()?.iter().map(|y| y.exp()).collect();
    let est_cards: Vec<f64> = preds.iter().map(Prediction::card_estimate).collect();
    // exp(ln c) can land a hair off an integer; the ratio is what matters
    let truth: Vec<f64> = truth.iter().map(|c| c.max(1.0)).collect();
    mse_log(&truth, &est_cards)
}

/// Runs `iterations` rounds of uncertainty sampling. Each round predicts
/// over the pool, moves the `k` queries with the largest CoV to the
/// training set, labels them with `label` (ids to cardinalities), refits
/// from scratch with `fit` and records the test MSE. A fresh state first
/// records the MSE of the model on the initial training set.
pub fn active_learn<F, L>(state: &mut ALState, fit: F, mut label: L, iterations: usize, cov_mode: CovMode) -> Result<TrainedEstimator>
where
    F: Fn(&EncodedBatch) -> Result<TrainedEstimator>,
    L: FnMut(&[u64]) -> Result<Vec<u64>>,
{
    let needed = iterations * state.k;
    if state.pool.len() < needed {
        return Err(Error::PoolExhausted {
            needed,
            available: state.pool.len(),
        });
    }
    let mut est = fit(&state.train)?;
    if state.history.is_empty() {
        state.history.push(ALIteration {
            iteration: 0,
            n_train: state.train.len(),
            test_mse: test_mse(&est, &state.test)?,
            selected: Vec::new(),
        });
    }
    for _ in 0..iterations {
        let preds = est.predict(&state.pool, VarianceMode::Latent)?;
        let order = rank_by_cov(&preds, cov_mode);
        let chosen: Vec<usize> = order[..state.k].to_vec();
        let mut moved = state.pool.select(&chosen);
        let labels = label(&moved.ids)?;
        if labels.len() != moved.len() {
            return Err(Error::DimensionMismatch {
                expected: moved.len(),
                got: labels.len(),
            });
        }
        moved.cardinality = labels.into_iter().map(Some).collect();
        let mut keep = vec![true; state.pool.len()];
        for &i in &chosen {
            keep[i] = false;
        }
        let rest: Vec<usize> = (0..state.pool.len()).filter(|&i| keep[i]).collect();
        state.pool = state.pool.select(&rest);
        state.train.append(&moved)?;
        est = fit(&state.train)?;
        state.history.push(ALIteration {
            iteration: state.history.len(),
            n_train: state.train.len(),
            test_mse: test_mse(&est, &state.test)?,
            selected: moved.ids.clone(),
        });
    }
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::FeatureMatrix;
    use crate::gp::fit_batch;
    use crate::kernel::KernelConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::{BTreeMap, BTreeSet};

    fn batch(n: usize, seed: u64, first_id: u64) -> EncodedBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut cards = Vec::new();
        for _ in 0..n {
            let r: Vec<f64> = (0..3).map(|_| rng.random::<f64>()).collect();
            // smooth target so the model has something to learn
            let y = 1.0 + 4.0 * r[0] + 2.0 * r[1] * r[2];
            cards.push(Some(y.exp().round().max(1.0) as u64));
            rows.push(r);
        }
        EncodedBatch {
            layout_hash: "h".into(),
            ids: (first_id..first_id + n as u64).collect(),
            x: FeatureMatrix::from_rows(3, &rows).unwrap(),
            cardinality: cards,
            n_conditions: vec![2; n],
        }
    }

    fn labeller(pool: &EncodedBatch) -> impl FnMut(&[u64]) -> Result<Vec<u64>> {
        let truth: BTreeMap<u64, u64> = pool.ids.iter().zip(&pool.cardinality).map(|(i, c)| (*i, c.unwrap())).collect();
        move |ids: &[u64]| Ok(ids.iter().map(|i| truth[i]).collect())
    }

    fn unlabeled(b: &EncodedBatch) -> EncodedBatch {
        let mut u = b.clone();
        u.cardinality = vec![None; u.len()];
        u
    }

    #[test]
    fn zero_k_keeps_mse_constant() {
        let pool = batch(20, 2, 1000);
        let mut st = ALState::new(batch(30, 1, 0), unlabeled(&pool), batch(15, 3, 5000), 0).unwrap();
        let fit = |b: &EncodedBatch| fit_batch(b, &KernelConfig::default());
        active_learn(&mut st, fit, labeller(&pool), 3, CovMode::Log).unwrap();
        assert_eq!(st.history.len(), 4);
        assert!(st.history.iter().all(|h| h.test_mse == st.history[0].test_mse));
    }

    #[test]
    fn selects_each_query_once_and_deterministically() {
        let pool = batch(40, 2, 1000);
        let run = || {
            let mut st = ALState::new(batch(30, 1, 0), unlabeled(&pool), batch(15, 3, 5000), 5).unwrap();
            let fit = |b: &EncodedBatch| fit_batch(b, &KernelConfig::default());
            active_learn(&mut st, fit, labeller(&pool), 3, CovMode::Log).unwrap();
            st
        };
        let st = run();
        let all: Vec<u64> = st.history.iter().flat_map(|h| h.selected.clone()).collect();
        let set: BTreeSet<u64> = all.iter().copied().collect();
        assert_eq!(all.len(), 15);
        assert_eq!(set.len(), 15);
        assert_eq!(st.pool.len(), 25);
        assert_eq!(st.train.len(), 45);
        assert!(st.pool.ids.iter().all(|i| !set.contains(i)));
        assert_eq!(run().history, st.history);
    }

    #[test]
    fn whole_pool_in_one_round_equals_union() {
        let train = batch(25, 1, 0);
        let pool = batch(10, 2, 1000);
        let test = batch(12, 3, 5000);
        let cfg = KernelConfig::default();
        let mut st = ALState::new(train.clone(), unlabeled(&pool), test.clone(), 10).unwrap();
        let est = active_learn(&mut st, |b| fit_batch(b, &cfg), labeller(&pool), 1, CovMode::Log).unwrap();
        let mut union = train.clone();
        union.append(&pool).unwrap();
        let direct = fit_batch(&union, &cfg).unwrap();
        let a = est.predict(&test, VarianceMode::Latent).unwrap();
        let b = direct.predict(&test, VarianceMode::Latent).unwrap();
        for (p, q) in a.iter().zip(&b) {
            assert!((p.mean_log - q.mean_log).abs() < 1e-6 * q.mean_log.abs().max(1.0));
            assert!((p.var_log - q.var_log).abs() < 1e-8);
        }
    }

    #[test]
    fn pool_exhaustion() {
        let pool = batch(5, 2, 1000);
        let mut st = ALState::new(batch(10, 1, 0), unlabeled(&pool), batch(5, 3, 5000), 3).unwrap();
        let r = active_learn(&mut st, |b| fit_batch(b, &KernelConfig::default()), labeller(&pool), 2, CovMode::Log);
        assert!(matches!(r, Err(Error::PoolExhausted { needed: 6, available: 5 })));
    }

    #[test]
    fn ties_keep_index_order() {
        let p = |m: f64, v: f64| Prediction { mean_log: m, var_log: v };
        let preds = [p(1.0, 1.0), p(2.0, 4.0), p(1.0, 0.25), p(0.0, 1.0), p(3.0, 9.0)];
        assert_eq!(rank_by_cov(&preds, CovMode::Log), vec![3, 0, 1, 4, 2]);
    }
}
