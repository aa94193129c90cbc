//! Exact Gaussian-process regression on log-cardinalities.
//!
//! `fit` factorizes `K + noise * I` once (Cholesky, with a jitter ladder
//! when the factorization fails) and solves for the weights `alpha`.
//! `predict` returns the latent posterior mean and variance per query.

mod model_file;

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::cholesky::llt::factor::{cholesky_in_place, cholesky_in_place_scratch};
use faer::linalg::triangular_solve::{solve_lower_triangular_in_place, solve_upper_triangular_in_place};
use faer::{MatMut, MatRef, Par};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::encoder::{EncodedBatch, FeatureMatrix};
use crate::error::{Error, Result};
use crate::kernel::{kernel_diag, kernel_matrix, train_kernel, KernelConfig};

pub use model_file::{load, read_model, save, write_model, ModelHeader, MODEL_KIND};

/// Jitter tried on factorization failure, as multiples of the mean
/// diagonal.
pub const JITTER_LADDER: [f64; 3] = [1e-8, 1e-6, 1e-4];
/// Test points per triangular-solve block. Fixed so results do not depend
/// on the thread count.
const PREDICT_BLOCK: usize = 256;
const MAX_REFINE: usize = 30;

/// Interval half-width rule.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalMode {
    /// `mu +- q * sqrt(var)`.
    #[default]
    StdDev,
    /// `mu +- q * var`, the variance used as if it were a deviation.
    Variance,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMode {
    /// Posterior variance of the latent function.
    #[default]
    Latent,
    /// Latent variance plus the observation noise.
    Predictive,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovMode {
    /// `sqrt(var) / |mu|` on log-cardinalities.
    #[default]
    Log,
    /// Coefficient of variation of the lognormal count,
    /// `sqrt(exp(var) - 1)`.
    LognormalCount,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictOptions {
    pub delta: f64,
    pub interval: IntervalMode,
    pub variance: VarianceMode,
    pub cov: CovMode,
}

impl Default for PredictOptions {
    fn default() -> Self {
        PredictOptions {
            delta: 0.95,
            interval: IntervalMode::StdDev,
            variance: VarianceMode::Latent,
            cov: CovMode::Log,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub mean_log: f64,
    pub var_log: f64,
}

impl Prediction {
    /// `max(1, exp(mean_log))`.
    pub fn card_estimate(&self) -> f64 {
        self.mean_log.exp().max(1.0)
    }
}

/// Two-sided standard-normal quantile `q` with `P(|Z| <= q) = delta`.
pub fn normal_quantile(delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!("delta {delta} outside (0, 1)")));
    }
    Ok(Normal::standard().inverse_cdf((1.0 + delta) / 2.0))
}

pub fn confidence_interval(p: &Prediction, delta: f64, mode: IntervalMode) -> Result<(f64, f64)> {
    let q = normal_quantile(delta)?;
    let half = match mode {
        IntervalMode::StdDev => q * p.var_log.sqrt(),
        IntervalMode::Variance => q * p.var_log,
    };
    Ok((p.mean_log - half, p.mean_log + half))
}

/// `+inf` when the log-space mean is zero.
pub fn coefficient_of_variation(p: &Prediction, mode: CovMode) -> f64 {
    match mode {
        CovMode::Log if p.mean_log == 0.0 => f64::INFINITY,
        CovMode::Log => p.var_log.sqrt() / p.mean_log.abs(),
        CovMode::LognormalCount => p.var_log.exp_m1().sqrt(),
    }
}

/// How the factorization went.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub n: usize,
    pub mean_diag: f64,
    /// Absolute jitter added to the diagonal for the factorization.
    pub jitter: f64,
    pub refine_steps: usize,
    /// `|(K + noise I) alpha - y| / |y|` (0 when `y` is zero).
    pub relative_residual: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedEstimator {
    pub config: KernelConfig,
    pub layout_hash: String,
    pub x: FeatureMatrix,
    pub y_log: Vec<f64>,
    /// Lower Cholesky factor of `K + (noise + jitter) I`, column-major
    /// `n x n` with zeros above the diagonal.
    pub chol: Vec<f64>,
    pub alpha: Vec<f64>,
    pub report: FitReport,
}

fn try_cholesky(k: &[f64], n: usize, jitter: f64) -> std::result::Result<Vec<f64>, usize> {
    let mut a = k.to_vec();
    for i in 0..n {
        a[i * n + i] += jitter;
    }
    let par = Par::Seq;
    let mut mem = MemBuffer::new(cholesky_in_place_scratch::<f64>(n, par, Default::default()));
    let stack = MemStack::new(&mut mem);
    let m = MatMut::from_column_major_slice_mut(&mut a, n, n);
    match cholesky_in_place(m, Default::default(), par, stack, Default::default()) {
        Ok(_) => {
            for j in 0..n {
                for i in 0..j {
                    a[j * n + i] = 0.0;
                }
            }
            Ok(a)
        }
        Err(faer::linalg::cholesky::llt::factor::LltError::NonPositivePivot { index }) => Err(index),
    }
}

/// Solves `L L^T z = b` in place for every column of `b` (column-major,
/// `n` rows).
fn chol_solve(l: &[f64], n: usize, b: &mut [f64]) {
    let cols = b.len() / n;
    let lm = MatRef::from_column_major_slice(l, n, n);
    let mut bm = MatMut::from_column_major_slice_mut(b, n, cols);
    solve_lower_triangular_in_place(lm, bm.as_mut(), Par::Seq);
    solve_upper_triangular_in_place(lm.transpose(), bm, Par::Seq);
}

fn matvec(k: &[f64], n: usize, v: &[f64]) -> Vec<f64> {
    // symmetric: row i equals column i
    (0..n)
        .into_par_iter()
        .map(|i| k[i * n..(i + 1) * n].iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Factorizes the training kernel and solves for `alpha`. Without noise a
/// jitter of `1e-8` times the mean diagonal is added; if the factorization
/// fails the jitter climbs [`JITTER_LADDER`]. Iterative refinement against
/// the un-jittered system then removes most of the jitter's bias from
/// `alpha`.
pub fn fit(x: &FeatureMatrix, y_log: &[f64], config: &KernelConfig, layout_hash: &str) -> Result<TrainedEstimator> {
    config.validate()?;
    let n = x.n();
    if n == 0 {
        return Err(Error::Empty("training set".into()));
    }
    if y_log.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: y_log.len(),
        });
    }
    if y_log.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite training target".into()));
    }
    let k = train_kernel(x, config)?.into_vec();
    let mean_diag = (0..n).map(|i| k[i * n + i]).sum::<f64>() / n as f64;

    let mut ladder: Vec<f64> = Vec::new();
    if config.noise_sq > 0.0 {
        ladder.push(0.0);
    }
    ladder.extend(JITTER_LADDER.iter().map(|f| f * mean_diag));
    let mut chol = None;
    let mut last = (0.0, 0);
    for &j in &ladder {
        match try_cholesky(&k, n, j) {
            Ok(l) => {
                chol = Some((l, j));
                break;
            }
            Err(pivot) => last = (j, pivot),
        }
    }
    let (chol, jitter) = chol.ok_or(Error::Factorization {
        n,
        mean_diag,
        jitter: last.0,
        pivot: last.1,
    })?;

    let mut alpha = y_log.to_vec();
    chol_solve(&chol, n, &mut alpha);
    let y_norm = norm(y_log);
    let residual = |a: &[f64]| -> Vec<f64> { matvec(&k, n, a).iter().zip(y_log).map(|(ka, y)| y - ka).collect() };
    let mut r = residual(&alpha);
    let mut r_norm = norm(&r);
    let mut steps = 0;
    while steps < MAX_REFINE && r_norm > 1e-15 * y_norm {
        let mut dz = r.clone();
        chol_solve(&chol, n, &mut dz);
        let cand: Vec<f64> = alpha.iter().zip(&dz).map(|(a, d)| a + d).collect();
        let r2 = residual(&cand);
        let n2 = norm(&r2);
        // stop once a step no longer shrinks the residual markedly
        if n2 >= 0.9 * r_norm {
            if n2 < r_norm {
                alpha = cand;
                r_norm = n2;
                steps += 1;
            }
            break;
        }
        alpha = cand;
        r = r2;
        r_norm = n2;
        steps += 1;
    }

    Ok(TrainedEstimator {
        config: config.clone(),
        layout_hash: layout_hash.to_string(),
        x: x.clone(),
        y_log: y_log.to_vec(),
        chol,
        alpha,
        report: FitReport {
            n,
            mean_diag,
            jitter,
            refine_steps: steps,
            relative_residual: if y_norm > 0.0 { r_norm / y_norm } else { r_norm },
        },
    })
}

/// [`fit`] on a labeled batch.
pub fn fit_batch(batch: &EncodedBatch, config: &KernelConfig) -> Result<TrainedEstimator> {
    fit(&batch.x, &batch.y_log()?, config, &batch.layout_hash)
}

impl TrainedEstimator {
    pub fn n(&self) -> usize {
        self.x.n()
    }

    /// Posterior mean and variance at each row of `x`.
    pub fn predict_features(&self, x: &FeatureMatrix, mode: VarianceMode) -> Result<Vec<Prediction>> {
        if x.d() != self.x.d() {
            return Err(Error::DimensionMismatch {
                expected: self.x.d(),
                got: x.d(),
            });
        }
        let n = self.n();
        let m = x.n();
        let kss = kernel_diag(x, &self.config)?;
        let idx: Vec<usize> = (0..m).collect();
        let blocks: Vec<Result<Vec<Prediction>>> = idx
            .par_chunks(PREDICT_BLOCK)
            .map(|block| {
                let xb = x.select(block);
                let mut ks = kernel_matrix(&self.x, &xb, &self.config)?.into_vec();
                let means: Vec<f64> = ks
                    .chunks(n)
                    .map(|c| c.iter().zip(&self.alpha).map(|(a, b)| a * b).sum())
                    .collect();
                let lm = MatRef::from_column_major_slice(&self.chol, n, n);
                solve_lower_triangular_in_place(
                    lm,
                    MatMut::from_column_major_slice_mut(&mut ks, n, block.len()),
                    Par::Seq,
                );
                Ok(ks
                    .chunks(n)
                    .zip(block)
                    .zip(means)
                    .map(|((v, &t), mean_log)| {
                        let mut var = (kss[t] - v.iter().map(|a| a * a).sum::<f64>()).max(0.0);
                        if mode == VarianceMode::Predictive {
                            var += self.config.noise_sq;
                        }
                        Prediction { mean_log, var_log: var }
                    })
                    .collect())
            })
            .collect();
        let mut out = Vec::with_capacity(m);
        for b in blocks {
            out.extend(b?);
        }
        Ok(out)
    }

    /// Predictions for an encoded batch; the batch must come from the
    /// training layout.
    pub fn predict(&self, batch: &EncodedBatch, mode: VarianceMode) -> Result<Vec<Prediction>> {
        if batch.layout_hash != self.layout_hash {
            return Err(Error::LayoutMismatch {
                expected: self.layout_hash.clone(),
                got: batch.layout_hash.clone(),
            });
        }
        self.predict_features(&batch.x, mode)
    }
}
