//! NNGP kernels for ReLU and erf networks, plus the RBF baseline.
//!
//! The NNGP kernel starts from the input covariance
//! `K0(x, x') = sb2 + sw2 * <x, x'> / d` and applies one closed-form
//! activation step per hidden layer. Entries are computed independently
//! from per-point diagonal sequences, so results do not depend on how the
//! work is split across threads.

pub mod montecarlo;

use std::f64::consts::PI;

use faer::MatRef;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifact::{json_hash, sha256_hex};
use crate::encoder::FeatureMatrix;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Erf,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum KernelFamily {
    Nngp,
    Rbf { length_scale: f64 },
}

/// Where the bias variance enters each layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasPlacement {
    /// Shared bias: every entry gets `sigma_b_sq`.
    AllEntries,
    /// Only entries pairing a point with itself.
    Diagonal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelConfig {
    pub sigma_w_sq: f64,
    pub sigma_b_sq: f64,
    pub depth: usize,
    pub activation: Activation,
    pub noise_sq: f64,
    pub family: KernelFamily,
    pub bias_placement: BiasPlacement,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            sigma_w_sq: 1.6,
            sigma_b_sq: 0.1,
            depth: 3,
            activation: Activation::Relu,
            noise_sq: 1e-3,
            family: KernelFamily::Nngp,
            bias_placement: BiasPlacement::AllEntries,
        }
    }
}

impl KernelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if !(self.sigma_w_sq.is_finite() && self.sigma_w_sq > 0.0) {
            return bad("sigma_w_sq must be positive");
        }
        if !(self.sigma_b_sq.is_finite() && self.sigma_b_sq >= 0.0) {
            return bad("sigma_b_sq must be non-negative");
        }
        if !(self.noise_sq.is_finite() && self.noise_sq >= 0.0) {
            return bad("noise_sq must be non-negative");
        }
        if let KernelFamily::Rbf { length_scale } = self.family {
            if !(length_scale.is_finite() && length_scale > 0.0) {
                return bad("rbf length_scale must be positive");
            }
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        json_hash(self).expect("config serializes")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub left_hash: String,
    pub right_hash: String,
}

/// Dense column-major kernel matrix; entry `(i, j)` pairs left row `i`
/// with right row `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    pub provenance: Provenance,
}

impl KernelMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.rows + i]
    }

    /// Column `j`: the kernel between right row `j` and every left row.
    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn as_mat(&self) -> MatRef<'_, f64> {
        MatRef::from_column_major_slice(&self.data, self.rows, self.cols)
    }

    pub fn is_symmetric(&self) -> bool {
        self.rows == self.cols && (0..self.rows).all(|j| (0..j).all(|i| self.get(i, j) == self.get(j, i)))
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).collect()
    }

    pub fn add_to_diagonal(&mut self, v: f64) {
        for i in 0..self.rows.min(self.cols) {
            self.data[i * self.rows + i] += v;
        }
    }
}

pub fn features_hash(x: &FeatureMatrix) -> String {
    let mut bytes = Vec::with_capacity(8 * x.as_slice().len() + 8);
    bytes.extend_from_slice(&(x.d() as u64).to_le_bytes());
    for v in x.as_slice() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    sha256_hex(&bytes)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (ca, ra) = a.split_at(a.len() - a.len() % 4);
    let (cb, rb) = b.split_at(ca.len());
    for (x, y) in ca.chunks_exact(4).zip(cb.chunks_exact(4)) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn relu_raw(kxx: f64, kxy: f64, kyy: f64, bias: f64, sw2: f64) -> f64 {
    let p = kxx * kyy;
    if p <= 0.0 {
        return bias;
    }
    let s = p.sqrt();
    let c = (kxy / s).clamp(-1.0, 1.0);
    let theta = c.acos();
    bias + sw2 / (2.0 * PI) * s * ((1.0 - c * c).sqrt() + (PI - theta) * c)
}

fn erf_raw(kxx: f64, kxy: f64, kyy: f64, bias: f64, sw2: f64) -> f64 {
    let a = (2.0 * kxy / ((1.0 + 2.0 * kxx) * (1.0 + 2.0 * kyy)).sqrt()).clamp(-1.0, 1.0);
    bias + sw2 * (2.0 / PI) * a.asin()
}

fn diag_step(k: f64, cfg: &KernelConfig) -> f64 {
    match cfg.activation {
        Activation::Relu => cfg.sigma_b_sq + cfg.sigma_w_sq * k / 2.0,
        Activation::Erf => cfg.sigma_b_sq + cfg.sigma_w_sq * (2.0 / PI) * (2.0 * k / (1.0 + 2.0 * k)).asin(),
    }
}

/// One ReLU layer: maps the pre-activation covariance entries of a pair of
/// inputs to the covariance of the next layer.
pub fn relu_layer_step(k_xx: f64, k_xy: f64, k_yy: f64, cfg: &KernelConfig) -> Result<f64> {
    if !(k_xx > 0.0 && k_yy > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "relu step needs positive diagonals, got {k_xx} and {k_yy}"
        )));
    }
    Ok(relu_raw(k_xx, k_xy, k_yy, cfg.sigma_b_sq, cfg.sigma_w_sq))
}

/// One erf layer; the arcsine argument is clamped to [-1, 1].
pub fn erf_kernel_step(k_xx: f64, k_xy: f64, k_yy: f64, cfg: &KernelConfig) -> f64 {
    erf_raw(k_xx, k_xy, k_yy, cfg.sigma_b_sq, cfg.sigma_w_sq)
}

fn check_dims(x: &FeatureMatrix, y: &FeatureMatrix) -> Result<()> {
    if x.d() != y.d() {
        return Err(Error::DimensionMismatch {
            expected: x.d(),
            got: y.d(),
        });
    }
    if x.d() == 0 {
        return Err(Error::InvalidArgument("feature dimension is zero".into()));
    }
    Ok(())
}

/// Per-point diagonal `K^l(x, x)` for `l = 0..=depth`, point-major.
fn layer_diags(x: &FeatureMatrix, cfg: &KernelConfig) -> Vec<f64> {
    let l1 = cfg.depth + 1;
    let d = x.d() as f64;
    let mut out = Vec::with_capacity(x.n() * l1);
    for i in 0..x.n() {
        let r = x.row(i);
        let mut k = cfg.sigma_b_sq + cfg.sigma_w_sq * dot(r, r) / d;
        out.push(k);
        for _ in 0..cfg.depth {
            k = diag_step(k, cfg);
            out.push(k);
        }
    }
    out
}

struct Nngp<'a> {
    cfg: &'a KernelConfig,
    d: f64,
    off_bias: f64,
}

impl Nngp<'_> {
    fn entry(&self, xi: &[f64], yj: &[f64], dx: &[f64], dy: &[f64]) -> f64 {
        let cfg = self.cfg;
        let mut k = self.off_bias + cfg.sigma_w_sq * dot(xi, yj) / self.d;
        for l in 0..cfg.depth {
            k = match cfg.activation {
                Activation::Relu => relu_raw(dx[l], k, dy[l], self.off_bias, cfg.sigma_w_sq),
                Activation::Erf => erf_raw(dx[l], k, dy[l], self.off_bias, cfg.sigma_w_sq),
            };
        }
        k
    }
}

fn nngp_cross(x: &FeatureMatrix, y: &FeatureMatrix, cfg: &KernelConfig) -> Vec<f64> {
    let l1 = cfg.depth + 1;
    let (dx, dy) = (layer_diags(x, cfg), layer_diags(y, cfg));
    let e = Nngp {
        cfg,
        d: x.d() as f64,
        off_bias: off_bias(cfg),
    };
    let rows = x.n();
    let mut data = vec![0.0; rows * y.n()];
    if rows > 0 {
        data.par_chunks_mut(rows).enumerate().for_each(|(j, col)| {
            let yj = y.row(j);
            let dyj = &dy[j * l1..(j + 1) * l1];
            for (i, out) in col.iter_mut().enumerate() {
                *out = e.entry(x.row(i), yj, &dx[i * l1..(i + 1) * l1], dyj);
            }
        });
    }
    data
}

fn off_bias(cfg: &KernelConfig) -> f64 {
    match cfg.bias_placement {
        BiasPlacement::AllEntries => cfg.sigma_b_sq,
        BiasPlacement::Diagonal => 0.0,
    }
}

/// Fills the lower triangle column by column with `f(i, j)`, sets the
/// diagonal from `diag`, and mirrors.
fn symmetric_fill<F>(n: usize, diag: &[f64], f: F) -> Vec<f64>
where
    F: Fn(usize, usize) -> f64 + Sync,
{
    let mut data = vec![0.0; n * n];
    if n == 0 {
        return data;
    }
    data.par_chunks_mut(n).enumerate().for_each(|(j, col)| {
        col[j] = diag[j];
        for (i, out) in col.iter_mut().enumerate().skip(j + 1) {
            *out = f(i, j);
        }
    });
    for j in 0..n {
        for i in 0..j {
            data[j * n + i] = data[i * n + j];
        }
    }
    data
}

fn nngp_gram(x: &FeatureMatrix, cfg: &KernelConfig) -> Vec<f64> {
    let l1 = cfg.depth + 1;
    let dx = layer_diags(x, cfg);
    let e = Nngp {
        cfg,
        d: x.d() as f64,
        off_bias: off_bias(cfg),
    };
    let diag: Vec<f64> = (0..x.n()).map(|i| dx[i * l1 + cfg.depth]).collect();
    symmetric_fill(x.n(), &diag, |i, j| {
        e.entry(x.row(i), x.row(j), &dx[i * l1..(i + 1) * l1], &dx[j * l1..(j + 1) * l1])
    })
}

fn provenance(x: &FeatureMatrix, y: &FeatureMatrix, cfg: &KernelConfig) -> Provenance {
    Provenance {
        config_hash: cfg.hash(),
        left_hash: features_hash(x),
        right_hash: features_hash(y),
    }
}

fn wrap(x: &FeatureMatrix, y: &FeatureMatrix, cfg: &KernelConfig, data: Vec<f64>) -> KernelMatrix {
    KernelMatrix {
        rows: x.n(),
        cols: y.n(),
        data,
        provenance: provenance(x, y, cfg),
    }
}

/// Input-layer covariance `sb2 + sw2 * <x, x'> / d` between two batches.
pub fn base_kernel(x: &FeatureMatrix, y: &FeatureMatrix, cfg: &KernelConfig) -> Result<KernelMatrix> {
    cfg.validate()?;
    check_dims(x, y)?;
    let base = KernelConfig {
        depth: 0,
        ..cfg.clone()
    };
    Ok(wrap(x, y, cfg, nngp_cross(x, y, &base)))
}

/// NNGP kernel between two batches, no noise term.
pub fn nngp_kernel(x: &FeatureMatrix, y: &FeatureMatrix, cfg: &KernelConfig) -> Result<KernelMatrix> {
    cfg.validate()?;
    check_dims(x, y)?;
    Ok(wrap(x, y, cfg, nngp_cross(x, y, cfg)))
}

/// `exp(-|x - x'|^2 / (2 l^2))` between two batches.
pub fn rbf_kernel(x: &FeatureMatrix, y: &FeatureMatrix, length_scale: f64) -> Result<KernelMatrix> {
    if !(length_scale.is_finite() && length_scale > 0.0) {
        return Err(Error::InvalidArgument("rbf length_scale must be positive".into()));
    }
    check_dims(x, y)?;
    let cfg = KernelConfig {
        family: KernelFamily::Rbf { length_scale },
        ..KernelConfig::default()
    };
    Ok(wrap(x, y, &cfg, rbf_cross(x, y, length_scale)))
}

fn rbf_cross(x: &FeatureMatrix, y: &FeatureMatrix, l: f64) -> Vec<f64> {
    let rows = x.n();
    let s = 2.0 * l * l;
    let mut data = vec![0.0; rows * y.n()];
    if rows > 0 {
        data.par_chunks_mut(rows).enumerate().for_each(|(j, col)| {
            let yj = y.row(j);
            for (i, out) in col.iter_mut().enumerate() {
                *out = (-sq_dist(x.row(i), yj) / s).exp();
            }
        });
    }
    data
}

/// Kernel between two batches under the configured family.
pub fn kernel_matrix(x: &FeatureMatrix, y: &FeatureMatrix, cfg: &KernelConfig) -> Result<KernelMatrix> {
    cfg.validate()?;
    check_dims(x, y)?;
    let data = match cfg.family {
        KernelFamily::Nngp => nngp_cross(x, y, cfg),
        KernelFamily::Rbf { length_scale } => rbf_cross(x, y, length_scale),
    };
    Ok(wrap(x, y, cfg, data))
}

/// Symmetric kernel of a batch with itself, lower triangle computed and
/// mirrored. No noise term.
pub fn kernel_gram(x: &FeatureMatrix, cfg: &KernelConfig) -> Result<KernelMatrix> {
    cfg.validate()?;
    check_dims(x, x)?;
    let data = match cfg.family {
        KernelFamily::Nngp => nngp_gram(x, cfg),
        KernelFamily::Rbf { length_scale } => {
            let s = 2.0 * length_scale * length_scale;
            symmetric_fill(x.n(), &vec![1.0; x.n()], |i, j| (-sq_dist(x.row(i), x.row(j)) / s).exp())
        }
    };
    Ok(wrap(x, x, cfg, data))
}

/// Training kernel: the gram matrix plus `noise_sq` on the diagonal.
pub fn train_kernel(x: &FeatureMatrix, cfg: &KernelConfig) -> Result<KernelMatrix> {
    let mut k = kernel_gram(x, cfg)?;
    k.add_to_diagonal(cfg.noise_sq);
    Ok(k)
}

/// `K(x, x)` for every row, no noise. Matches the diagonal of
/// [`kernel_gram`] exactly.
pub fn kernel_diag(x: &FeatureMatrix, cfg: &KernelConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    check_dims(x, x)?;
    Ok(match cfg.family {
        KernelFamily::Nngp => {
            let l1 = cfg.depth + 1;
            layer_diags(x, cfg).chunks(l1).map(|c| c[cfg.depth]).collect()
        }
        KernelFamily::Rbf { .. } => vec![1.0; x.n()],
    })
}
