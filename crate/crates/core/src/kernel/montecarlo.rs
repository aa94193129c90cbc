//! Sampling counterparts of the closed-form kernels: bivariate-normal
//! expectations of the activations, and finite-width random networks.
//! Used by the tests and by `selfcheck`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::function::erf::erf;

use super::{Activation, BiasPlacement, KernelConfig};
use crate::encoder::FeatureMatrix;
use crate::error::{Error, Result};

fn bivariate<F: Fn(f64) -> f64>(kxx: f64, kxy: f64, kyy: f64, n: usize, rng: &mut impl Rng, phi: F) -> f64 {
    let sx = kxx.sqrt();
    let sy = kyy.sqrt();
    let rho = if sx * sy > 0.0 { (kxy / (sx * sy)).clamp(-1.0, 1.0) } else { 0.0 };
    let tail = (1.0 - rho * rho).sqrt();
    let mut acc = 0.0;
    for _ in 0..n {
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        let u = sx * z1;
        let v = sy * (rho * z1 + tail * z2);
        acc += phi(u) * phi(v);
    }
    acc / n as f64
}

/// `E[relu(u) relu(v)]` for `(u, v)` centred normal with the given
/// covariance, estimated from `n` samples.
pub fn mc_relu(kxx: f64, kxy: f64, kyy: f64, n: usize, rng: &mut impl Rng) -> f64 {
    bivariate(kxx, kxy, kyy, n, rng, |t| t.max(0.0))
}

/// `E[erf(u) erf(v)]`, as [`mc_relu`].
pub fn mc_erf(kxx: f64, kxy: f64, kyy: f64, n: usize, rng: &mut impl Rng) -> f64 {
    bivariate(kxx, kxy, kyy, n, rng, erf)
}

/// How the output layer enters the covariance estimate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Readout {
    /// Sample readout weights and bias; accumulate `f(x) f(x')`.
    Sampled,
    /// Integrate the Gaussian readout exactly given the sampled hidden
    /// layers: `sb2 + sw2 * <phi(x), phi(x')> / m`.
    Conditional,
}

/// Output covariance over the rows of `x` of fully connected networks with
/// `cfg.depth` hidden layers of `width` units each, averaged over
/// `n_networks` independent draws of `w ~ N(0, sw2 / fan_in)`,
/// `b ~ N(0, sb2)`. Returns the `n x n` matrix column-major.
pub fn network_covariance(
    x: &FeatureMatrix,
    cfg: &KernelConfig,
    width: usize,
    n_networks: usize,
    readout: Readout,
    seed: u64,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if cfg.bias_placement != BiasPlacement::AllEntries {
        return Err(Error::InvalidArgument(
            "network sampling needs the shared-bias kernel".into(),
        ));
    }
    if width == 0 || n_networks == 0 {
        return Err(Error::InvalidArgument("width and network count must be positive".into()));
    }
    let n = x.n();
    let act: fn(f64) -> f64 = match cfg.activation {
        Activation::Relu => |t| t.max(0.0),
        Activation::Erf => erf,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cov = vec![0.0; n * n];
    for _ in 0..n_networks {
        // features are row-major n x fan_in
        let mut fan_in = x.d();
        let mut feats = x.as_slice().to_vec();
        for _ in 0..cfg.depth {
            let sd_w = (cfg.sigma_w_sq / fan_in as f64).sqrt();
            let sd_b = cfg.sigma_b_sq.sqrt();
            let w: Vec<f64> = (0..fan_in * width)
                .map(|_| sd_w * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let b: Vec<f64> = (0..width).map(|_| sd_b * rng.sample::<f64, _>(StandardNormal)).collect();
            let mut next = vec![0.0; n * width];
            for i in 0..n {
                let row = &feats[i * fan_in..(i + 1) * fan_in];
                let out = &mut next[i * width..(i + 1) * width];
                out.copy_from_slice(&b);
                for (t, &xv) in row.iter().enumerate() {
                    let wt = &w[t * width..(t + 1) * width];
                    for (o, &wv) in out.iter_mut().zip(wt) {
                        *o += xv * wv;
                    }
                }
                for o in out.iter_mut() {
                    *o = act(*o);
                }
            }
            feats = next;
            fan_in = width;
        }
        match readout {
            Readout::Conditional => {
                for j in 0..n {
                    for i in 0..n {
                        let a = &feats[i * fan_in..(i + 1) * fan_in];
                        let b = &feats[j * fan_in..(j + 1) * fan_in];
                        let ip: f64 = a.iter().zip(b).map(|(p, q)| p * q).sum();
                        cov[j * n + i] += cfg.sigma_b_sq + cfg.sigma_w_sq * ip / fan_in as f64;
                    }
                }
            }
            Readout::Sampled => {
                let sd_w = (cfg.sigma_w_sq / fan_in as f64).sqrt();
                let w: Vec<f64> = (0..fan_in).map(|_| sd_w * rng.sample::<f64, _>(StandardNormal)).collect();
                let b: f64 = cfg.sigma_b_sq.sqrt() * rng.sample::<f64, _>(StandardNormal);
                let f: Vec<f64> = (0..n)
                    .map(|i| b + feats[i * fan_in..(i + 1) * fan_in].iter().zip(&w).map(|(p, q)| p * q).sum::<f64>())
                    .collect();
                for j in 0..n {
                    for i in 0..n {
                        cov[j * n + i] += f[i] * f[j];
                    }
                }
            }
        }
    }
    for v in &mut cov {
        *v /= n_networks as f64;
    }
    Ok(cov)
}

/// `|A - B|_F / |B|_F`.
pub fn relative_frobenius(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}
