//! Brute-force Monte Carlo evaluation of the generator prior
//! `π(x) = ∫ N(x | g(z), Γ(z)) N(z | 0, I) dz` and of the exact posterior
//! moments under it. Intended for small `d`; used to certify the Laplace
//! approximation.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::forward_model::LinearModel;
use crate::gaussian::{Covariance, GaussianDist};
use crate::generator::GeneratorNet;
use crate::laplace::{laplace_fit, ExpansionOptions};
use crate::linalg::spd_factor;
use crate::rng::{derive_seed, seeded, standard_normal_vec};

const CHUNK: usize = 1024;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Below this effective sample size the posterior moments are flagged.
pub const MIN_ESS: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorEstimate {
    pub log_value: f64,
    /// Delta-method standard error of `log_value`.
    pub std_error: f64,
    pub n_samples: usize,
}

/// `log N(x | g(z), Γ(z))`.
fn log_output_density(net: &GeneratorNet, x: &DVector<f64>, z: &DVector<f64>) -> Result<f64> {
    let joint = net.log_joint(x, z)?;
    Ok(joint + 0.5 * z.norm_squared() - 0.5 * x.len() as f64 * LN_2PI)
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Runs `f(i, rng)` for `i in 0..n` in seeded chunks; output order is `i`.
fn chunked<T, F>(n: usize, seed: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&mut crate::rng::SeedRng) -> Result<T> + Sync,
{
    let chunks: Vec<Result<Vec<T>>> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut rng = seeded(derive_seed(seed, &[c as u64]));
            let len = CHUNK.min(n - c * CHUNK);
            (0..len).map(|_| f(&mut rng)).collect()
        })
        .collect();
    let mut out = Vec::with_capacity(n);
    for chunk in chunks {
        out.extend(chunk?);
    }
    Ok(out)
}

/// `log (1/N) Σ N(x | g(zᵢ), Γ(zᵢ))` with `zᵢ ~ N(0, I)`.
pub fn mc_log_prior(net: &GeneratorNet, x: &DVector<f64>, n_samples: usize, seed: u64) -> Result<PriorEstimate> {
    if n_samples < 100 {
        return Err(Error::InvalidArgument("mc_log_prior needs n_samples >= 100".into()));
    }
    check_len("x", net.output_dim(), x.len())?;
    let p = net.latent_dim();
    let logs = chunked(n_samples, seed, |rng| {
        let z = standard_normal_vec(rng, p);
        log_output_density(net, x, &z)
    })?;
    let n = n_samples as f64;
    let log_value = log_sum_exp(&logs) - n.ln();
    // Relative weights w = exp(l − log p̂) have mean 1.
    let var = logs.iter().map(|l| ((l - log_value).exp() - 1.0).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(PriorEstimate {
        log_value,
        std_error: (var / n).sqrt(),
        n_samples,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImportanceOptions {
    /// Proposal covariance is `inflation² · Ŝ`.
    pub inflation: f64,
    /// Latent draws per unbiased estimate of `π(x)`.
    pub inner_samples: usize,
    pub expansion: ExpansionOptions,
}

impl Default for ImportanceOptions {
    fn default() -> Self {
        Self {
            inflation: 1.5,
            inner_samples: 32,
            expansion: ExpansionOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PosteriorMoments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// Per-coordinate standard error of `mean`.
    pub mean_se: DVector<f64>,
    pub ess: f64,
    /// `ess < MIN_ESS`.
    pub low_ess: bool,
}

/// Self-normalized importance sampling of `π(x | y)`.
///
/// The proposal is the Laplace posterior with inflated covariance. Each
/// draw's prior density is replaced by an unbiased estimate from
/// `inner_samples` latent draws taken from the defensive mixture
/// `½ N(0, I) + ½ N(z₀, 2(I + JᵀΓ⁻¹J)⁻¹)`, which keeps the estimator
/// consistent.
pub fn mc_posterior_moments(
    model: &LinearModel,
    y: &DVector<f64>,
    net: &GeneratorNet,
    n_samples: usize,
    seed: u64,
    opts: &ImportanceOptions,
) -> Result<PosteriorMoments> {
    if n_samples < 2 || opts.inner_samples == 0 || !(opts.inflation > 0.0) {
        return Err(Error::InvalidArgument(
            "importance sampling needs n_samples >= 2, inner_samples >= 1, inflation > 0".into(),
        ));
    }
    let fit = laplace_fit(model, y, net, &opts.expansion)?;
    let post = &fit.posterior;
    let proposal = GaussianDist::new(
        post.mean.clone(),
        Covariance::Full(&post.cov * (opts.inflation * opts.inflation)),
    )?;

    let z0 = &post.prior.z0;
    let p = z0.len();
    let gj = post.prior.gamma().solve_matrix(post.prior.jacobian())?;
    let mut lat_prec = post.prior.jacobian().tr_mul(&gj);
    for i in 0..p {
        lat_prec[(i, i)] += 1.0;
    }
    let local = GaussianDist::new(z0.clone(), Covariance::Full(spd_factor(&lat_prec)?.inverse() * 2.0))?;
    let standard = GaussianDist::new(DVector::zeros(p), Covariance::Isotropic { variance: 1.0, dim: p })?;

    let m = opts.inner_samples;
    let s2 = model.sigma2();
    let draws = chunked(n_samples, seed, |rng| {
        let x = proposal.sample(rng);
        let mut inner = Vec::with_capacity(m);
        for j in 0..m {
            let z = if j % 2 == 0 { standard.sample(rng) } else { local.sample(rng) };
            let mix = log_sum_exp(&[standard.log_pdf(&z), local.log_pdf(&z)]) - std::f64::consts::LN_2;
            inner.push(log_output_density(net, &x, &z)? + standard.log_pdf(&z) - mix);
        }
        let log_prior = log_sum_exp(&inner) - (m as f64).ln();
        let r = model.a() * &x - y;
        let log_w = -r.norm_squared() / (2.0 * s2) + log_prior - proposal.log_pdf(&x);
        Ok((x, log_w))
    })?;

    let log_ws: Vec<f64> = draws.iter().map(|(_, w)| *w).collect();
    let norm = log_sum_exp(&log_ws);
    if !norm.is_finite() {
        return Err(Error::Numerical("all importance weights vanished".into()));
    }
    let weights: Vec<f64> = log_ws.iter().map(|w| (w - norm).exp()).collect();
    let d = model.d();
    let mut mean = DVector::zeros(d);
    for ((x, _), w) in draws.iter().zip(&weights) {
        mean.axpy(*w, x, 1.0);
    }
    let mut cov = DMatrix::zeros(d, d);
    let mut se2 = DVector::zeros(d);
    for ((x, _), w) in draws.iter().zip(&weights) {
        let r = x - &mean;
        cov.ger(*w, &r, &r, 1.0);
        se2 += r.component_mul(&r) * (w * w);
    }
    let ess = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
    if ess < MIN_ESS {
        log::warn!("importance sampling ESS {ess:.1} below {MIN_ESS}");
    }
    Ok(PosteriorMoments {
        mean,
        cov,
        mean_se: se2.map(f64::sqrt),
        ess,
        low_ess: ess < MIN_ESS,
    })
}
