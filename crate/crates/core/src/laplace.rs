//! Variable-space inference with a Laplace-approximated generator prior.
//!
//! Linearizing the mean map at an expansion point `z₀`,
//! `g(z) ≈ g(z₀) + J(z − z₀)`, and freezing `Γ(z) ≈ Γ(z₀)` turns the
//! marginal prior `π(x) = ∫ N(x | g(z), Γ(z)) N(z | 0, I) dz` into
//!
//! ```text
//! π_L(x) = N(x | g(z₀) − J z₀,  Γ(z₀) + J Jᵀ)
//! ```
//!
//! and the posterior under `y | x ~ N(Ax, σ²I)` into `N(x̂, Ŝ)` with
//!
//! ```text
//! Ŝ = (σ⁻² AᵀA + C⁻¹)⁻¹,   x̂ = Ŝ (σ⁻² Aᵀy + C⁻¹ m),   C = Γ(z₀) + JJᵀ.
//! ```
//!
//! The expansion point comes from [`select_expansion_point`]: a data-driven
//! start `x₀` ([`least_squares_init`]), an initial latent guess, and repeated
//! linearized maximizations of the joint log-integrand
//! `π₀(x₀, z) = log N(x₀ | g(z), Γ(z)) + log N(z | 0, I)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::forward_model::LinearModel;
use crate::gaussian::Covariance;
use crate::generator::GeneratorNet;
use crate::latent::{LatentMap, LatentOptions};
use crate::linalg::{inf_norm, spd_factor, strict_factor, symmetrize};
use crate::optim::{minimize, BfgsOptions};
use crate::rng::{derive_seed, seeded, standard_normal_vec};

/// `x₀ = argmin σ⁻²‖Ax − y‖² + ‖x − g(0)‖²_{Γ(0)⁻¹}`.
pub fn least_squares_init(model: &LinearModel, y: &DVector<f64>, net: &GeneratorNet) -> Result<DVector<f64>> {
    check_len("y", model.n(), y.len())?;
    check_len("generator output vs operator columns", model.d(), net.output_dim())?;
    let z = DVector::zeros(net.latent_dim());
    let g0 = net.g_mean(&z)?;
    let gamma0 = net.gamma(&z)?;
    let inv_s2 = 1.0 / model.sigma2();
    let mut lhs = model.ata() * inv_s2;
    lhs += gamma0.inverse()?;
    let rhs = model.a().tr_mul(y) * inv_s2 + gamma0.solve(&g0)?;
    Ok(spd_factor(&lhs)?.solve(&rhs))
}

/// Maximizes `π₀(x₀, z)` over `z` with BFGS, from `z = 0` and `restarts`
/// additional seeded standard-normal starts; returns the best optimum.
pub fn latent_search(net: &GeneratorNet, x0: &DVector<f64>, restarts: usize, opts: &BfgsOptions) -> Result<LatentMap> {
    check_len("x0", net.output_dim(), x0.len())?;
    let p = net.latent_dim();
    // Γ sets the curvature scale of π₀; rescale so gradients are O(1).
    let scale = net.gamma(&DVector::zeros(p))?.min_eigenvalue().min(1.0);
    let objective = |z: &DVector<f64>| match (net.log_joint(x0, z), net.log_joint_grad(x0, z)) {
        (Ok(v), Ok(g)) => (-v * scale, -g * scale),
        _ => (f64::INFINITY, DVector::zeros(z.len())),
    };
    let mut best: Option<(f64, LatentMap)> = None;
    for k in 0..=restarts {
        let start = if k == 0 {
            DVector::zeros(p)
        } else {
            standard_normal_vec(&mut seeded(derive_seed(0x1a7e_5ea7, &[k as u64])), p)
        };
        let found = minimize(objective, &start, opts);
        let value = net.log_joint(x0, &found.x)?;
        if best.as_ref().is_none_or(|(v, _)| value > *v) {
            best = Some((
                value,
                LatentMap {
                    z: found.x,
                    diagnostics: found.diagnostics,
                },
            ));
        }
    }
    Ok(best.expect("at least one start").1)
}

/// The joint log-integrand `π₀(x₀, z)` (additive constants dropped).
pub fn log_integrand(net: &GeneratorNet, x0: &DVector<f64>, z: &DVector<f64>) -> Result<f64> {
    net.log_joint(x0, z)
}

/// Solves `(I + JᵀΓ⁻¹J) z¹ = JᵀΓ⁻¹ (x₀ − g(z) + J z)` with `J`, `Γ` at `z`.
pub fn expansion_update(net: &GeneratorNet, x0: &DVector<f64>, z: &DVector<f64>) -> Result<DVector<f64>> {
    let (g, jac) = net.mean_and_jacobian(z)?;
    let gamma = net.gamma(z)?;
    let gj = gamma.solve_matrix(&jac)?;
    let mut lhs = jac.tr_mul(&gj);
    for i in 0..lhs.nrows() {
        lhs[(i, i)] += 1.0;
    }
    let rhs = gj.tr_mul(&(x0 - g + &jac * z));
    Ok(spd_factor(&lhs)?.solve(&rhs))
}

/// Residual of the update equation at `z¹ = z`, in ∞-norm relative to
/// `max(‖right-hand side‖∞, 1)`.
pub fn expansion_residual(net: &GeneratorNet, x0: &DVector<f64>, z: &DVector<f64>) -> Result<f64> {
    let (g, jac) = net.mean_and_jacobian(z)?;
    let gamma = net.gamma(z)?;
    let gj = gamma.solve_matrix(&jac)?;
    let mut lhs = jac.tr_mul(&gj);
    for i in 0..lhs.nrows() {
        lhs[(i, i)] += 1.0;
    }
    let rhs = gj.tr_mul(&(x0 - g + &jac * z));
    Ok(inf_norm(&(lhs * z - &rhs)) / inf_norm(&rhs).max(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpansionOptions {
    pub max_iter: usize,
    /// Stop once an accepted update improves `π₀` by less than this.
    pub tol: f64,
    pub latent: LatentOptions,
}

impl Default for ExpansionOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-10,
            latent: LatentOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    /// Improvement fell below the tolerance.
    Tolerance,
    /// The candidate did not improve `π₀`.
    NoImprovement,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct ExpansionTrace {
    pub x0: DVector<f64>,
    pub initial_z: DVector<f64>,
    /// `π₀` of the initial point followed by every accepted update.
    pub log_integrand: Vec<f64>,
    /// Accepted updates whose gain reached the tolerance.
    pub iterations: usize,
    pub stop: StopReason,
    /// Update-equation residual at the returned point.
    pub residual: f64,
}

impl ExpansionTrace {
    pub fn converged(&self) -> bool {
        self.stop != StopReason::MaxIterations
    }
}

/// Chooses the Laplace expansion point for data `y`.
///
/// 1. `x₀` from [`least_squares_init`];
/// 2. `z⁰ = f(x₀)` with the encoder mean, or [`latent_search`] without one;
/// 3. candidate `z¹` from [`expansion_update`];
/// 4. accept it if `π₀(x₀, z¹) > π₀(x₀, z⁰)`;
/// 5. repeat 3–4 until no improvement, an improvement below `opts.tol`, or
///    `opts.max_iter` updates.
pub fn select_expansion_point(
    model: &LinearModel,
    y: &DVector<f64>,
    net: &GeneratorNet,
    opts: &ExpansionOptions,
) -> Result<(DVector<f64>, ExpansionTrace)> {
    let x0 = least_squares_init(model, y, net)?;
    let initial_z = match net.encoder_mean(&x0) {
        Ok(z) => z,
        Err(Error::Unsupported(_)) => latent_search(net, &x0, opts.latent.search_restarts, &opts.latent.bfgs)?.z,
        Err(e) => return Err(e),
    };
    let (z, trace) = iterate_expansion(net, &x0, initial_z, opts)?;
    Ok((z, trace))
}

/// Steps 3–5 of [`select_expansion_point`] from a given `(x₀, z⁰)`.
pub fn iterate_expansion(
    net: &GeneratorNet,
    x0: &DVector<f64>,
    initial_z: DVector<f64>,
    opts: &ExpansionOptions,
) -> Result<(DVector<f64>, ExpansionTrace)> {
    let mut z = initial_z.clone();
    let mut value = log_integrand(net, x0, &z)?;
    let mut values = vec![value];
    let mut stop = StopReason::MaxIterations;
    let mut iterations = 0;
    for _ in 0..opts.max_iter {
        let cand = expansion_update(net, x0, &z)?;
        let cand_value = log_integrand(net, x0, &cand)?;
        if !(cand_value > value) {
            stop = StopReason::NoImprovement;
            break;
        }
        let gain = cand_value - value;
        z = cand;
        value = cand_value;
        values.push(value);
        if gain < opts.tol {
            stop = StopReason::Tolerance;
            break;
        }
        iterations += 1;
    }
    let residual = expansion_residual(net, x0, &z)?;
    let trace = ExpansionTrace {
        x0: x0.clone(),
        initial_z,
        iterations,
        log_integrand: values,
        stop,
        residual,
    };
    Ok((z, trace))
}

/// `N(g(z₀) − J z₀, Γ(z₀) + J Jᵀ)`.
#[derive(Debug, Clone)]
pub struct LaplacePrior {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub z0: DVector<f64>,
    gamma: Covariance,
    jacobian: DMatrix<f64>,
}

impl LaplacePrior {
    pub fn gamma(&self) -> &Covariance {
        &self.gamma
    }

    pub fn jacobian(&self) -> &DMatrix<f64> {
        &self.jacobian
    }

    /// `C⁻¹`, via Woodbury unless `Γ` is a full matrix:
    /// `Γ⁻¹ − Γ⁻¹J (I + JᵀΓ⁻¹J)⁻¹ JᵀΓ⁻¹`.
    pub fn precision(&self) -> Result<DMatrix<f64>> {
        if let Covariance::Full(_) = self.gamma {
            return crate::linalg::spd_inverse(&self.cov);
        }
        let gj = self.gamma.solve_matrix(&self.jacobian)?;
        let mut core = self.jacobian.tr_mul(&gj);
        for i in 0..core.nrows() {
            core[(i, i)] += 1.0;
        }
        let inner = spd_factor(&core)?.solve(&gj.transpose());
        Ok(symmetrize(&(self.gamma.inverse()? - gj * inner)))
    }

    pub fn log_density(&self, x: &DVector<f64>) -> Result<f64> {
        let dist = crate::gaussian::GaussianDist::new(self.mean.clone(), Covariance::Full(self.cov.clone()))?;
        Ok(dist.log_pdf(x))
    }
}

pub fn laplace_prior(net: &GeneratorNet, z0: &DVector<f64>) -> Result<LaplacePrior> {
    let (g, jac) = net.mean_and_jacobian(z0)?;
    let gamma = net.gamma(z0)?;
    let mut cov = &jac * jac.transpose();
    gamma.add_to(&mut cov);
    Ok(LaplacePrior {
        mean: g - &jac * z0,
        cov: symmetrize(&cov),
        z0: z0.clone(),
        gamma,
        jacobian: jac,
    })
}

/// Gaussian posterior `N(x̂, Ŝ)` under the Laplace prior.
#[derive(Debug, Clone)]
pub struct LaplacePosterior {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub prior: LaplacePrior,
    pub sigma2: f64,
}

pub fn laplace_posterior(model: &LinearModel, y: &DVector<f64>, prior: LaplacePrior) -> Result<LaplacePosterior> {
    check_len("y", model.n(), y.len())?;
    check_len("prior dimension", model.d(), prior.mean.len())?;
    let inv_s2 = 1.0 / model.sigma2();
    let prior_precision = prior.precision()?;
    let precision = model.ata() * inv_s2 + &prior_precision;
    let chol = spd_factor(&precision)?;
    let rhs = model.a().tr_mul(y) * inv_s2 + &prior_precision * &prior.mean;
    let mean = chol.solve(&rhs);
    let cov = symmetrize(&chol.inverse());
    Ok(LaplacePosterior {
        mean,
        cov,
        prior,
        sigma2: model.sigma2(),
    })
}

/// Standard deviations of the per-pixel marginals, `sqrt(diag Ŝ)`.
pub fn marginal_pixel_std(post: &LaplacePosterior) -> DVector<f64> {
    post.cov.diagonal().map(f64::sqrt)
}

/// `Ĉ = σ² (AᵀA)⁻¹`.
pub fn laplace_asymptotic_cov(model: &LinearModel) -> Result<DMatrix<f64>> {
    let chol = strict_factor(model.ata()).ok_or_else(|| Error::Numerical("AᵀA is rank deficient".into()))?;
    Ok(symmetrize(&(chol.inverse() * model.sigma2())))
}

/// Full pipeline: expansion point, prior, posterior.
#[derive(Debug, Clone)]
pub struct LaplaceFit {
    pub posterior: LaplacePosterior,
    pub trace: ExpansionTrace,
}

pub fn laplace_fit(model: &LinearModel, y: &DVector<f64>, net: &GeneratorNet, opts: &ExpansionOptions) -> Result<LaplaceFit> {
    let (z0, trace) = select_expansion_point(model, y, net, opts)?;
    let prior = laplace_prior(net, &z0)?;
    Ok(LaplaceFit {
        posterior: laplace_posterior(model, y, prior)?,
        trace,
    })
}
