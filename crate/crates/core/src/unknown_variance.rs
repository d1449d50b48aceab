//! Inference when the noise variance is unknown.
//!
//! With an Inverse-Gamma prior on `σ²` the variance integrates out in closed
//! form. The prior is parametrized so that the marginal likelihood reads
//! `(‖r‖² + β)^{−(n+2α)/2}` for a residual `r ∈ ℝⁿ`, i.e.
//! `π(σ²) ∝ (σ²)^{−α−1} exp(−β / (2σ²))`. Under this convention the prior
//! concentrates at `σ²` when `β = 2ασ²` and `α → ∞`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::gaussian::{Covariance, GaussianDist};
use crate::generator::GeneratorNet;
use crate::laplace::LaplacePrior;
use crate::linalg::inf_norm;
use crate::optim::{minimize, BfgsOptions, Diagnostics};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IGPrior {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for IGPrior {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 1e-4 }
    }
}

impl IGPrior {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let ig = Self { alpha, beta };
        ig.validate()?;
        Ok(ig)
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha > 0.0 && self.beta > 0.0 && self.alpha.is_finite() && self.beta.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "inverse-gamma parameters must be positive, got alpha={} beta={}",
                self.alpha, self.beta
            )))
        }
    }

    /// `(n + 2α) / 2`.
    pub fn exponent(&self, n: usize) -> f64 {
        (n as f64 + 2.0 * self.alpha) / 2.0
    }

    /// `−(n+2α)/2 · log(‖r‖² + β)`.
    pub fn log_likelihood(&self, residual: &DVector<f64>) -> f64 {
        -self.exponent(residual.len()) * (residual.norm_squared() + self.beta).ln()
    }

    /// Derivative of [`IGPrior::log_likelihood`] with respect to `r`.
    fn residual_grad(&self, residual: &DVector<f64>) -> DVector<f64> {
        residual * (-2.0 * self.exponent(residual.len()) / (residual.norm_squared() + self.beta))
    }
}

fn residual(a: &DMatrix<f64>, x: &DVector<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    check_len("y", a.nrows(), y.len())?;
    check_len("x", a.ncols(), x.len())?;
    Ok(a * x - y)
}

/// `−(n+2α)/2 · log(‖Ag(z) − y‖² + β) − ‖z‖²/2`.
pub fn marginal_latent_log_density(
    net: &GeneratorNet,
    a: &DMatrix<f64>,
    y: &DVector<f64>,
    ig: &IGPrior,
    z: &DVector<f64>,
) -> Result<f64> {
    let r = residual(a, &net.g_mean(z)?, y)?;
    Ok(ig.log_likelihood(&r) - 0.5 * z.norm_squared())
}

pub fn marginal_latent_log_density_grad(
    net: &GeneratorNet,
    a: &DMatrix<f64>,
    y: &DVector<f64>,
    ig: &IGPrior,
    z: &DVector<f64>,
) -> Result<DVector<f64>> {
    let (g, jac) = net.mean_and_jacobian(z)?;
    let r = residual(a, &g, y)?;
    Ok((a * jac).tr_mul(&ig.residual_grad(&r)) - z)
}

/// `−(n+2α)/2 · log(‖Ax − y‖² + β) + log N(x | m, C)` with the Laplace prior
/// standing in for the generator prior.
pub fn marginal_variable_log_density(
    a: &DMatrix<f64>,
    y: &DVector<f64>,
    ig: &IGPrior,
    prior: &LaplacePrior,
    x: &DVector<f64>,
) -> Result<f64> {
    let r = residual(a, x, y)?;
    Ok(ig.log_likelihood(&r) + prior.log_density(x)?)
}

pub fn marginal_variable_log_density_grad(
    a: &DMatrix<f64>,
    y: &DVector<f64>,
    ig: &IGPrior,
    prior: &LaplacePrior,
    x: &DVector<f64>,
) -> Result<DVector<f64>> {
    let r = residual(a, x, y)?;
    let prior_grad = -(prior.precision()? * (x - &prior.mean));
    Ok(a.tr_mul(&ig.residual_grad(&r)) + prior_grad)
}

#[derive(Debug, Clone)]
pub struct VariableMap {
    pub x: DVector<f64>,
    /// `grad_norm` is the unscaled ∞-norm gradient of the log density.
    pub diagnostics: Diagnostics,
}

/// Maximizes [`marginal_variable_log_density`] by BFGS from `x_init`.
///
/// The objective is divided by a curvature estimate taken at `x_init`, so
/// the gradient tolerance in `opts` applies to the rescaled problem.
pub fn marginal_variable_map(
    a: &DMatrix<f64>,
    y: &DVector<f64>,
    ig: &IGPrior,
    prior: &LaplacePrior,
    x_init: &DVector<f64>,
    opts: &BfgsOptions,
) -> Result<VariableMap> {
    ig.validate()?;
    let r0 = residual(a, x_init, y)?;
    check_len("prior dimension", a.ncols(), prior.mean.len())?;
    let precision = prior.precision()?;
    let dist = GaussianDist::new(prior.mean.clone(), Covariance::Full(prior.cov.clone()))?;
    let ata = a.tr_mul(a);
    let curvature = 2.0 * ig.exponent(y.len()) / (r0.norm_squared() + ig.beta) * max_abs(&ata) + max_abs(&precision);
    let scale = 1.0 / curvature.max(1.0);

    let objective = |x: &DVector<f64>| {
        let r = a * x - y;
        let value = ig.log_likelihood(&r) + dist.log_pdf(x);
        let grad = a.tr_mul(&ig.residual_grad(&r)) - &precision * (x - &prior.mean);
        (-value * scale, -grad * scale)
    };
    let found = minimize(objective, x_init, opts);
    let grad = marginal_variable_log_density_grad(a, y, ig, prior, &found.x)?;
    let mut diagnostics = found.diagnostics;
    diagnostics.grad_norm = inf_norm(&grad);
    diagnostics.value = -diagnostics.value / scale;
    if !diagnostics.converged {
        log::warn!("marginal_variable_map did not converge: {diagnostics:?}");
    }
    Ok(VariableMap { x: found.x, diagnostics })
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}
