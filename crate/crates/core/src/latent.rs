//! Inference in the generator's latent space.
//!
//! The data model is `y | z ~ N(A g(z), σ²I)` with `z ~ N(0, I)`; estimates
//! are push-forwards `g(z)` of latent MAP points or posterior samples, so
//! they never leave the generator's image.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::forward_model::LinearModel;
use crate::generator::GeneratorNet;
use crate::laplace::{latent_search, least_squares_init};
use crate::linalg::{numerical_rank, spd_factor, strict_factor};
use crate::optim::{minimize, BfgsOptions, Diagnostics};
use crate::rng::{seeded, standard_normal_vec};

#[derive(Debug, Clone, Copy)]
pub struct LatentPosterior<'a> {
    pub model: &'a LinearModel,
    pub net: &'a GeneratorNet,
}

/// How the latent MAP search is started.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum LatentInit {
    /// Least-squares start `x₀`, then `z⁰ = f(x₀)` via the encoder, or a
    /// latent search for `x₀` when the generator has none.
    #[default]
    LeastSquares,
    Zero,
    Point(DVector<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentOptions {
    pub bfgs: BfgsOptions,
    /// Extra seeded starting points for the encoder-free latent search.
    pub search_restarts: usize,
}

impl Default for LatentOptions {
    fn default() -> Self {
        Self {
            bfgs: BfgsOptions::default(),
            search_restarts: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LatentMap {
    pub z: DVector<f64>,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone)]
pub struct LatentEstimate {
    pub x: DVector<f64>,
    pub z: DVector<f64>,
    pub diagnostics: Diagnostics,
}

impl<'a> LatentPosterior<'a> {
    pub fn new(model: &'a LinearModel, net: &'a GeneratorNet) -> Result<Self> {
        check_len("generator output vs operator columns", model.d(), net.output_dim())?;
        Ok(Self { model, net })
    }

    fn residual(&self, z: &DVector<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("y", self.model.n(), y.len())?;
        Ok(self.model.a() * self.net.g_mean(z)? - y)
    }

    /// `−‖A g(z) − y‖²/(2σ²) − ‖z‖²/2`.
    pub fn log_density(&self, z: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
        let r = self.residual(z, y)?;
        Ok(-r.norm_squared() / (2.0 * self.model.sigma2()) - 0.5 * z.norm_squared())
    }

    /// `−σ⁻² Jᵀ Aᵀ (A g(z) − y) − z`.
    pub fn log_density_grad(&self, z: &DVector<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("y", self.model.n(), y.len())?;
        let (g, jac) = self.net.mean_and_jacobian(z)?;
        let r = self.model.a() * g - y;
        let aj = self.model.a() * jac;
        Ok(-aj.tr_mul(&r) / self.model.sigma2() - z)
    }

    /// Maximizes the latent log-density with BFGS.
    ///
    /// The optimizer works on `−min(σ², 1)·log π(z|y)`, which has the same
    /// maximizer but a gradient that stays O(1) as σ → 0; the gradient
    /// tolerance applies to that scaled objective.
    pub fn map(&self, y: &DVector<f64>, z_init: &DVector<f64>, opts: &BfgsOptions) -> Result<LatentMap> {
        check_len("z_init", self.net.latent_dim(), z_init.len())?;
        check_len("y", self.model.n(), y.len())?;
        if z_init.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("z_init has non-finite entries".into()));
        }
        let scale = self.model.sigma2().min(1.0);
        let s2 = self.model.sigma2();
        let a = self.model.a();
        let objective = |z: &DVector<f64>| match self.net.mean_and_jacobian(z) {
            Ok((g, jac)) => {
                let r = a * g - y;
                let value = scale * (r.norm_squared() / (2.0 * s2) + 0.5 * z.norm_squared());
                let grad = ((a * jac).tr_mul(&r) / s2 + z) * scale;
                (value, grad)
            }
            Err(_) => (f64::INFINITY, DVector::zeros(z.len())),
        };
        let found = minimize(objective, z_init, opts);
        Ok(LatentMap {
            z: found.x,
            diagnostics: found.diagnostics,
        })
    }

    /// Starting point according to `init`.
    pub fn initial_point(&self, y: &DVector<f64>, init: &LatentInit, opts: &LatentOptions) -> Result<DVector<f64>> {
        Ok(match init {
            LatentInit::Zero => DVector::zeros(self.net.latent_dim()),
            LatentInit::Point(z) => {
                check_len("initial latent point", self.net.latent_dim(), z.len())?;
                z.clone()
            }
            LatentInit::LeastSquares => {
                let x0 = least_squares_init(self.model, y, self.net)?;
                match self.net.encoder_mean(&x0) {
                    Ok(z) => z,
                    Err(Error::Unsupported(_)) => {
                        latent_search(self.net, &x0, opts.search_restarts, &opts.bfgs)?.z
                    }
                    Err(e) => return Err(e),
                }
            }
        })
    }

    /// `g(z_MAP)`.
    pub fn estimate(&self, y: &DVector<f64>, init: &LatentInit, opts: &LatentOptions) -> Result<LatentEstimate> {
        let z0 = self.initial_point(y, init, opts)?;
        let found = self.map(y, &z0, &opts.bfgs)?;
        Ok(LatentEstimate {
            x: self.net.g_mean(&found.z)?,
            z: found.z,
            diagnostics: found.diagnostics,
        })
    }

    /// Random-walk Metropolis draws from `π(z|y)`.
    ///
    /// The chain starts at the MAP point; proposals are `z + s·L·ε` with `L`
    /// the Cholesky factor of the Gauss–Newton posterior covariance
    /// `(σ⁻² JᵀAᵀAJ + I)⁻¹` at the start. During a burn-in of
    /// `n_samples / 5` steps the scale `s` is adapted toward 25% acceptance;
    /// the following `n_samples` states are returned.
    pub fn posterior_samples(&self, y: &DVector<f64>, n_samples: usize, seed: u64) -> Result<Vec<DVector<f64>>> {
        if n_samples == 0 {
            return Err(Error::InvalidArgument("n_samples must be >= 1".into()));
        }
        let opts = LatentOptions::default();
        let start = self.estimate(y, &LatentInit::LeastSquares, &opts)?.z;
        let p = start.len();

        let jac = self.net.jacobian(&start)?;
        let aj = self.model.a() * &jac;
        let mut precision = aj.tr_mul(&aj) / self.model.sigma2();
        for i in 0..p {
            precision[(i, i)] += 1.0;
        }
        let prop_cov = spd_factor(&precision)?.inverse();
        let chol = spd_factor(&prop_cov)?;
        let l = chol.l();

        let mut rng = seeded(seed);
        let mut scale = 2.38 / (p as f64).sqrt();
        let mut z = start;
        let mut logp = self.log_density(&z, y)?;
        let burn_in = n_samples / 5;
        let mut samples = Vec::with_capacity(n_samples);
        for step in 0..burn_in + n_samples {
            let prop = &z + &l * standard_normal_vec(&mut rng, p) * scale;
            let lp = self.log_density(&prop, y)?;
            let u: f64 = rng.random();
            let accepted = lp.is_finite() && u.ln() < lp - logp;
            if accepted {
                z = prop;
                logp = lp;
            }
            if step < burn_in {
                let target = if accepted { 1.0 } else { 0.0 };
                scale *= ((target - 0.25) / ((step + 1) as f64).sqrt()).exp();
            } else {
                samples.push(z.clone());
            }
        }
        Ok(samples)
    }

    /// `(1/N) Σ g(zᵢ)` over [`LatentPosterior::posterior_samples`].
    pub fn posterior_mean(&self, y: &DVector<f64>, n_samples: usize, seed: u64) -> Result<DVector<f64>> {
        let samples = self.posterior_samples(y, n_samples, seed)?;
        let mut acc = DVector::zeros(self.net.output_dim());
        for z in &samples {
            acc += self.net.g_mean(z)?;
        }
        Ok(acc / samples.len() as f64)
    }
}

/// `Č = J (σ⁻² Jᵀ AᵀA J)⁻¹ Jᵀ` at `z*`.
pub fn latent_asymptotic_cov(
    net: &GeneratorNet,
    a: &DMatrix<f64>,
    sigma2: f64,
    z_star: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    if !(sigma2 > 0.0) {
        return Err(Error::InvalidArgument("sigma2 must be positive".into()));
    }
    check_len("operator columns", net.output_dim(), a.ncols())?;
    let jac = net.jacobian(z_star)?;
    let aj = a * &jac;
    if numerical_rank(&aj, 1e-12) < jac.ncols() {
        return Err(Error::Numerical(
            "Jᵀ AᵀA J is singular: model not identifiable at z*".into(),
        ));
    }
    let fisher = aj.tr_mul(&aj) / sigma2;
    let chol = strict_factor(&fisher).ok_or_else(|| {
        Error::Numerical("Jᵀ AᵀA J is singular: model not identifiable at z*".into())
    })?;
    let inner = chol.solve(&jac.transpose());
    Ok(crate::linalg::symmetrize(&(&jac * inner)))
}
