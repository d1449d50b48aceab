//! Reference reconstructions and method selection.
//!
//! * Tikhonov regularization `argmin ‖Ax − y‖² + λ‖x‖²` with `λ` chosen by an
//!   oracle that knows the ground truth.
//! * The guide: each of the latent and Laplace estimates is treated as a
//!   virtual ground truth, re-observed, and re-inverted; the method that
//!   reproduces its own estimate more closely is selected.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::forward_model::{observe_with_sigma, LinearModel};
use crate::generator::GeneratorNet;
use crate::laplace::{laplace_fit, ExpansionOptions};
use crate::latent::{LatentInit, LatentOptions, LatentPosterior};
use crate::linalg::{spd_factor, strict_factor};

/// Solves `(AᵀA + λI) x = Aᵀy`.
pub fn l2_solve(a: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    check_len("y", a.nrows(), y.len())?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    let mut m = a.tr_mul(a);
    for i in 0..m.nrows() {
        m[(i, i)] += lambda;
    }
    let rhs = a.tr_mul(y);
    if lambda == 0.0 {
        let singular = || Error::Numerical("AᵀA is singular and lambda = 0".into());
        let chol = strict_factor(&m).ok_or_else(singular)?;
        // Pivots below round-off of the largest diagonal mean rank loss.
        let floor = m.nrows() as f64 * f64::EPSILON * m.diagonal().amax();
        if chol.l_dirty().diagonal().iter().any(|l| l * l <= floor) {
            return Err(singular());
        }
        return Ok(chol.solve(&rhs));
    }
    Ok(spd_factor(&m)?.solve(&rhs))
}

/// `logspace(1e-8, 1e2, 61)`: six points per decade.
pub fn default_lambda_grid() -> Vec<f64> {
    logspace(-8.0, 2.0, 61)
}

pub fn logspace(lo_exp: f64, hi_exp: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![10f64.powf(lo_exp)],
        _ => (0..n)
            .map(|k| 10f64.powf(lo_exp + (hi_exp - lo_exp) * k as f64 / (n - 1) as f64))
            .collect(),
    }
}

#[derive(Debug, Clone)]
pub struct L2Oracle {
    pub x: DVector<f64>,
    pub lambda: f64,
    /// `‖x − x_true‖₂` at the selected `λ`.
    pub error: f64,
    /// Error at every grid point, in grid order.
    pub errors: Vec<f64>,
}

/// Picks the grid `λ` whose Tikhonov solution is closest to `x_true`.
///
/// The scan diagonalizes `AᵀA` once; the returned solution is recomputed
/// with [`l2_solve`]. Ties go to the earlier grid point.
pub fn l2_oracle(a: &DMatrix<f64>, y: &DVector<f64>, x_true: &DVector<f64>, grid: &[f64]) -> Result<L2Oracle> {
    check_len("x_true", a.ncols(), x_true.len())?;
    check_len("y", a.nrows(), y.len())?;
    if grid.is_empty() {
        return Err(Error::InvalidArgument("lambda grid is empty".into()));
    }
    let eig = SymmetricEigen::new(a.tr_mul(a));
    let aty = eig.eigenvectors.tr_mul(&a.tr_mul(y));
    let truth = eig.eigenvectors.tr_mul(x_true);
    let mut errors = Vec::with_capacity(grid.len());
    for &lambda in grid {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("bad lambda {lambda} in grid")));
        }
        let mut err2 = 0.0;
        for i in 0..aty.len() {
            let denom = eig.eigenvalues[i] + lambda;
            let coef = if denom > 0.0 { aty[i] / denom } else { f64::INFINITY };
            err2 += (coef - truth[i]).powi(2);
        }
        errors.push(err2.sqrt());
    }
    let best = errors
        .iter()
        .enumerate()
        .fold(0, |b, (i, e)| if *e < errors[b] { i } else { b });
    let x = l2_solve(a, y, grid[best])?;
    Ok(L2Oracle {
        error: (&x - x_true).norm(),
        x,
        lambda: grid[best],
        errors,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GuideChoice {
    Laplace,
    Latent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VirtualNoise {
    /// `y_m = A x_m + σε` with fresh seeded noise at the original σ.
    Fresh,
    /// `y_m = A x_m`.
    Noiseless,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuideOptions {
    pub virtual_noise: VirtualNoise,
    /// Re-invert each virtual truth with the other method; the error is
    /// charged to the method doing the re-inversion.
    pub cross_validated: bool,
    pub laplace: ExpansionOptions,
    pub latent: LatentOptions,
}

impl Default for GuideOptions {
    fn default() -> Self {
        Self {
            virtual_noise: VirtualNoise::Fresh,
            cross_validated: false,
            laplace: ExpansionOptions::default(),
            latent: LatentOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GuideVerdict {
    pub chosen: GuideChoice,
    /// Squared re-inversion error charged to the Laplace method.
    pub err_laplace: f64,
    pub err_latent: f64,
    pub virtual_seed: u64,
    pub x_laplace: DVector<f64>,
    pub x_latent: DVector<f64>,
}

impl GuideVerdict {
    pub fn estimate(&self) -> &DVector<f64> {
        match self.chosen {
            GuideChoice::Laplace => &self.x_laplace,
            GuideChoice::Latent => &self.x_latent,
        }
    }
}

/// Laplace posterior mean.
pub fn laplace_estimate(model: &LinearModel, y: &DVector<f64>, net: &GeneratorNet, opts: &ExpansionOptions) -> Result<DVector<f64>> {
    Ok(laplace_fit(model, y, net, opts)?.posterior.mean)
}

/// `g(z_MAP)` started from the least-squares initialization.
pub fn latent_estimate(model: &LinearModel, y: &DVector<f64>, net: &GeneratorNet, opts: &LatentOptions) -> Result<DVector<f64>> {
    Ok(LatentPosterior::new(model, net)?
        .estimate(y, &LatentInit::LeastSquares, opts)?
        .x)
}

/// Runs both methods on `y`, then [`guide_from_estimates`].
pub fn guide(model: &LinearModel, y: &DVector<f64>, net: &GeneratorNet, opts: &GuideOptions, seed: u64) -> Result<GuideVerdict> {
    let x_laplace = laplace_estimate(model, y, net, &opts.laplace)?;
    let x_latent = latent_estimate(model, y, net, &opts.latent)?;
    guide_from_estimates(model, net, x_laplace, x_latent, opts, seed)
}

/// The guide for precomputed estimates. Both virtual observations share the
/// noise draw seeded by `seed`; ties go to Laplace.
pub fn guide_from_estimates(
    model: &LinearModel,
    net: &GeneratorNet,
    x_laplace: DVector<f64>,
    x_latent: DVector<f64>,
    opts: &GuideOptions,
    seed: u64,
) -> Result<GuideVerdict> {
    let sigma = match opts.virtual_noise {
        VirtualNoise::Fresh => model.sigma(),
        VirtualNoise::Noiseless => 0.0,
    };
    let y_laplace = observe_with_sigma(model.a(), &x_laplace, sigma, seed)?;
    let y_latent = observe_with_sigma(model.a(), &x_latent, sigma, seed)?;

    let (err_laplace, err_latent) = if opts.cross_validated {
        let by_laplace = laplace_estimate(model, &y_latent, net, &opts.laplace)?;
        let by_latent = latent_estimate(model, &y_laplace, net, &opts.latent)?;
        ((by_laplace - &x_latent).norm_squared(), (by_latent - &x_laplace).norm_squared())
    } else {
        let by_laplace = laplace_estimate(model, &y_laplace, net, &opts.laplace)?;
        let by_latent = latent_estimate(model, &y_latent, net, &opts.latent)?;
        ((by_laplace - &x_laplace).norm_squared(), (by_latent - &x_latent).norm_squared())
    };
    let chosen = if err_latent < err_laplace {
        GuideChoice::Latent
    } else {
        GuideChoice::Laplace
    };
    Ok(GuideVerdict {
        chosen,
        err_laplace,
        err_latent,
        virtual_seed: seed,
        x_laplace,
        x_latent,
    })
}
