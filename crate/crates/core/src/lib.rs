//! Bayesian inversion of linear Gaussian models `y = Ax + ε` with a
//! probabilistic generative model as prior.
//!
//! Two estimators are provided:
//!
//! * **latent** ([`latent`]): MAP in the generator's latent space, pushed
//!   through the mean map `g`. Restricted to the generator's image.
//! * **Laplace** ([`laplace`]): the generator's marginal prior `π(x)` is
//!   replaced by a Gaussian obtained by linearizing `g` at an expansion
//!   point `z₀`, which makes the posterior over `x` Gaussian in closed form.
//!
//! [`baselines`] holds the oracle-tuned Tikhonov reference and the virtual-data
//! guide for choosing between the two; [`experiments`] runs the deblurring
//! sweeps and writes CSV results and SVG reports.

pub mod baselines;
pub mod error;
pub mod experiments;
pub mod forward_model;
pub mod gaussian;
pub mod generator;
pub mod laplace;
pub mod latent;
pub mod linalg;
pub mod optim;
pub mod prior_oracle;
pub mod rng;
pub mod synthetic;
pub mod unknown_variance;

pub use error::{Error, Result};
pub use forward_model::{build_blur, observe, observe_with_sigma, psnr, BlurOperator, LinearModel};
pub use gaussian::{Covariance, GaussianDist};
pub use generator::{CovHead, CovVariant, GeneratorNet, LatentPrior, Network};
pub use laplace::{LaplacePosterior, LaplacePrior};
pub use latent::LatentPosterior;
