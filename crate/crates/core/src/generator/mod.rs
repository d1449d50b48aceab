//! Probabilistic generator `x | z ~ N(g(z), Γ(z))`, `z ~ N(0, I)`.
//!
//! The mean map, the covariance head and the optional encoder are stacks of
//! dense affine layers and smooth pointwise activations. Jacobians are
//! propagated layer by layer in forward mode.

mod weights;

pub use weights::{load_weights, parse_weights, save_weights, to_weights_string};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::gaussian::{Covariance, GaussianDist};
use crate::linalg::{sigmoid, softplus};
use crate::optim::fd_gradient;
use crate::rng::{seeded, standard_normal_vec};

pub const DEFAULT_EPS_GAMMA: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Sigmoid,
    Softplus,
}

impl Activation {
    pub fn value(self, t: f64) -> f64 {
        match self {
            Activation::Tanh => t.tanh(),
            Activation::Sigmoid => sigmoid(t),
            Activation::Softplus => softplus(t),
        }
    }

    pub fn derivative(self, t: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let th = t.tanh();
                1.0 - th * th
            }
            Activation::Sigmoid => {
                let s = sigmoid(t);
                s * (1.0 - s)
            }
            Activation::Softplus => sigmoid(t),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense { w: DMatrix<f64>, b: DVector<f64> },
    Activation(Activation),
}

impl Layer {
    pub fn dense(w: DMatrix<f64>, b: DVector<f64>) -> Self {
        Layer::Dense { w, b }
    }
}

/// A validated layer stack with known input and output widths.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
    input_dim: usize,
    output_dim: usize,
}

impl Network {
    pub fn new(layers: Vec<Layer>, input_dim: usize) -> Result<Self> {
        let mut width = input_dim;
        for (idx, layer) in layers.iter().enumerate() {
            if let Layer::Dense { w, b } = layer {
                if w.ncols() != width {
                    return Err(Error::Validation(format!(
                        "layer {idx}: dense layer expects input width {}, previous width is {width}",
                        w.ncols()
                    )));
                }
                if b.len() != w.nrows() {
                    return Err(Error::Validation(format!(
                        "layer {idx}: bias has {} entries, weight has {} rows",
                        b.len(),
                        w.nrows()
                    )));
                }
                if w.iter().chain(b.iter()).any(|v| !v.is_finite()) {
                    return Err(Error::Validation(format!("layer {idx}: non-finite parameter")));
                }
                width = w.nrows();
            }
        }
        Ok(Self {
            layers,
            input_dim,
            output_dim: width,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn forward(&self, input: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("network input", self.input_dim, input.len())?;
        let mut h = input.clone();
        for layer in &self.layers {
            h = match layer {
                Layer::Dense { w, b } => w * &h + b,
                Layer::Activation(act) => h.map(|t| act.value(t)),
            };
        }
        Ok(h)
    }

    /// Output and Jacobian `∂out/∂in` (output_dim × input_dim).
    pub fn forward_jacobian(&self, input: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        check_len("network input", self.input_dim, input.len())?;
        let mut h = input.clone();
        let mut jac = DMatrix::<f64>::identity(self.input_dim, self.input_dim);
        for layer in &self.layers {
            match layer {
                Layer::Dense { w, b } => {
                    h = w * &h + b;
                    jac = w * jac;
                }
                Layer::Activation(act) => {
                    for (i, mut row) in jac.row_iter_mut().enumerate() {
                        row *= act.derivative(h[i]);
                    }
                    h = h.map(|t| act.value(t));
                }
            }
        }
        Ok((h, jac))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovVariant {
    Isotropic,
    Diagonal,
    Full,
}

impl CovVariant {
    /// Number of raw head outputs for a `d`-dimensional covariance.
    pub fn raw_len(self, d: usize) -> usize {
        match self {
            CovVariant::Isotropic => 1,
            CovVariant::Diagonal => d,
            CovVariant::Full => d * (d + 1) / 2,
        }
    }
}

/// Maps `z` to raw parameters and then to an SPD `Γ(z)`:
/// `softplus(raw) + ε` for isotropic/diagonal, `L·Lᵀ + ε·I` for full, with `L`
/// the row-major lower triangle of the raw output.
#[derive(Debug, Clone, PartialEq)]
pub struct CovHead {
    variant: CovVariant,
    net: Network,
    eps_gamma: f64,
}

impl CovHead {
    pub fn new(variant: CovVariant, net: Network, eps_gamma: f64, output_dim: usize) -> Result<Self> {
        if !(eps_gamma > 0.0) || !eps_gamma.is_finite() {
            return Err(Error::Validation(format!(
                "cov_head: eps_gamma must be positive, got {eps_gamma}"
            )));
        }
        let expected = variant.raw_len(output_dim);
        if net.output_dim() != expected {
            return Err(Error::Validation(format!(
                "cov_head: {variant:?} head must emit {expected} raw values, emits {}",
                net.output_dim()
            )));
        }
        Ok(Self {
            variant,
            net,
            eps_gamma,
        })
    }

    /// Head with constant raw output (zero weights, bias `raw`).
    pub fn constant(variant: CovVariant, raw: DVector<f64>, latent_dim: usize, output_dim: usize, eps_gamma: f64) -> Result<Self> {
        let w = DMatrix::zeros(raw.len(), latent_dim);
        let net = Network::new(vec![Layer::dense(w, raw)], latent_dim)?;
        Self::new(variant, net, eps_gamma, output_dim)
    }

    pub fn variant(&self) -> CovVariant {
        self.variant
    }

    pub fn eps_gamma(&self) -> f64 {
        self.eps_gamma
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    fn covariance_from_raw(&self, raw: &DVector<f64>, d: usize) -> Covariance {
        match self.variant {
            CovVariant::Isotropic => Covariance::Isotropic {
                variance: softplus(raw[0]) + self.eps_gamma,
                dim: d,
            },
            CovVariant::Diagonal => Covariance::Diagonal(raw.map(|t| softplus(t) + self.eps_gamma)),
            CovVariant::Full => {
                let mut l = DMatrix::zeros(d, d);
                let mut k = 0;
                for i in 0..d {
                    for j in 0..=i {
                        l[(i, j)] = raw[k];
                        k += 1;
                    }
                }
                let mut m = &l * l.transpose();
                for i in 0..d {
                    m[(i, i)] += self.eps_gamma;
                }
                Covariance::Full(m)
            }
        }
    }
}

/// Standard normal prior on the latent space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatentPrior {
    pub dim: usize,
}

impl LatentPrior {
    /// Log density up to the additive constant.
    pub fn log_density(&self, z: &DVector<f64>) -> f64 {
        -0.5 * z.norm_squared()
    }

    pub fn sample(&self, seed: u64) -> DVector<f64> {
        standard_normal_vec(&mut seeded(seed), self.dim)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorNet {
    latent_dim: usize,
    output_dim: usize,
    mean: Network,
    cov_head: CovHead,
    encoder: Option<Network>,
}

impl GeneratorNet {
    pub fn new(mean: Network, cov_head: CovHead, encoder: Option<Network>) -> Result<Self> {
        let latent_dim = mean.input_dim();
        let output_dim = mean.output_dim();
        if latent_dim == 0 || output_dim == 0 {
            return Err(Error::Validation("mean_layers: dimensions must be positive".into()));
        }
        if cov_head.net.input_dim() != latent_dim {
            return Err(Error::Validation(format!(
                "cov_head: input width {} differs from latent_dim {latent_dim}",
                cov_head.net.input_dim()
            )));
        }
        if cov_head.variant.raw_len(output_dim) != cov_head.net.output_dim() {
            return Err(Error::Validation("cov_head: output width does not match output_dim".into()));
        }
        if let Some(enc) = &encoder {
            if enc.input_dim() != output_dim || enc.output_dim() != latent_dim {
                return Err(Error::Validation(format!(
                    "encoder: maps {} -> {}, expected {output_dim} -> {latent_dim}",
                    enc.input_dim(),
                    enc.output_dim()
                )));
            }
        }
        Ok(Self {
            latent_dim,
            output_dim,
            mean,
            cov_head,
            encoder,
        })
    }

    /// Affine mean `Wz + b` with constant isotropic covariance `γ·I`
    /// (`γ` must exceed `eps_gamma`).
    pub fn affine(w: DMatrix<f64>, b: DVector<f64>, gamma: f64, eps_gamma: f64) -> Result<Self> {
        let (d, p) = w.shape();
        if !(gamma > eps_gamma) {
            return Err(Error::InvalidArgument("gamma must exceed eps_gamma".into()));
        }
        let raw = inverse_softplus(gamma - eps_gamma);
        let mean = Network::new(vec![Layer::dense(w, b)], p)?;
        let head = CovHead::constant(CovVariant::Isotropic, DVector::from_element(1, raw), p, d, eps_gamma)?;
        Self::new(mean, head, None)
    }

    pub fn with_encoder(mut self, encoder: Network) -> Result<Self> {
        self.encoder = Some(encoder);
        Self::new(self.mean, self.cov_head, self.encoder)
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn mean_network(&self) -> &Network {
        &self.mean
    }

    pub fn cov_head(&self) -> &CovHead {
        &self.cov_head
    }

    pub fn encoder(&self) -> Option<&Network> {
        self.encoder.as_ref()
    }

    pub fn latent_prior(&self) -> LatentPrior {
        LatentPrior { dim: self.latent_dim }
    }

    pub fn g_mean(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        check_finite(z)?;
        self.mean.forward(z)
    }

    pub fn gamma(&self, z: &DVector<f64>) -> Result<Covariance> {
        check_finite(z)?;
        let raw = self.cov_head.net.forward(z)?;
        Ok(self.cov_head.covariance_from_raw(&raw, self.output_dim))
    }

    pub fn jacobian(&self, z: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(self.mean_and_jacobian(z)?.1)
    }

    pub fn mean_and_jacobian(&self, z: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        check_finite(z)?;
        self.mean.forward_jacobian(z)
    }

    pub fn encoder_mean(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        match &self.encoder {
            Some(enc) => enc.forward(x),
            None => Err(Error::Unsupported("generator has no encoder".into())),
        }
    }

    /// Draws `z ~ N(0, I)` and then `x ~ N(g(z), Γ(z))`.
    pub fn sample_prior_draw(&self, seed: u64) -> Result<DVector<f64>> {
        let mut rng = seeded(seed);
        let z = standard_normal_vec(&mut rng, self.latent_dim);
        let dist = GaussianDist::new(self.g_mean(&z)?, self.gamma(&z)?)?;
        Ok(dist.sample(&mut rng))
    }

    /// `log N(x | g(z), Γ(z)) + log N(z | 0, I)` without the `2π` constants.
    pub fn log_joint(&self, x: &DVector<f64>, z: &DVector<f64>) -> Result<f64> {
        check_len("x", self.output_dim, x.len())?;
        let gamma = self.gamma(z)?;
        let r = x - self.g_mean(z)?;
        Ok(-0.5 * (gamma.log_det()? + z.norm_squared() + gamma.quad_form(&r)?))
    }

    /// Gradient of [`GeneratorNet::log_joint`] with respect to `z`.
    ///
    /// Analytic for isotropic and diagonal heads; central differences for
    /// full heads.
    pub fn log_joint_grad(&self, x: &DVector<f64>, z: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("x", self.output_dim, x.len())?;
        let (g, jac) = self.mean_and_jacobian(z)?;
        let e = x - g;
        let (raw, raw_jac) = self.cov_head.net.forward_jacobian(z)?;
        let eps = self.cov_head.eps_gamma;
        let grad = match self.cov_head.variant {
            CovVariant::Isotropic => {
                let gam = softplus(raw[0]) + eps;
                let d = self.output_dim as f64;
                let coef = -0.5 * sigmoid(raw[0]) * (d / gam - e.norm_squared() / (gam * gam));
                jac.tr_mul(&e) / gam + raw_jac.row(0).transpose() * coef - z
            }
            CovVariant::Diagonal => {
                let gam = raw.map(|t| softplus(t) + eps);
                let weighted = e.component_div(&gam);
                let coef = DVector::from_fn(raw.len(), |i, _| {
                    -0.5 * sigmoid(raw[i]) * (1.0 / gam[i] - e[i] * e[i] / (gam[i] * gam[i]))
                });
                jac.tr_mul(&weighted) + raw_jac.tr_mul(&coef) - z
            }
            CovVariant::Full => {
                let f = |v: &DVector<f64>| self.log_joint(x, v).unwrap_or(f64::NEG_INFINITY);
                fd_gradient(f, z, 1e-6)
            }
        };
        Ok(grad)
    }
}

fn check_finite(z: &DVector<f64>) -> Result<()> {
    if z.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidArgument("latent vector has non-finite entries".into()))
    }
}

/// `softplus⁻¹(v) = log(eᵛ − 1)` for `v > 0`.
pub fn inverse_softplus(v: f64) -> f64 {
    if v > 30.0 {
        v + (-(-v).exp()).ln_1p()
    } else {
        v.exp_m1().ln()
    }
}

#[cfg(test)]
mod tests;
