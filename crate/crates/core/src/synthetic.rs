//! Seeded generators and ground truths that ship with the crate, so every
//! experiment and check runs without external data or a trained model.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::forward_model::{build_blur, BlurOperator, DEFAULT_BLUR_RADIUS};
use crate::generator::{inverse_softplus, Activation, CovHead, CovVariant, GeneratorNet, Layer, Network};
use crate::linalg::sorted_singular_values;
use crate::rng::{derive_seed, seeded, standard_normal_vec, SeedRng};

fn gaussian_matrix(rng: &mut SeedRng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| {
        let v: f64 = StandardNormal.sample(rng);
        v * scale
    })
}

fn gaussian_vector(rng: &mut SeedRng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| {
        let v: f64 = StandardNormal.sample(rng);
        v * scale
    })
}

/// Affine generator `g(z) = Wz + b` with constant `Γ = γ·I`.
pub fn affine_generator(p: usize, d: usize, gamma: f64, seed: u64) -> Result<GeneratorNet> {
    let mut rng = seeded(seed);
    let w = gaussian_matrix(&mut rng, d, p, 1.0 / (p as f64).sqrt());
    let b = gaussian_vector(&mut rng, d, 0.5);
    GeneratorNet::affine(w, b, gamma, gamma.min(1e-4) * 0.5)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlpSpec {
    pub latent_dim: usize,
    pub hidden: usize,
    pub output_dim: usize,
    /// Scale of the first layer's weights (controls curvature).
    pub input_scale: f64,
    pub output_scale: f64,
    pub output_activation: Option<Activation>,
    pub cov_variant: CovVariant,
    /// Typical value of Γ's entries.
    pub gamma: f64,
    pub eps_gamma: f64,
    /// Weight scale of the covariance head (0 gives a constant Γ).
    pub cov_scale: f64,
}

impl MlpSpec {
    pub fn tanh(latent_dim: usize, hidden: usize, output_dim: usize) -> Self {
        Self {
            latent_dim,
            hidden,
            output_dim,
            input_scale: 1.0,
            output_scale: 1.0,
            output_activation: None,
            cov_variant: CovVariant::Diagonal,
            gamma: 0.05,
            eps_gamma: 1e-4,
            cov_scale: 0.3,
        }
    }
}

/// `g(z) = act(W₂ tanh(W₁z + b₁) + b₂)` with a one-layer covariance head.
pub fn mlp_generator(spec: &MlpSpec, seed: u64) -> Result<GeneratorNet> {
    let mut rng = seeded(seed);
    let (p, h, d) = (spec.latent_dim, spec.hidden, spec.output_dim);
    let w1 = gaussian_matrix(&mut rng, h, p, spec.input_scale / (p as f64).sqrt());
    let b1 = gaussian_vector(&mut rng, h, 0.5);
    let w2 = gaussian_matrix(&mut rng, d, h, spec.output_scale / (h as f64).sqrt());
    let b2 = gaussian_vector(&mut rng, d, 0.3);
    let mut layers = vec![
        Layer::dense(w1, b1),
        Layer::Activation(Activation::Tanh),
        Layer::dense(w2, b2),
    ];
    if let Some(act) = spec.output_activation {
        layers.push(Layer::Activation(act));
    }
    let mean = Network::new(layers, p)?;

    let raw_len = spec.cov_variant.raw_len(d);
    let base = match spec.cov_variant {
        CovVariant::Full => {
            // Diagonal of L near sqrt(γ), strict lower triangle small.
            let mut v = DVector::zeros(raw_len);
            let mut k = 0;
            for i in 0..d {
                for j in 0..=i {
                    v[k] = if i == j { spec.gamma.sqrt() } else { 0.0 };
                    k += 1;
                }
            }
            v
        }
        _ => DVector::from_element(raw_len, inverse_softplus(spec.gamma)),
    };
    let wc = gaussian_matrix(&mut rng, raw_len, p, spec.cov_scale / (p as f64).sqrt());
    let head_net = Network::new(vec![Layer::dense(wc, base)], p)?;
    let head = CovHead::new(spec.cov_variant, head_net, spec.eps_gamma, d)?;
    GeneratorNet::new(mean, head, None)
}

/// Side length of the bundled suite's square images.
pub const SUITE_SIDE: usize = 8;
const SUITE_GENERATOR_SEED: u64 = 2024;

/// Generator of the bundled deblurring suite: `ℝ⁴ → [0,1]⁶⁴` through 16
/// strongly curved tanh units and a sigmoid output, with `Γ(z)` diagonal
/// around `1e-5`.
pub fn suite_generator() -> Result<GeneratorNet> {
    let spec = MlpSpec {
        input_scale: 2.0,
        output_scale: 3.0,
        output_activation: Some(Activation::Sigmoid),
        gamma: 1e-5,
        eps_gamma: 1e-6,
        cov_scale: 0.3,
        ..MlpSpec::tanh(4, 16, SUITE_SIDE * SUITE_SIDE)
    };
    mlp_generator(&spec, SUITE_GENERATOR_SEED)
}

/// Ground truths `g(zᵢ) + τ εᵢ` with `zᵢ ~ N(0, I)` and white `εᵢ`, each
/// seeded by `derive_seed(seed, [i])`. `τ = 0` gives on-manifold truths.
pub fn suite_truths(net: &GeneratorNet, count: usize, off_manifold: f64, seed: u64) -> Result<Vec<DVector<f64>>> {
    (0..count)
        .map(|i| {
            let mut rng = seeded(derive_seed(seed, &[i as u64]));
            let z = standard_normal_vec(&mut rng, net.latent_dim());
            let noise = standard_normal_vec(&mut rng, net.output_dim());
            Ok(net.g_mean(&z)? + noise * off_manifold)
        })
        .collect()
}

/// A truth at a certified distance from the generator's mean image.
#[derive(Debug, Clone)]
pub struct ConsistencyInstance {
    pub net: GeneratorNet,
    pub blur: BlurOperator,
    pub x: DVector<f64>,
    /// Latent point the truth was built from.
    pub z_source: DVector<f64>,
    /// Certified lower bound on `inf_z ‖x − g(z)‖` (zero on-manifold).
    pub delta: f64,
}

const CONSISTENCY_SEED: u64 = 1;
const CONSISTENCY_OFFSET: f64 = 0.1;

/// `ℝ² → [0,1]¹⁶` generator whose hidden layer has width 2, so its image is
/// `h((−1,1)²)` with `h(u) = sigmoid(W₂u + b₂)`.
fn consistency_generator() -> Result<GeneratorNet> {
    let spec = MlpSpec {
        input_scale: 1.5,
        output_scale: 3.0,
        output_activation: Some(Activation::Sigmoid),
        gamma: 1e-3,
        eps_gamma: 1e-4,
        cov_scale: 0.3,
        ..MlpSpec::tanh(2, 2, 16)
    };
    mlp_generator(&spec, CONSISTENCY_SEED)
}

fn consistency_instance(offset: f64, certify: bool) -> Result<ConsistencyInstance> {
    let net = consistency_generator()?;
    let z_source = DVector::from_vec(vec![0.6, -0.4]);
    let dir = standard_normal_vec(&mut seeded(5), 16).normalize();
    let x = net.g_mean(&z_source)? + dir * offset;
    let delta = if certify { certified_distance(&net, &x, 2001)? } else { 0.0 };
    Ok(ConsistencyInstance {
        net,
        blur: build_blur(3.0, 4, 4, DEFAULT_BLUR_RADIUS)?,
        x,
        z_source,
        delta,
    })
}

/// 4×4 deblurring instance whose truth lies off the generator's image.
pub fn off_manifold_instance() -> Result<ConsistencyInstance> {
    consistency_instance(CONSISTENCY_OFFSET, true)
}

/// Same generator and blur, truth `g(z_source)`.
pub fn on_manifold_instance() -> Result<ConsistencyInstance> {
    consistency_instance(0.0, false)
}

/// Lower bound on `inf_z ‖x − g(z)‖` for generators of the form
/// `act(W₂ tanh(W₁z + b₁) + b₂)` with square invertible `W₁` and a sigmoid
/// or absent output activation.
///
/// Since `z ↦ tanh(W₁z + b₁)` maps onto `(−1,1)ᵖ`, the image is `h` of the
/// open cube. A `grid × … × grid` lattice on the closed cube with spacing `Δ`
/// bounds the infimum by `min_lattice ‖x − h(u)‖ − L·Δ·√p/2`, where `L` is a
/// Lipschitz constant of `h` (`‖W₂‖₂/4` for sigmoid, `‖W₂‖₂` otherwise).
pub fn certified_distance(net: &GeneratorNet, x: &DVector<f64>, grid: usize) -> Result<f64> {
    let unsupported = || Error::Unsupported("certified_distance needs dense-tanh-dense[-sigmoid] with square W₁".into());
    let layers = net.mean_network().layers();
    let (w1, w2, b2, sigmoid) = match layers {
        [Layer::Dense { w: w1, .. }, Layer::Activation(Activation::Tanh), Layer::Dense { w: w2, b: b2 }] => (w1, w2, b2, false),
        [Layer::Dense { w: w1, .. }, Layer::Activation(Activation::Tanh), Layer::Dense { w: w2, b: b2 }, Layer::Activation(Activation::Sigmoid)] => {
            (w1, w2, b2, true)
        }
        _ => return Err(unsupported()),
    };
    let p = w1.ncols();
    if w1.nrows() != p || grid < 2 || p > 3 {
        return Err(unsupported());
    }
    let sv = sorted_singular_values(w1);
    if sv[p - 1] <= 1e-12 * sv[0] {
        return Err(unsupported());
    }
    let spacing = 2.0 / (grid - 1) as f64;
    let lipschitz = sorted_singular_values(w2)[0] * if sigmoid { 0.25 } else { 1.0 };
    let total = grid.pow(p as u32);
    let mut best = f64::INFINITY;
    let mut u = DVector::zeros(p);
    for k in 0..total {
        let mut rem = k;
        for i in 0..p {
            u[i] = -1.0 + spacing * (rem % grid) as f64;
            rem /= grid;
        }
        let mut out = w2 * &u + b2;
        if sigmoid {
            out.apply(|v| *v = crate::linalg::sigmoid(*v));
        }
        best = best.min((x - out).norm());
    }
    Ok((best - lipschitz * spacing * (p as f64).sqrt() / 2.0).max(0.0))
}

const ORACLE_OPERATOR: [f64; 9] = [1.0, 0.3, 0.0, 0.0, 1.0, 0.3, 0.2, 0.0, 1.0];

/// Two-latent, three-output tanh generator with a wide constant `Γ` and a
/// mixing operator. Curved enough that `g` is visibly nonlinear over the
/// prior's bulk, mild enough that the Laplace posterior mean agrees with the
/// exact one at the resolution of 10⁵ importance samples.
pub fn oracle_instance() -> Result<(GeneratorNet, DMatrix<f64>)> {
    let spec = MlpSpec {
        input_scale: 0.5,
        gamma: 0.5,
        cov_scale: 0.0,
        ..MlpSpec::tanh(2, 6, 3)
    };
    Ok((mlp_generator(&spec, 77)?, DMatrix::from_row_slice(3, 3, &ORACLE_OPERATOR)))
}

/// Same shape with a narrow, z-dependent `Γ`; here the Laplace mean is off
/// the exact posterior mean by many Monte-Carlo standard errors.
pub fn curved_oracle_instance() -> Result<(GeneratorNet, DMatrix<f64>)> {
    let spec = MlpSpec {
        gamma: 0.05,
        cov_scale: 0.3,
        ..MlpSpec::tanh(2, 6, 3)
    };
    Ok((mlp_generator(&spec, 77)?, DMatrix::from_row_slice(3, 3, &ORACLE_OPERATOR)))
}
