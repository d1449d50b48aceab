//! The linear Gaussian sampling model `y | x ~ N(Ax, σ²I)`, Gaussian blur
//! operators, synthetic observations and PSNR scoring.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};
use crate::linalg::strict_factor;
use crate::rng::{seeded, standard_normal_vec};

/// Operator `A` (n×d, n ≥ d, full column rank) together with the noise
/// variance σ².
#[derive(Debug, Clone)]
pub struct LinearModel {
    a: DMatrix<f64>,
    ata: DMatrix<f64>,
    sigma2: f64,
    condition: f64,
}

impl LinearModel {
    pub fn new(a: DMatrix<f64>, sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0) || !sigma2.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "noise variance must be positive and finite, got {sigma2}"
            )));
        }
        let (n, d) = a.shape();
        if d == 0 || n < d {
            return Err(Error::InvalidArgument(format!(
                "operator must satisfy n >= d >= 1, got {n}x{d}"
            )));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("operator has non-finite entries".into()));
        }
        let ata = a.tr_mul(&a);
        let chol = strict_factor(&ata)
            .ok_or_else(|| Error::InvalidArgument("operator is rank deficient".into()))?;
        // cond(A) estimated from the Cholesky diagonal of AᵀA.
        let l = chol.l_dirty();
        let diag: Vec<f64> = (0..d).map(|i| l[(i, i)].abs()).collect();
        let lo = diag.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = diag.iter().cloned().fold(0.0, f64::max);
        if !(lo > 1e-12 * hi) {
            return Err(Error::InvalidArgument("operator is rank deficient".into()));
        }
        Ok(Self {
            a,
            ata,
            sigma2,
            condition: hi / lo,
        })
    }

    /// Same operator, different noise variance.
    pub fn with_sigma2(&self, sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0) || !sigma2.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "noise variance must be positive and finite, got {sigma2}"
            )));
        }
        Ok(Self {
            sigma2,
            ..self.clone()
        })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    /// Cached `AᵀA`.
    pub fn ata(&self) -> &DMatrix<f64> {
        &self.ata
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt()
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn d(&self) -> usize {
        self.a.ncols()
    }

    /// Rough condition estimate of `A` taken from the Cholesky factor of AᵀA.
    pub fn condition_estimate(&self) -> f64 {
        self.condition
    }

    pub fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("x", self.d(), x.len())?;
        Ok(&self.a * x)
    }

    pub fn apply_adjoint(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("y", self.n(), y.len())?;
        Ok(self.a.tr_mul(y))
    }
}

/// Draws `y = Ax + σε` with the model's σ.
pub fn observe(model: &LinearModel, x: &DVector<f64>, seed: u64) -> Result<DVector<f64>> {
    observe_with_sigma(model.a(), x, model.sigma(), seed)
}

/// Draws `y = Ax + σε` for an explicit σ ≥ 0; `σ = 0` gives `Ax` exactly.
pub fn observe_with_sigma(
    a: &DMatrix<f64>,
    x: &DVector<f64>,
    sigma: f64,
    seed: u64,
) -> Result<DVector<f64>> {
    check_len("x", a.ncols(), x.len())?;
    if !(sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!("sigma must be >= 0, got {sigma}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("x has non-finite entries".into()));
    }
    let clean = a * x;
    if sigma == 0.0 {
        return Ok(clean);
    }
    let eps = standard_normal_vec(&mut seeded(seed), a.nrows());
    Ok(clean + eps * sigma)
}

/// `20·log10(L) − 10·log10(‖x − x̂‖²/d)`; `+∞` when the vectors coincide.
pub fn psnr(x: &DVector<f64>, xhat: &DVector<f64>, peak: f64) -> f64 {
    assert_eq!(x.len(), xhat.len(), "psnr: length mismatch");
    let mse = (x - xhat).norm_squared() / x.len() as f64;
    if mse == 0.0 {
        return f64::INFINITY;
    }
    20.0 * peak.log10() - 10.0 * mse.log10()
}

/// Gaussian blur on a `height × width` image with per-pixel renormalized
/// truncated kernel, realized as a dense `d × d` matrix (row-major pixels).
#[derive(Debug, Clone)]
pub struct BlurOperator {
    eta: f64,
    radius: usize,
    height: usize,
    width: usize,
    matrix: DMatrix<f64>,
}

pub const DEFAULT_BLUR_RADIUS: usize = 4;

fn kernel_weight(eta: f64, du: isize, dv: isize) -> f64 {
    (-eta * ((du * du + dv * dv) as f64) / 2.0).exp()
}

pub fn build_blur(eta: f64, height: usize, width: usize, radius: usize) -> Result<BlurOperator> {
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(Error::InvalidArgument(format!("eta must be positive, got {eta}")));
    }
    if height == 0 || width == 0 {
        return Err(Error::InvalidArgument("image dimensions must be positive".into()));
    }
    if radius == 0 {
        return Err(Error::InvalidArgument("blur radius must be >= 1".into()));
    }
    let d = height * width;
    let r = radius as isize;
    let mut matrix = DMatrix::zeros(d, d);
    for i in 0..height as isize {
        for j in 0..width as isize {
            let row = (i as usize) * width + j as usize;
            let mut total = 0.0;
            for du in -r..=r {
                for dv in -r..=r {
                    let (u, v) = (i + du, j + dv);
                    if u < 0 || v < 0 || u >= height as isize || v >= width as isize {
                        continue;
                    }
                    let w = kernel_weight(eta, du, dv);
                    matrix[(row, (u as usize) * width + v as usize)] = w;
                    total += w;
                }
            }
            for c in 0..d {
                matrix[(row, c)] /= total;
            }
        }
    }
    Ok(BlurOperator {
        eta,
        radius,
        height,
        width,
        matrix,
    })
}

impl BlurOperator {
    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_model(self, sigma2: f64) -> Result<LinearModel> {
        LinearModel::new(self.matrix, sigma2)
    }

    /// Applies the kernel by direct convolution, without the dense matrix.
    pub fn apply_kernel(&self, image: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("image", self.height * self.width, image.len())?;
        let r = self.radius as isize;
        let (h, w) = (self.height as isize, self.width as isize);
        let mut out = DVector::zeros(image.len());
        for i in 0..h {
            for j in 0..w {
                let (mut acc, mut total) = (0.0, 0.0);
                for du in -r..=r {
                    for dv in -r..=r {
                        let (u, v) = (i + du, j + dv);
                        if u < 0 || v < 0 || u >= h || v >= w {
                            continue;
                        }
                        let k = kernel_weight(self.eta, du, dv);
                        acc += k * image[(u * w + v) as usize];
                        total += k;
                    }
                }
                out[(i * w + j) as usize] = acc / total;
            }
        }
        Ok(out)
    }
}
