//! Multivariate normal with isotropic, diagonal or full covariance.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{check_len, Error, Result};
use crate::linalg::{chol_logdet, spd_factor, sym_eigenvalues};
use crate::rng::{standard_normal_vec, SeedRng};

#[derive(Debug, Clone, PartialEq)]
pub enum Covariance {
    Isotropic { variance: f64, dim: usize },
    Diagonal(DVector<f64>),
    Full(DMatrix<f64>),
}

impl Covariance {
    pub fn dim(&self) -> usize {
        match self {
            Covariance::Isotropic { dim, .. } => *dim,
            Covariance::Diagonal(v) => v.len(),
            Covariance::Full(m) => m.nrows(),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            Covariance::Isotropic { variance, dim } => DMatrix::identity(*dim, *dim) * *variance,
            Covariance::Diagonal(v) => DMatrix::from_diagonal(v),
            Covariance::Full(m) => m.clone(),
        }
    }

    pub fn min_eigenvalue(&self) -> f64 {
        match self {
            Covariance::Isotropic { variance, .. } => *variance,
            Covariance::Diagonal(v) => v.min(),
            Covariance::Full(m) => sym_eigenvalues(m)[0],
        }
    }

    pub fn log_det(&self) -> Result<f64> {
        Ok(match self {
            Covariance::Isotropic { variance, dim } => *dim as f64 * variance.ln(),
            Covariance::Diagonal(v) => v.iter().map(|x| x.ln()).sum(),
            Covariance::Full(m) => chol_logdet(&spd_factor(m)?),
        })
    }

    /// `Γ⁻¹ M` for a matrix right-hand side.
    pub fn solve_matrix(&self, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_len("covariance rhs rows", self.dim(), rhs.nrows())?;
        Ok(match self {
            Covariance::Isotropic { variance, .. } => rhs / *variance,
            Covariance::Diagonal(v) => {
                let mut out = rhs.clone();
                for (i, mut row) in out.row_iter_mut().enumerate() {
                    row /= v[i];
                }
                out
            }
            Covariance::Full(m) => spd_factor(m)?.solve(rhs),
        })
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("covariance rhs", self.dim(), rhs.len())?;
        Ok(match self {
            Covariance::Isotropic { variance, .. } => rhs / *variance,
            Covariance::Diagonal(v) => rhs.component_div(v),
            Covariance::Full(m) => spd_factor(m)?.solve(rhs),
        })
    }

    /// `vᵀ Γ⁻¹ v`.
    pub fn quad_form(&self, v: &DVector<f64>) -> Result<f64> {
        Ok(v.dot(&self.solve(v)?))
    }

    /// Dense `Γ⁻¹`.
    pub fn inverse(&self) -> Result<DMatrix<f64>> {
        Ok(match self {
            Covariance::Isotropic { variance, dim } => {
                DMatrix::identity(*dim, *dim) / *variance
            }
            Covariance::Diagonal(v) => DMatrix::from_diagonal(&v.map(|x| 1.0 / x)),
            Covariance::Full(m) => crate::linalg::spd_inverse(m)?,
        })
    }

    /// Adds `Γ` to a dense matrix in place.
    pub fn add_to(&self, m: &mut DMatrix<f64>) {
        match self {
            Covariance::Isotropic { variance, dim } => {
                for i in 0..*dim {
                    m[(i, i)] += variance;
                }
            }
            Covariance::Diagonal(v) => {
                for i in 0..v.len() {
                    m[(i, i)] += v[i];
                }
            }
            Covariance::Full(c) => *m += c,
        }
    }

    pub fn scaled(&self, c: f64) -> Covariance {
        match self {
            Covariance::Isotropic { variance, dim } => Covariance::Isotropic {
                variance: variance * c,
                dim: *dim,
            },
            Covariance::Diagonal(v) => Covariance::Diagonal(v * c),
            Covariance::Full(m) => Covariance::Full(m * c),
        }
    }
}

#[derive(Debug, Clone)]
enum Factor {
    Scalar(f64),
    Diagonal(DVector<f64>),
    Cholesky(Cholesky<f64, Dyn>),
}

/// `N(mean, cov)` with its factorization computed once at construction.
#[derive(Debug, Clone)]
pub struct GaussianDist {
    mean: DVector<f64>,
    cov: Covariance,
    factor: Factor,
    log_det: f64,
}

impl GaussianDist {
    pub fn new(mean: DVector<f64>, cov: Covariance) -> Result<Self> {
        check_len("covariance dimension", mean.len(), cov.dim())?;
        let (factor, log_det) = match &cov {
            Covariance::Isotropic { variance, dim } => {
                if !(*variance > 0.0) {
                    return Err(Error::InvalidArgument("variance must be positive".into()));
                }
                (Factor::Scalar(variance.sqrt()), *dim as f64 * variance.ln())
            }
            Covariance::Diagonal(v) => {
                if v.iter().any(|x| !(*x > 0.0)) {
                    return Err(Error::InvalidArgument("variances must be positive".into()));
                }
                (
                    Factor::Diagonal(v.map(f64::sqrt)),
                    v.iter().map(|x| x.ln()).sum(),
                )
            }
            Covariance::Full(m) => {
                let chol = spd_factor(m)?;
                let ld = chol_logdet(&chol);
                (Factor::Cholesky(chol), ld)
            }
        };
        Ok(Self {
            mean,
            cov,
            factor,
            log_det,
        })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &Covariance {
        &self.cov
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    fn whiten(&self, r: &DVector<f64>) -> DVector<f64> {
        match &self.factor {
            Factor::Scalar(s) => r / *s,
            Factor::Diagonal(s) => r.component_div(s),
            Factor::Cholesky(c) => {
                let mut out = r.clone();
                c.l_dirty()
                    .solve_lower_triangular_mut(&mut out);
                out
            }
        }
    }

    pub fn log_pdf(&self, x: &DVector<f64>) -> f64 {
        let w = self.whiten(&(x - &self.mean));
        -0.5 * (w.norm_squared() + self.log_det + self.dim() as f64 * (2.0 * PI).ln())
    }

    /// Gradient of `log_pdf` with respect to `x`.
    pub fn grad_log_pdf(&self, x: &DVector<f64>) -> DVector<f64> {
        let r = x - &self.mean;
        match &self.factor {
            Factor::Scalar(s) => -r / (s * s),
            Factor::Diagonal(s) => -r.component_div(&s.component_mul(s)),
            Factor::Cholesky(c) => -c.solve(&r),
        }
    }

    /// `mean + Γ^{1/2} ε` for a standard-normal `ε`.
    pub fn transform_standard(&self, eps: &DVector<f64>) -> DVector<f64> {
        let scaled = match &self.factor {
            Factor::Scalar(s) => eps * *s,
            Factor::Diagonal(s) => eps.component_mul(s),
            Factor::Cholesky(c) => c.l_dirty().lower_triangle() * eps,
        };
        &self.mean + scaled
    }

    pub fn sample(&self, rng: &mut SeedRng) -> DVector<f64> {
        let eps = standard_normal_vec(rng, self.dim());
        self.transform_standard(&eps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn log_pdf_agrees_across_representations() {
        let mean = DVector::from_vec(vec![0.1, -0.2, 0.3]);
        let x = DVector::from_vec(vec![0.5, 0.0, -1.0]);
        let v = DVector::from_vec(vec![0.5, 2.0, 1.5]);
        let diag = GaussianDist::new(mean.clone(), Covariance::Diagonal(v.clone())).unwrap();
        let full = GaussianDist::new(mean.clone(), Covariance::Full(DMatrix::from_diagonal(&v))).unwrap();
        assert!((diag.log_pdf(&x) - full.log_pdf(&x)).abs() < 1e-12);

        let iso = GaussianDist::new(mean.clone(), Covariance::Isotropic { variance: 1.0, dim: 3 }).unwrap();
        let expect = -0.5 * ((&x - &mean).norm_squared() + 3.0 * (2.0 * PI).ln());
        assert!((iso.log_pdf(&x) - expect).abs() < 1e-14);
    }

    #[test]
    fn empirical_covariance_of_samples() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 0.5]);
        let g = GaussianDist::new(DVector::zeros(2), Covariance::Full(m.clone())).unwrap();
        let mut rng = seeded(3);
        let n = 50_000;
        let mut acc = DMatrix::zeros(2, 2);
        for _ in 0..n {
            let s = g.sample(&mut rng);
            acc += &s * s.transpose();
        }
        acc /= n as f64;
        assert!((acc - m).norm() < 0.05);
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.7]);
        let g = GaussianDist::new(DVector::from_vec(vec![1.0, 2.0]), Covariance::Full(m)).unwrap();
        let x = DVector::from_vec(vec![0.2, 0.9]);
        let fd = crate::optim::fd_gradient(|v| g.log_pdf(v), &x, 1e-6);
        assert!((g.grad_log_pdf(&x) - fd).amax() < 1e-7);
    }
}
