//! Dense BFGS with a backtracking (Armijo) line search.
//!
//! Minimizes; callers maximizing a log-density pass its negation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg::inf_norm;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BfgsOptions {
    /// Stop once the gradient ∞-norm drops below this.
    pub grad_tol: f64,
    pub max_iter: usize,
    /// Armijo sufficient-decrease constant.
    pub armijo: f64,
    pub max_backtracks: usize,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            grad_tol: 1e-8,
            max_iter: 500,
            armijo: 1e-4,
            max_backtracks: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub iterations: usize,
    pub grad_norm: f64,
    pub value: f64,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: DVector<f64>,
    pub diagnostics: Diagnostics,
}

/// Minimizes `f`, which returns the objective value and its gradient.
///
/// Non-convergence is reported in the diagnostics; the best point seen is
/// always returned.
pub fn minimize<F>(mut f: F, x0: &DVector<f64>, opts: &BfgsOptions) -> Minimum
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
{
    let n = x0.len();
    let mut x = x0.clone();
    let (mut fx, mut gx) = f(&x);
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut fresh_h = true;
    let mut iterations = 0;

    if !fx.is_finite() {
        return Minimum {
            x,
            diagnostics: Diagnostics {
                iterations,
                grad_norm: f64::INFINITY,
                value: fx,
                converged: false,
            },
        };
    }

    while iterations < opts.max_iter {
        if inf_norm(&gx) < opts.grad_tol {
            break;
        }
        let mut dir = -(&h * &gx);
        let mut slope = gx.dot(&dir);
        if !(slope < 0.0) {
            h = DMatrix::identity(n, n);
            fresh_h = true;
            dir = -gx.clone();
            slope = gx.dot(&dir);
        }
        // First step on an unscaled Hessian is capped to unit length.
        let mut step = if fresh_h {
            (1.0 / dir.norm()).min(1.0)
        } else {
            1.0
        };

        let mut accepted = None;
        for _ in 0..opts.max_backtracks {
            let cand = &x + &dir * step;
            let (fc, gc) = f(&cand);
            if fc.is_finite() && fc <= fx + opts.armijo * step * slope {
                accepted = Some((cand, fc, gc));
                break;
            }
            step *= 0.5;
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            if fresh_h {
                break;
            }
            // Stale curvature: retry along steepest descent.
            h = DMatrix::identity(n, n);
            fresh_h = true;
            continue;
        };

        let s = &x_new - &x;
        let yv = &g_new - &gx;
        let sy = s.dot(&yv);
        iterations += 1;
        let stalled = (fx - f_new).abs() <= f64::EPSILON * fx.abs().max(f64::MIN_POSITIVE)
            && s.norm() <= f64::EPSILON * x.norm().max(1.0);
        x = x_new;
        fx = f_new;
        gx = g_new;
        if stalled {
            break;
        }

        if sy > 1e-12 * s.norm() * yv.norm() {
            if fresh_h {
                h = DMatrix::identity(n, n) * (sy / yv.dot(&yv));
                fresh_h = false;
            }
            let rho = 1.0 / sy;
            let hy = &h * &yv;
            let yhy = yv.dot(&hy);
            // H⁺ = H − ρ(s·(Hy)ᵀ + (Hy)·sᵀ) + (ρ²·yᵀHy + ρ)·s·sᵀ
            h -= (&s * hy.transpose() + &hy * s.transpose()) * rho;
            h += &s * s.transpose() * (rho * rho * yhy + rho);
        }
    }

    let grad_norm = inf_norm(&gx);
    Minimum {
        x,
        diagnostics: Diagnostics {
            iterations,
            grad_norm,
            value: fx,
            converged: grad_norm < opts.grad_tol,
        },
    }
}

/// Central finite-difference gradient, used where no analytic form exists.
pub fn fd_gradient<F>(mut f: F, x: &DVector<f64>, h: f64) -> DVector<f64>
where
    F: FnMut(&DVector<f64>) -> f64,
{
    let mut g = DVector::zeros(x.len());
    let mut xp = x.clone();
    for i in 0..x.len() {
        let step = h * x[i].abs().max(1.0);
        xp[i] = x[i] + step;
        let fp = f(&xp);
        xp[i] = x[i] - step;
        let fm = f(&xp);
        xp[i] = x[i];
        g[i] = (fp - fm) / (2.0 * step);
    }
    g
}
