//! L1-penalized β update by proximal gradient descent with backtracking.

use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};

/// Soft-thresholding at level `λ s`, the proximal map of `λ‖·‖₁` with step `s`.
pub fn prox_l1(x: &Vector, lambda: f64, s: f64) -> Vector {
    let t = lambda * s;
    x.map(|v| v.signum() * (v.abs() - t).max(0.0))
}

#[derive(Debug, Clone, Copy)]
pub struct ProxOptions {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for ProxOptions {
    fn default() -> Self {
        ProxOptions {
            tol: 1e-12,
            max_iters: 200_000,
        }
    }
}

/// Minimize `½ βᵀHβ - gᵀβ + weight·‖β‖₁` starting at `start`.
///
/// The Armijo test `Q(z) <= Q(β) + ∇Q(β)ᵀd + ‖d‖²/(2s)` is evaluated in the
/// equivalent form `s·dᵀHd <= ‖d‖²`, which holds exactly for a quadratic
/// and does not lose precision when `d` is tiny.
pub fn solve_quadratic_lasso(
    h: &Mat,
    g: &Vector,
    weight: f64,
    start: &Vector,
    opts: ProxOptions,
) -> Result<Vector> {
    if !(weight >= 0.0) {
        return Err(Error::InvalidConfig("penalty must be nonnegative".into()));
    }
    let mut beta = start.clone();
    let mut step = 1.0 / h.norm().max(f64::MIN_POSITIVE);
    for _ in 0..opts.max_iters {
        let grad = h * &beta - g;
        let (z, d) = loop {
            let z = prox_l1(&(&beta - &grad * step), weight, step);
            let d = &z - &beta;
            let dd = d.norm_squared();
            if dd == 0.0 || step * d.dot(&(h * &d)) <= dd {
                break (z, d);
            }
            step *= 0.5;
            if step < 1e-300 {
                return Err(Error::LineSearch);
            }
        };
        beta = z;
        if d.norm() <= opts.tol * (1.0 + beta.norm()) {
            return Ok(beta);
        }
        step *= 1.25;
    }
    Ok(beta)
}

/// One penalized β update: minimizes
/// `½ Σ_m (β - β̂_m)ᵀ Ŝ_m (β - β̂_m) + λσ²‖β‖₁` with the current `σ²`.
pub fn sparse_beta_step(
    s_hat: &[Mat],
    beta_hats: &[&Vector],
    sigma_sq: f64,
    lambda: f64,
    start: &Vector,
    opts: ProxOptions,
) -> Result<Vector> {
    let (h, g) = weighted_normal_equations(s_hat, beta_hats);
    solve_quadratic_lasso(&h, &g, lambda * sigma_sq, start, opts)
}

/// `(Σ Ŝ_m, Σ Ŝ_m β̂_m)`.
pub(crate) fn weighted_normal_equations(s_hat: &[Mat], beta_hats: &[&Vector]) -> (Mat, Vector) {
    let p = beta_hats[0].len();
    let mut h = Mat::zeros(p, p);
    let mut g = Vector::zeros(p);
    for (s, b) in s_hat.iter().zip(beta_hats) {
        h += s;
        g += s * *b;
    }
    (h, g)
}
