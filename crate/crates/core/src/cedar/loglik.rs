//! Closed-form marginal loglikelihood.
//!
//! The complete-data loglikelihood of the local fits is
//!
//! ```text
//! l₀ = -N/2 log σ² - 1/(2σ²) Σ n_m σ̂_m² - N/2 log|Σ|
//!      - 1/(2σ²) Σ (β̂_m - β)ᵀ S_m (β̂_m - β)
//!      + Σ (n_m - p)/2 log|S_m| - ½ tr(Σ⁻¹ Σ S_m)
//! ```
//!
//! plus, for remote posterior draws, `K/2 log|S_m| - ½ tr(S_m B_m B_mᵀ/ψ)`.
//! Each remote `S_m` appears as an unnormalized Wishart kernel and
//! integrates to `2^{νp/2} |V|^{ν/2} Γ_p(ν/2)` with `ν = n_m + K_m + 1` and
//! `V⁻¹ = Σ⁻¹ + A_m A_mᵀ`. The value returned here is that integral,
//! normalization constants included, so it is exactly
//! `log ∫ e^{l₀ (or l₁)} dS_2 ⋯ dS_M`.

use std::f64::consts::LN_2;

use crate::error::{Error, Result};
use crate::linalg::{cholesky, ln_multigamma, log_det_chol, Mat, Vector};
use crate::model::LocalFit;
use crate::protocol::SitePayload;

use super::estep::{conditional_precision, standardized_gap, wishart_dof};

fn check(value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::numerical("non-finite loglikelihood"))
    }
}

fn quad(s: &Mat, d: &Vector) -> f64 {
    d.dot(&(s * d))
}

/// Terms of `l₀` that belong to the central site, plus the global
/// `σ²` and `Σ` terms that involve every site.
fn observed_part(
    beta: &Vector,
    sigma_sq: f64,
    sigma_chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>,
    central: &LocalFit,
    total_n: f64,
    total_rss: f64,
) -> Result<f64> {
    let p = central.p as f64;
    let s1_chol = cholesky(&central.s).ok_or(Error::RankDeficient {
        site: central.site_id,
    })?;
    let sigma_inv = sigma_chol.inverse();
    let trace = (sigma_inv * &central.s).trace();
    let gap = &central.beta_hat - beta;
    Ok(-0.5 * total_n * sigma_sq.ln() - total_rss / (2.0 * sigma_sq)
        - 0.5 * total_n * log_det_chol(sigma_chol)
        - quad(&central.s, &gap) / (2.0 * sigma_sq)
        + 0.5 * (central.n as f64 - p) * log_det_chol(&s1_chol)
        - 0.5 * trace)
}

/// Marginal loglikelihood of `(β, σ², Σ)` given the central fit and the
/// remote payloads.
pub fn marginal_loglik(
    beta: &Vector,
    sigma_sq: f64,
    sigma: &Mat,
    central: &LocalFit,
    payloads: &[SitePayload],
) -> Result<f64> {
    if !(sigma_sq > 0.0) {
        return Err(Error::numerical("σ² must be positive"));
    }
    let sigma_chol =
        cholesky(sigma).ok_or_else(|| Error::numerical("Σ is not positive definite"))?;
    let p = central.p;
    let total_n = (central.n + payloads.iter().map(|pl| pl.n).sum::<usize>()) as f64;
    let total_rss = central.n as f64 * central.sigma_hat_sq
        + payloads
            .iter()
            .map(|pl| pl.n as f64 * pl.sigma_hat_sq)
            .sum::<f64>();
    let mut value = observed_part(beta, sigma_sq, &sigma_chol, central, total_n, total_rss)?;

    let sigma_inv = sigma_chol.inverse();
    for pl in payloads {
        let nu = wishart_dof(pl);
        let a = standardized_gap(pl, beta, sigma_sq);
        let prec = conditional_precision(&sigma_inv, &a, pl);
        let chol = cholesky(&prec).ok_or_else(|| Error::Numerical {
            iteration: None,
            site: Some(pl.site_id),
            detail: "conditional precision is not positive definite".into(),
        })?;
        value += 0.5 * nu * p as f64 * LN_2 + ln_multigamma(p, 0.5 * nu)
            - 0.5 * nu * log_det_chol(&chol);
    }
    check(value)
}

/// `l₀` with every Gram matrix observed. `fits[0]` is the central site.
pub fn complete_loglik(beta: &Vector, sigma_sq: f64, sigma: &Mat, fits: &[LocalFit]) -> Result<f64> {
    let sigma_chol =
        cholesky(sigma).ok_or_else(|| Error::numerical("Σ is not positive definite"))?;
    let sigma_inv = sigma_chol.inverse();
    let total_n: f64 = fits.iter().map(|f| f.n as f64).sum();
    let mut value = -0.5 * total_n * sigma_sq.ln() - 0.5 * total_n * log_det_chol(&sigma_chol);
    for f in fits {
        let chol = cholesky(&f.s).ok_or(Error::RankDeficient { site: f.site_id })?;
        let gap = &f.beta_hat - beta;
        value += -(f.n as f64) * f.sigma_hat_sq / (2.0 * sigma_sq)
            - quad(&f.s, &gap) / (2.0 * sigma_sq)
            + 0.5 * (f.n as f64 - f.p as f64) * log_det_chol(&chol)
            - 0.5 * (&sigma_inv * &f.s).trace();
    }
    check(value)
}
