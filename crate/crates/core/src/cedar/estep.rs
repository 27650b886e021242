//! Conditional expectation of the missing remote Gram matrices.
//!
//! Given `(β, σ², Σ)`, a remote `S_m` is Wishart with `n_m + K_m + 1`
//! degrees of freedom and scale `(Σ⁻¹ + A_m A_mᵀ)⁻¹`, where
//! `A_m = [a_m, B_m/√ψ]` and `a_m = (β̂_m - β)/σ`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, symmetrize, Mat, Vector};
use crate::protocol::SitePayload;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstepMode {
    /// Woodbury when the posterior block is in column form and `K + 1 <= p`,
    /// direct inversion otherwise.
    #[default]
    Auto,
    Direct,
    /// Woodbury where applicable; Gram-form blocks fall back to direct.
    Woodbury,
}

/// Effective degrees of freedom `n_m + K_m + 1` of a remote site.
pub(crate) fn wishart_dof(payload: &SitePayload) -> f64 {
    (payload.n + payload.k() + 1) as f64
}

/// `a_m = (β̂_m - β)/σ`.
pub(crate) fn standardized_gap(payload: &SitePayload, beta: &Vector, sigma_sq: f64) -> Vector {
    (&payload.beta_hat - beta) / sigma_sq.sqrt()
}

/// `Σ⁻¹ + A Aᵀ` for one site.
pub(crate) fn conditional_precision(
    sigma_inv: &Mat,
    a: &Vector,
    payload: &SitePayload,
) -> Mat {
    let mut prec = sigma_inv + a * a.transpose();
    if let Some(block) = &payload.block {
        if block.k > 0 {
            prec += block.normalized_outer();
        }
    }
    prec
}

/// `A = [a, B/√ψ]`, available only for column-form blocks.
fn augmented(a: &Vector, payload: &SitePayload) -> Option<Mat> {
    let cols = match &payload.block {
        None => return Some(Mat::from_column_slice(a.len(), 1, a.as_slice())),
        Some(block) if block.k == 0 => {
            return Some(Mat::from_column_slice(a.len(), 1, a.as_slice()))
        }
        Some(block) => block.columns()?,
    };
    let psi = payload.block.as_ref().map(|b| b.psi).unwrap_or(1.0);
    let p = a.len();
    let mut out = Mat::zeros(p, cols.ncols() + 1);
    out.set_column(0, a);
    out.columns_mut(1, cols.ncols())
        .copy_from(&(cols / psi.sqrt()));
    Some(out)
}

pub(crate) fn expected_gram_direct(sigma_inv: &Mat, a: &Vector, payload: &SitePayload) -> Result<Mat> {
    let prec = conditional_precision(sigma_inv, a, payload);
    let chol = cholesky(&prec).ok_or_else(|| Error::Numerical {
        iteration: None,
        site: Some(payload.site_id),
        detail: "conditional precision is not positive definite".into(),
    })?;
    let mut out = chol.inverse() * wishart_dof(payload);
    symmetrize(&mut out);
    Ok(out)
}

/// `ν (Σ - Σ A (I + AᵀΣA)⁻¹ AᵀΣ)`; `None` when the block is in Gram form.
pub(crate) fn expected_gram_woodbury(
    sigma: &Mat,
    a: &Vector,
    payload: &SitePayload,
) -> Result<Option<Mat>> {
    let Some(aug) = augmented(a, payload) else {
        return Ok(None);
    };
    let sa = sigma * &aug;
    let inner = Mat::identity(aug.ncols(), aug.ncols()) + aug.transpose() * &sa;
    let chol = cholesky(&inner).ok_or_else(|| Error::Numerical {
        iteration: None,
        site: Some(payload.site_id),
        detail: "Woodbury capacitance matrix is not positive definite".into(),
    })?;
    let correction = &sa * chol.solve(&sa.transpose());
    let mut out = (sigma - correction) * wishart_dof(payload);
    symmetrize(&mut out);
    Ok(Some(out))
}

fn use_woodbury(mode: EstepMode, payload: &SitePayload) -> bool {
    let columns = payload
        .block
        .as_ref()
        .is_none_or(|b| b.k == 0 || b.columns().is_some());
    match mode {
        EstepMode::Direct => false,
        EstepMode::Woodbury => columns,
        EstepMode::Auto => columns && payload.k() + 1 <= payload.p,
    }
}

/// E-step for every remote site. Returns `Ŝ_2, …, Ŝ_M` in payload order.
pub fn e_step(
    beta: &Vector,
    sigma_sq: f64,
    sigma: &Mat,
    payloads: &[SitePayload],
    mode: EstepMode,
) -> Result<Vec<Mat>> {
    let sigma_inv = if payloads.iter().any(|pl| !use_woodbury(mode, pl)) {
        Some(
            cholesky(sigma)
                .ok_or_else(|| Error::numerical("Σ is not positive definite"))?
                .inverse(),
        )
    } else {
        None
    };
    payloads
        .iter()
        .map(|pl| {
            let a = standardized_gap(pl, beta, sigma_sq);
            let s = if use_woodbury(mode, pl) {
                expected_gram_woodbury(sigma, &a, pl)?
                    .expect("woodbury applicability checked")
            } else {
                expected_gram_direct(sigma_inv.as_ref().expect("inverse computed"), &a, pl)?
            };
            if !s.iter().all(|v| v.is_finite()) {
                return Err(Error::Numerical {
                    iteration: None,
                    site: Some(pl.site_id),
                    detail: "non-finite imputed Gram matrix".into(),
                });
            }
            Ok(s)
        })
        .collect()
}
