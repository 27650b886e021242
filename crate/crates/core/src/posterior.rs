//! Tempered posterior draws released by remote sites.
//!
//! A site with local fit `(β̂, σ̂², S)` samples from the posterior obtained by
//! raising its Gaussian likelihood to the power `1/ψ` under the prior
//! `π(β, σ²) ∝ (σ²)^-(p/2+1)`:
//!
//! ```text
//! σ̃²      ~ InvGamma(n / 2ψ, n σ̂² / 2ψ)
//! β̃ | σ̃² ~ N(β̂, ψ σ̃² S⁻¹)
//! ```
//!
//! With the default `ψ = 100` the inverse-gamma shape `n/2ψ` is usually
//! below one, so `σ̃²` has no finite mean and is extremely heavy tailed.
//! Only the standardized offsets `(β̃ - β̂)/σ̃` are used downstream, and
//! those are exactly `N(0, ψ S⁻¹)` whatever `σ̃` is.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, Mat, Vector};
use crate::model::LocalFit;
use crate::seed::rng_from_seed;

pub const DEFAULT_PSI: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraws {
    pub beta_tilde: Vec<Vector>,
    pub sigma_tilde_sq: Vec<f64>,
    /// `(β̃_k - β̂)/σ̃_k` computed before adding `β̂`, so it keeps full
    /// precision when `σ̃` is tiny. May be empty for hand-built draws.
    #[serde(default)]
    pub standardized: Vec<Vector>,
    pub psi: f64,
}

impl PosteriorDraws {
    pub fn k(&self) -> usize {
        self.beta_tilde.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", content = "matrix", rename_all = "lowercase")]
pub enum BlockForm {
    /// `p × K` matrix whose columns are `(β̃_k - β̂)/σ̃_k`.
    Columns(Mat),
    /// `B Bᵀ`, sent instead of the columns when `K > p`.
    Gram(Mat),
}

/// The posterior information a remote site transmits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorBlock {
    pub form: BlockForm,
    pub k: usize,
    pub psi: f64,
}

impl PosteriorBlock {
    pub fn p(&self) -> usize {
        match &self.form {
            BlockForm::Columns(b) => b.nrows(),
            BlockForm::Gram(g) => g.nrows(),
        }
    }

    pub fn columns(&self) -> Option<&Mat> {
        match &self.form {
            BlockForm::Columns(b) => Some(b),
            BlockForm::Gram(_) => None,
        }
    }

    /// `B Bᵀ` regardless of the transmitted form.
    pub fn outer(&self) -> Mat {
        match &self.form {
            BlockForm::Columns(b) => b * b.transpose(),
            BlockForm::Gram(g) => g.clone(),
        }
    }

    /// `B Bᵀ / ψ`, whose expectation is `K S⁻¹`.
    pub fn normalized_outer(&self) -> Mat {
        self.outer() / self.psi
    }
}

pub fn draw_posterior(fit: &LocalFit, k: usize, psi: f64, seed: u64) -> Result<PosteriorDraws> {
    if !(psi > 0.0 && psi.is_finite()) {
        return Err(Error::InvalidConfig(format!("psi must be positive, got {psi}")));
    }
    if k == 0 {
        return Ok(PosteriorDraws {
            beta_tilde: Vec::new(),
            sigma_tilde_sq: Vec::new(),
            standardized: Vec::new(),
            psi,
        });
    }
    if !(fit.sigma_hat_sq > 0.0) {
        return Err(Error::DegeneratePosterior { site: fit.site_id });
    }
    let chol = cholesky(&fit.s).ok_or(Error::RankDeficient { site: fit.site_id })?;
    let upper = chol.l().transpose();

    let n = fit.n as f64;
    let shape = n / (2.0 * psi);
    let rate = n * fit.sigma_hat_sq / (2.0 * psi);
    let precision = Gamma::new(shape, 1.0 / rate)
        .map_err(|e| Error::numerical(format!("inverse-gamma parameters: {e}")))?;

    let mut rng = rng_from_seed(seed);
    let mut beta_tilde = Vec::with_capacity(k);
    let mut sigma_tilde_sq = Vec::with_capacity(k);
    let mut standardized = Vec::with_capacity(k);
    while beta_tilde.len() < k {
        let s2 = 1.0 / precision.sample(&mut rng);
        let z = Vector::from_fn(fit.p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let offset = upper
            .solve_upper_triangular(&z)
            .ok_or(Error::RankDeficient { site: fit.site_id })?;
        let unit = offset * psi.sqrt();
        let beta = &fit.beta_hat + &unit * s2.sqrt();
        // A gamma draw can underflow to zero for tiny shapes; redraw.
        if s2.is_finite() && s2 > 0.0 && beta.iter().all(|v| v.is_finite()) {
            beta_tilde.push(beta);
            sigma_tilde_sq.push(s2);
            standardized.push(unit);
        }
    }
    Ok(PosteriorDraws {
        beta_tilde,
        sigma_tilde_sq,
        standardized,
        psi,
    })
}

/// Standardize the draws; switch to the Gram form when `K > p`.
pub fn build_block(draws: &PosteriorDraws, fit: &LocalFit) -> PosteriorBlock {
    let k = draws.k();
    let mut b = Mat::zeros(fit.p, k);
    if draws.standardized.len() == k {
        for (j, col) in draws.standardized.iter().enumerate() {
            b.set_column(j, col);
        }
    } else {
        for (j, (beta, s2)) in draws.beta_tilde.iter().zip(&draws.sigma_tilde_sq).enumerate() {
            b.set_column(j, &((beta - &fit.beta_hat) / s2.sqrt()));
        }
    }
    let form = if k > fit.p {
        BlockForm::Gram(&b * b.transpose())
    } else {
        BlockForm::Columns(b)
    };
    PosteriorBlock {
        form,
        k,
        psi: draws.psi,
    }
}
