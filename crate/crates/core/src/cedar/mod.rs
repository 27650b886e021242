//! Central-site EM aggregation of one-shot site summaries.
//!
//! The central site observes its own Gram matrix `S_1` and receives
//! `(β̂_m, σ̂_m², B_m)` from every remote site. The remote `S_m` are treated
//! as missing: the E-step replaces each by its conditional Wishart mean and
//! the M-step is a weighted least squares update of `(β, σ², Σ)`.

mod estep;
mod loglik;
mod sparse;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, min_eigenvalue, symmetrize, Mat, Vector};
use crate::model::{local_mle, LocalFit, SiteData};
use crate::protocol::SitePayload;

pub use estep::{e_step, EstepMode};
pub use loglik::{complete_loglik, marginal_loglik};
pub use sparse::{prox_l1, solve_quadratic_lasso, sparse_beta_step, ProxOptions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CedarOptions {
    pub max_iters: usize,
    /// Stop once the largest relative change of β, σ², Σ and the penalized
    /// objective drops below this.
    pub tol: f64,
    /// L1 penalty; zero gives the unpenalized estimator.
    pub penalty_lambda: f64,
    pub estep_mode: EstepMode,
    /// Convergence tolerance of the inner proximal solver.
    pub prox_tol: f64,
}

impl Default for CedarOptions {
    fn default() -> Self {
        CedarOptions {
            max_iters: 500,
            tol: 1e-8,
            penalty_lambda: 0.0,
            estep_mode: EstepMode::Auto,
            prox_tol: 1e-12,
        }
    }
}

impl CedarOptions {
    fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidConfig("tol must be positive".into()));
        }
        if !(self.penalty_lambda >= 0.0) {
            return Err(Error::InvalidConfig("penalty_lambda must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Parameter values at one EM iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct EmState {
    pub beta: Vector,
    pub sigma_sq: f64,
    pub sigma: Mat,
    /// `s_hat[0]` is the observed central Gram matrix.
    pub s_hat: Vec<Mat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CedarFit {
    pub beta: Vector,
    pub sigma_sq: f64,
    /// `Σ̂`, the estimated feature covariance.
    pub sigma: Mat,
    #[serde(skip)]
    pub s_hat: Vec<Mat>,
    pub iterations: usize,
    pub final_loglik: f64,
    pub converged: bool,
    /// Total sample size over all sites.
    pub n_total: usize,
    pub penalty_lambda: f64,
    /// Marginal loglikelihood at the initial point and after every iteration.
    #[serde(skip)]
    pub loglik_trace: Vec<f64>,
}

/// M-step given imputed Gram matrices. `beta_hats[0]` and `sigma_hats[0]`
/// are the central site's; `ns` are the site sample sizes.
pub fn m_step(
    s_hat: &[Mat],
    beta_hats: &[&Vector],
    sigma_hats: &[f64],
    ns: &[usize],
) -> Result<(Vector, f64, Mat)> {
    let (h, g) = sparse::weighted_normal_equations(s_hat, beta_hats);
    let chol = cholesky(&h).ok_or_else(|| Error::numerical("Σ_m Ŝ_m is singular"))?;
    let beta = chol.solve(&g);
    let (sigma_sq, sigma) = variance_updates(s_hat, beta_hats, sigma_hats, ns, &beta);
    Ok((beta, sigma_sq, sigma))
}

fn variance_updates(
    s_hat: &[Mat],
    beta_hats: &[&Vector],
    sigma_hats: &[f64],
    ns: &[usize],
    beta: &Vector,
) -> (f64, Mat) {
    let total_n: f64 = ns.iter().map(|&n| n as f64).sum();
    let mut ss = 0.0;
    let p = beta.len();
    let mut sigma = Mat::zeros(p, p);
    for m in 0..s_hat.len() {
        let d = beta_hats[m] - beta;
        ss += d.dot(&(&s_hat[m] * &d)) + ns[m] as f64 * sigma_hats[m];
        sigma += &s_hat[m];
    }
    sigma /= total_n;
    symmetrize(&mut sigma);
    (ss / total_n, sigma)
}

fn rel_change(new: f64, old: f64) -> f64 {
    (new - old).abs() / old.abs().max(1e-300)
}

fn validate_payloads(central: &LocalFit, payloads: &[SitePayload]) -> Result<()> {
    for pl in payloads {
        if pl.p != central.p || pl.beta_hat.len() != central.p {
            return Err(Error::DimensionMismatch(format!(
                "site {} reports p = {} but the central site has p = {}",
                pl.site_id, pl.p, central.p
            )));
        }
        if let Some(block) = &pl.block {
            if block.p() != central.p && block.k > 0 {
                return Err(Error::DimensionMismatch(format!(
                    "site {}: posterior block has {} rows",
                    pl.site_id,
                    block.p()
                )));
            }
        }
        if pl.n == 0 || !(pl.sigma_hat_sq >= 0.0) {
            return Err(Error::Validation(format!("site {}: invalid n or σ̂²", pl.site_id)));
        }
    }
    Ok(())
}

/// Run the EM aggregation at the central site.
pub fn cedar_fit(central: &SiteData, payloads: &[SitePayload], opts: &CedarOptions) -> Result<CedarFit> {
    let local = local_mle(central)?;
    cedar_fit_from_local(&local, payloads, opts)
}

/// As [`cedar_fit`] but starting from the central site's local fit.
pub fn cedar_fit_from_local(
    central: &LocalFit,
    payloads: &[SitePayload],
    opts: &CedarOptions,
) -> Result<CedarFit> {
    cedar_fit_warm(central, payloads, opts, None)
}

/// As [`cedar_fit_from_local`], optionally starting EM from a previous fit
/// (used along a penalty path).
pub fn cedar_fit_warm(
    central: &LocalFit,
    payloads: &[SitePayload],
    opts: &CedarOptions,
    init: Option<&CedarFit>,
) -> Result<CedarFit> {
    opts.validate()?;
    validate_payloads(central, payloads)?;

    let m_sites = payloads.len() + 1;
    let beta_hats: Vec<&Vector> = std::iter::once(&central.beta_hat)
        .chain(payloads.iter().map(|pl| &pl.beta_hat))
        .collect();
    let sigma_hats: Vec<f64> = std::iter::once(central.sigma_hat_sq)
        .chain(payloads.iter().map(|pl| pl.sigma_hat_sq))
        .collect();
    let ns: Vec<usize> = std::iter::once(central.n)
        .chain(payloads.iter().map(|pl| pl.n))
        .collect();
    let total_n: usize = ns.iter().sum();

    // Initialization: average of local estimates, Σ from the central site.
    let mut beta = beta_hats
        .iter()
        .fold(Vector::zeros(central.p), |acc, b| acc + *b)
        / m_sites as f64;
    let mut sigma = &central.s / central.n as f64;
    let init_s: Vec<Mat> = vec![central.s.clone(); m_sites];
    let (mut sigma_sq, _) = variance_updates(&init_s, &beta_hats, &sigma_hats, &ns, &beta);
    if !(sigma_sq > 0.0) {
        return Err(Error::numerical("initial σ² is zero: every site fits its data exactly"));
    }
    if let Some(prev) = init {
        if prev.beta.len() != central.p {
            return Err(Error::DimensionMismatch("warm start has the wrong dimension".into()));
        }
        beta = prev.beta.clone();
        sigma_sq = prev.sigma_sq;
        sigma = prev.sigma.clone();
    }

    let lambda = opts.penalty_lambda;
    let objective = |beta: &Vector, sigma_sq: f64, sigma: &Mat| -> Result<(f64, f64)> {
        let ll = marginal_loglik(beta, sigma_sq, sigma, central, payloads)?;
        Ok((ll, ll - lambda * beta.iter().map(|v| v.abs()).sum::<f64>()))
    };
    let (mut loglik, mut penalized) = objective(&beta, sigma_sq, &sigma)?;
    let mut trace = vec![loglik];
    let mut s_hat = vec![central.s.clone()];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iters {
        iterations += 1;
        let at = |e: Error| match e {
            Error::Numerical { site, detail, .. } => Error::Numerical {
                iteration: Some(iterations),
                site,
                detail,
            },
            other => other,
        };

        let remote = e_step(&beta, sigma_sq, &sigma, payloads, opts.estep_mode).map_err(at)?;
        s_hat.truncate(1);
        s_hat.extend(remote);

        let new_beta = if lambda > 0.0 {
            sparse_beta_step(
                &s_hat,
                &beta_hats,
                sigma_sq,
                lambda,
                &beta,
                ProxOptions {
                    tol: opts.prox_tol,
                    ..ProxOptions::default()
                },
            )
            .map_err(at)?
        } else {
            m_step(&s_hat, &beta_hats, &sigma_hats, &ns).map_err(at)?.0
        };
        let (new_sigma_sq, new_sigma) =
            variance_updates(&s_hat, &beta_hats, &sigma_hats, &ns, &new_beta);

        if !(new_sigma_sq > 0.0 && new_sigma_sq.is_finite()) {
            return Err(at(Error::numerical("σ² left the positive reals")));
        }
        if cholesky(&new_sigma).is_none() || min_eigenvalue(&new_sigma) <= 0.0 {
            return Err(at(Error::numerical("Σ̂ is not positive definite")));
        }

        let (new_loglik, new_penalized) =
            objective(&new_beta, new_sigma_sq, &new_sigma).map_err(at)?;
        let change = [
            (&new_beta - &beta).amax() / beta.amax().max(new_beta.amax()).max(1e-300),
            rel_change(new_sigma_sq, sigma_sq),
            (&new_sigma - &sigma).norm() / sigma.norm(),
            (new_penalized - penalized).abs() / penalized.abs().max(1.0),
        ]
        .into_iter()
        .fold(0.0, f64::max);

        beta = new_beta;
        sigma_sq = new_sigma_sq;
        sigma = new_sigma;
        loglik = new_loglik;
        penalized = new_penalized;
        trace.push(loglik);

        if change < opts.tol {
            converged = true;
            break;
        }
    }

    Ok(CedarFit {
        beta,
        sigma_sq,
        sigma,
        s_hat,
        iterations,
        final_loglik: loglik,
        converged,
        n_total: total_n,
        penalty_lambda: lambda,
        loglik_trace: trace,
    })
}
