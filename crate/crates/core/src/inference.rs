//! Wald tests, confidence intervals and asymptotic variance estimates.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::cedar::CedarFit;
use crate::error::{Error, Result};
use crate::linalg::{cholesky, spd_inverse, symmetrize, Mat, Vector};
use crate::protocol::SitePayload;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sided {
    #[default]
    Two,
    /// Alternative `β_j > b0`.
    Greater,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaldResult {
    pub j: usize,
    pub null_value: f64,
    pub statistic: f64,
    pub p_value: f64,
    pub reject: bool,
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("valid parameters")
}

/// Standard normal quantile.
pub fn normal_quantile(prob: f64) -> f64 {
    std_normal().inverse_cdf(prob)
}

pub fn normal_cdf(x: f64) -> f64 {
    std_normal().cdf(x)
}

/// Wald test of `β_j = b0` from an estimate and its standard error.
pub fn wald_from_se(
    estimate: f64,
    se: f64,
    j: usize,
    b0: f64,
    alpha: f64,
    sided: Sided,
) -> Result<WaldResult> {
    if !(se > 0.0 && se.is_finite()) {
        return Err(Error::numerical(format!("standard error {se} is not positive")));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidConfig(format!("alpha {alpha} outside (0, 1]")));
    }
    let w = (estimate - b0) / se;
    let (p_value, reject) = match sided {
        Sided::Two => {
            let p = (2.0 * (1.0 - normal_cdf(w.abs()))).clamp(0.0, 1.0);
            (p, w.abs() > normal_quantile(1.0 - alpha / 2.0))
        }
        Sided::Greater => {
            let p = (1.0 - normal_cdf(w)).clamp(0.0, 1.0);
            (p, w > normal_quantile(1.0 - alpha))
        }
    };
    Ok(WaldResult {
        j,
        null_value: b0,
        statistic: w,
        p_value,
        reject,
    })
}

/// `σ̂ √((Σ̂⁻¹)_jj / N)`.
pub fn cedar_standard_error(fit: &CedarFit, j: usize) -> Result<f64> {
    let p = fit.beta.len();
    if j >= p {
        return Err(Error::InvalidConfig(format!("coefficient index {j} out of range for p = {p}")));
    }
    let inv = spd_inverse(&fit.sigma).ok_or_else(|| Error::numerical("Σ̂ is singular"))?;
    Ok((fit.sigma_sq * inv[(j, j)] / fit.n_total as f64).sqrt())
}

/// Wald test for a single CEDAR coefficient (`j` zero-based).
pub fn wald_statistic(fit: &CedarFit, j: usize, b0: f64, alpha: f64, sided: Sided) -> Result<WaldResult> {
    let se = cedar_standard_error(fit, j)?;
    wald_from_se(fit.beta[j], se, j, b0, alpha, sided)
}

/// Symmetric `1 − α` interval for coefficient `j`.
pub fn confidence_interval(fit: &CedarFit, j: usize, alpha: f64) -> Result<(f64, f64)> {
    let se = cedar_standard_error(fit, j)?;
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidConfig(format!("alpha {alpha} outside (0, 1]")));
    }
    let half = normal_quantile(1.0 - alpha / 2.0).max(0.0) * se;
    Ok((fit.beta[j] - half, fit.beta[j] + half))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// `K/n → γ > 0`.
    Main,
    /// `K/n → 0`.
    SmallK,
    /// All feature covariances equal.
    Homogeneous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticVariance {
    pub sigma_star: Mat,
    pub regime: Regime,
    /// Ratio `K/n` averaged over remote sites.
    pub gamma: f64,
}

/// Plug-in estimate of `Σ*`. Posterior blocks are scaled by `1/√ψ` so the
/// columns have covariance `S_m⁻¹`.
pub fn sigma_star_hat(fit: &CedarFit, payloads: &[SitePayload], regime: Regime) -> Result<AsymptoticVariance> {
    let p = fit.beta.len();
    let n_total = fit.n_total as f64;
    let m_sites = payloads.len() + 1;
    let gamma = if payloads.is_empty() {
        0.0
    } else {
        payloads.iter().map(|pl| pl.k() as f64 / pl.n as f64).sum::<f64>() / payloads.len() as f64
    };
    if regime == Regime::Homogeneous {
        return Ok(AsymptoticVariance {
            sigma_star: fit.sigma.clone(),
            regime,
            gamma,
        });
    }
    if fit.s_hat.len() != m_sites {
        return Err(Error::DimensionMismatch(format!(
            "fit holds {} imputed Gram matrices for {m_sites} sites",
            fit.s_hat.len()
        )));
    }
    let mut blocks = Vec::with_capacity(payloads.len());
    for pl in payloads {
        match &pl.block {
            Some(b) if b.k > 0 => blocks.push((b.normalized_outer(), b.k as f64, pl.n as f64)),
            _ => {
                return Err(Error::EstimatorUnavailable(format!(
                    "site {} sent no posterior draws; Σ* needs K >= 1",
                    pl.site_id
                )))
            }
        }
    }
    let s1 = &fit.s_hat[0];
    let mut out = match regime {
        Regime::Main => {
            let mut acc = s1 / n_total;
            for (m, (bbt, k, _)) in blocks.iter().enumerate() {
                let sm = &fit.s_hat[m + 1];
                acc += sm * bbt * sm / (n_total * k);
            }
            acc
        }
        Regime::SmallK => {
            let n1 = fit.n_total as f64 - blocks.iter().map(|b| b.2).sum::<f64>();
            let s1_inv = spd_inverse(s1).ok_or_else(|| Error::numerical("Ŝ₁ is singular"))?;
            let mut acc = s1_inv * n1;
            for (bbt, k, n) in &blocks {
                acc += bbt * (n / k);
            }
            acc / m_sites as f64
        }
        Regime::Homogeneous => unreachable!(),
    };
    symmetrize(&mut out);
    if cholesky(&out).is_none() {
        return Err(Error::numerical("estimated Σ* is not positive definite"));
    }
    debug_assert_eq!(out.nrows(), p);
    Ok(AsymptoticVariance {
        sigma_star: out,
        regime,
        gamma,
    })
}

fn inv(m: &Mat) -> Result<Mat> {
    spd_inverse(m).ok_or_else(|| Error::InvalidData("matrix is not positive definite".into()))
}

fn check_list(list: &[Mat], gamma: f64) -> Result<usize> {
    let first = list.first().ok_or(Error::Empty("covariance list"))?;
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidConfig("gamma must be finite and nonnegative".into()));
    }
    let p = first.nrows();
    if list.iter().any(|m| m.nrows() != p || m.ncols() != p) {
        return Err(Error::DimensionMismatch("covariance list shapes differ".into()));
    }
    Ok(p)
}

/// `f₀(Σ) = (1/M)Σ₀¹ + ((1+γ)/M) Σ_{m>1} (Σ⁻¹ + γ(Σ₀ᵐ)⁻¹)⁻¹ − Σ`.
pub fn theory_f0(list: &[Mat], sigma: &Mat, gamma: f64) -> Result<Mat> {
    let m = list.len() as f64;
    let sigma_inv = inv(sigma)?;
    let mut acc = &list[0] / m;
    for s0m in &list[1..] {
        acc += inv(&(&sigma_inv + inv(s0m)? * gamma))? * ((1.0 + gamma) / m);
    }
    Ok(acc - sigma)
}

/// Zero of `f₀` by fixed-point iteration from the mean covariance.
pub fn theory_sigma0(list: &[Mat], gamma: f64) -> Result<Mat> {
    check_list(list, gamma)?;
    let m = list.len() as f64;
    let mut sigma = list.iter().fold(Mat::zeros(list[0].nrows(), list[0].ncols()), |a, b| a + b) / m;
    for _ in 0..10_000 {
        let mut next = theory_f0(list, &sigma, gamma)? + &sigma;
        symmetrize(&mut next);
        let delta = (&next - &sigma).norm();
        sigma = next;
        if delta < 1e-12 {
            let resid = theory_f0(list, &sigma, gamma)?.norm();
            if resid >= 1e-10 {
                return Err(Error::numerical(format!("fixed point residual {resid:e}")));
            }
            return Ok(sigma);
        }
    }
    Err(Error::NoConvergence(10_000))
}

/// Limiting covariance factor `Σ*`; `γ = 0` gives `(1/M) Σ (Σ₀ᵐ)⁻¹`.
pub fn theory_sigma_star(list: &[Mat], sigma0: &Mat, gamma: f64) -> Result<Mat> {
    check_list(list, gamma)?;
    let m = list.len() as f64;
    if gamma == 0.0 {
        let mut acc = Mat::zeros(sigma0.nrows(), sigma0.ncols());
        for s in list {
            acc += inv(s)?;
        }
        return Ok(acc / m);
    }
    let sigma0_inv = inv(sigma0)?;
    let mut acc = &list[0] / m;
    for s0m in &list[1..] {
        let s0m_inv = inv(s0m)?;
        let mid = inv(&(&sigma0_inv + &s0m_inv * gamma))?;
        acc += &mid * &s0m_inv * &mid * ((1.0 + gamma).powi(2) / m);
    }
    symmetrize(&mut acc);
    Ok(acc)
}

/// Covariance of `β̂` implied by a CEDAR fit, `σ̂² Σ̂⁻¹ / N`.
pub fn cedar_covariance(fit: &CedarFit) -> Result<Mat> {
    Ok(inv(&fit.sigma)? * (fit.sigma_sq / fit.n_total as f64))
}

/// Wald statistics for every coefficient against the given null vector.
pub fn wald_table(
    beta: &Vector,
    covariance: &Mat,
    nulls: &[f64],
    alpha: f64,
    sided: Sided,
) -> Result<Vec<WaldResult>> {
    if nulls.len() != beta.len() {
        return Err(Error::DimensionMismatch("null vector length differs from p".into()));
    }
    (0..beta.len())
        .map(|j| wald_from_se(beta[j], covariance[(j, j)].sqrt(), j, nulls[j], alpha, sided))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fit_1d(beta: f64, sigma_sq: f64, sigma: f64, n: usize) -> CedarFit {
        CedarFit {
            beta: Vector::from_element(1, beta),
            sigma_sq,
            sigma: Mat::from_element(1, 1, sigma),
            s_hat: vec![],
            iterations: 0,
            final_loglik: 0.0,
            converged: true,
            n_total: n,
            penalty_lambda: 0.0,
            loglik_trace: vec![],
        }
    }

    #[test]
    fn wald_hand_values() {
        let r = wald_statistic(&fit_1d(0.7, 1.0, 1.0, 100), 0, 0.7, 0.05, Sided::Two).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!((r.p_value - 1.0).abs() < 1e-12);
        let r = wald_statistic(&fit_1d(0.2, 1.0, 1.0, 100), 0, 0.0, 0.05, Sided::Two).unwrap();
        assert!((r.statistic - 2.0).abs() < 1e-12);
        assert!(r.reject);
    }

    #[test]
    fn interval_hand_values() {
        let fit = fit_1d(0.3, 1.0, 1.0, 100);
        let (lo, hi) = confidence_interval(&fit, 0, 1.0).unwrap();
        assert_eq!((lo, hi), (0.3, 0.3));
        let (lo, hi) = confidence_interval(&fit, 0, 0.05).unwrap();
        assert!(((hi - lo) / 2.0 - 0.195_996_398_454).abs() < 1e-9);
    }

    #[test]
    fn quantile_accuracy() {
        assert!((normal_quantile(0.975) - 1.959_963_984_540_054).abs() < 1e-9);
        assert!((normal_quantile(0.95) - 1.644_853_626_951_472_2).abs() < 1e-9);
    }

    #[test]
    fn theory_homogeneous() {
        let list = vec![Mat::identity(3, 3); 4];
        for gamma in [0.0, 0.5, 7.0] {
            let s0 = theory_sigma0(&list, gamma).unwrap();
            assert!((&s0 - Mat::identity(3, 3)).norm() < 1e-10);
            let st = theory_sigma_star(&list, &s0, gamma).unwrap();
            assert!((st - Mat::identity(3, 3)).norm() < 1e-10);
        }
    }

    #[test]
    fn theory_small_k_hand() {
        let list = vec![Mat::identity(2, 2), Mat::identity(2, 2) * 4.0];
        let s0 = theory_sigma0(&list, 0.0).unwrap();
        assert!((&s0 - &list[0]).norm() < 1e-12);
        let st = theory_sigma_star(&list, &s0, 0.0).unwrap();
        assert!((st - Mat::identity(2, 2) * 0.625).norm() < 1e-15);
    }
}
