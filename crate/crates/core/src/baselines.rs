//! Comparison estimators: one-shot averaging, pooled least squares and the
//! communication-efficient surrogate likelihood.

use crate::error::{Error, Result};
use crate::linalg::{cholesky, spd_inverse, Mat, Vector};
use crate::model::{LocalFit, SiteData, SufficientStats};

/// Mean of the local estimates.
pub fn avgm(betas: &[&Vector]) -> Result<Vector> {
    let first = betas.first().ok_or(Error::Empty("avgm: no estimates"))?;
    let mut sum = Vector::zeros(first.len());
    for b in betas {
        if b.len() != first.len() {
            return Err(Error::DimensionMismatch("avgm: unequal lengths".into()));
        }
        sum += *b;
    }
    Ok(sum / betas.len() as f64)
}

/// Combined Wald statistic `Σ W_m / √M`.
pub fn avgm_wald(walds: &[f64]) -> Result<f64> {
    if walds.is_empty() {
        return Err(Error::Empty("avgm_wald: no statistics"));
    }
    Ok(walds.iter().sum::<f64>() / (walds.len() as f64).sqrt())
}

/// Local Wald statistics `(β̂_j − b0) / sqrt(s² (S⁻¹)_jj)` with `s² = RSS/(n−p)`.
pub fn local_wald(fit: &LocalFit, data: &SiteData, nulls: &[(usize, f64)]) -> Result<Vec<f64>> {
    if fit.n <= fit.p {
        return Err(Error::EstimatorUnavailable(format!(
            "site {}: Wald statistic needs n > p",
            fit.site_id
        )));
    }
    let _ = data;
    let s2 = fit.sigma_hat_sq * fit.n as f64 / (fit.n - fit.p) as f64;
    let s_inv = spd_inverse(&fit.s).ok_or(Error::RankDeficient { site: fit.site_id })?;
    nulls
        .iter()
        .map(|&(j, b0)| {
            if j >= fit.p {
                return Err(Error::InvalidConfig(format!("coefficient index {j} out of range")));
            }
            Ok((fit.beta_hat[j] - b0) / (s2 * s_inv[(j, j)]).sqrt())
        })
        .collect()
}

/// Pooled least squares from summed sufficient statistics.
///
/// Returns the estimate and `σ̂² (Σ S_m)⁻¹` with
/// `σ̂² = (Σ yᵀy − βᵀ Σ Xᵀy) / (N − p)`.
pub fn opt_fit(stats: &[&SufficientStats]) -> Result<(Vector, Mat)> {
    let first = stats.first().ok_or(Error::Empty("opt_fit: no sites"))?;
    let p = first.p();
    let mut pooled = SufficientStats::zeros(p);
    for st in stats {
        if st.p() != p {
            return Err(Error::DimensionMismatch("opt_fit: unequal p".into()));
        }
        pooled.accumulate(st);
    }
    let chol = cholesky(&pooled.s).ok_or(Error::RankDeficient { site: 0 })?;
    let beta = chol.solve(&pooled.xty);
    let df = pooled.n.saturating_sub(p);
    if df == 0 {
        return Err(Error::EstimatorUnavailable("opt_fit: N must exceed p".into()));
    }
    let rss = (pooled.yty - beta.dot(&pooled.xty)).max(0.0);
    Ok((beta, chol.inverse() * (rss / df as f64)))
}

/// `∇L_m(β̄) = −(1/n) Xᵀ(y − Xβ̄)`.
pub fn csl_gradient(data: &SiteData, beta_bar: &Vector) -> Result<Vector> {
    if beta_bar.len() != data.p() {
        return Err(Error::DimensionMismatch(format!(
            "beta_bar has length {}, data has p = {}",
            beta_bar.len(),
            data.p()
        )));
    }
    let resid = data.y() - data.x() * beta_bar;
    Ok(data.x().tr_mul(&resid) / -(data.n() as f64))
}

#[derive(Debug, Clone)]
pub struct CslInputs<'a> {
    pub beta_bar: Vector,
    /// `∇L_m(β̄)` for every site, the central one included.
    pub gradients: Vec<Vector>,
    pub central: &'a SiteData,
}

impl CslInputs<'_> {
    pub fn global_gradient(&self) -> Result<Vector> {
        avgm(&self.gradients.iter().collect::<Vec<_>>())
    }

    /// Gradient of the surrogate loss at `beta`.
    pub fn surrogate_gradient(&self, beta: &Vector) -> Result<Vector> {
        let g1_bar = csl_gradient(self.central, &self.beta_bar)?;
        Ok(csl_gradient(self.central, beta)? - g1_bar + self.global_gradient()?)
    }
}

/// Minimizer of the surrogate loss: `β̄ − n S₁⁻¹ ∇L(β̄)`.
pub fn csl_fit(inputs: &CslInputs<'_>) -> Result<Vector> {
    let central = inputs.central;
    if inputs.beta_bar.len() != central.p() {
        return Err(Error::DimensionMismatch("csl_fit: beta_bar length".into()));
    }
    let grad = inputs.global_gradient()?;
    let s1 = central.x().tr_mul(central.x());
    let chol = cholesky(&s1).ok_or(Error::RankDeficient {
        site: central.site_id(),
    })?;
    Ok(&inputs.beta_bar - chol.solve(&grad) * central.n() as f64)
}

/// Zero every coordinate with `|β_j| ≤ threshold`.
pub fn hard_threshold(beta: &Vector, threshold: f64) -> Vector {
    beta.map(|v| if v.abs() > threshold { v } else { 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> Vector {
        Vector::from_column_slice(x)
    }

    #[test]
    fn avgm_examples() {
        let (a, b) = (v(&[1.0, 2.0]), v(&[3.0, 4.0]));
        assert_eq!(avgm(&[&a, &b]).unwrap(), v(&[2.0, 3.0]));
        assert_eq!(avgm(&[&a]).unwrap(), a);
        assert!(avgm(&[]).is_err());
    }

    #[test]
    fn avgm_wald_examples() {
        assert_eq!(avgm_wald(&[0.0; 4]).unwrap(), 0.0);
        assert_eq!(avgm_wald(&[1.0; 4]).unwrap(), 2.0);
        assert!(avgm_wald(&[]).is_err());
    }

    #[test]
    fn opt_hand_example() {
        let st = |s: f64, xty: f64| SufficientStats {
            s: Mat::from_element(1, 1, s),
            xty: v(&[xty]),
            yty: 100.0,
            n: 5,
        };
        let (a, b) = (st(2.0, 2.0), st(3.0, 9.0));
        let (beta, _) = opt_fit(&[&a, &b]).unwrap();
        assert!((beta[0] - 2.2).abs() < 1e-15);
    }

    #[test]
    fn csl_gradient_hand() {
        let d = SiteData::new(Mat::from_element(2, 1, 1.0), v(&[2.0, 2.0]), 1).unwrap();
        assert_eq!(csl_gradient(&d, &v(&[0.0])).unwrap(), v(&[-2.0]));
    }

    #[test]
    fn csl_hand_example() {
        let x = Mat::from_element(2, 1, 1.0);
        let d1 = SiteData::new(x.clone(), v(&[1.0, 1.0]), 1).unwrap();
        let d2 = SiteData::new(x, v(&[3.0, 3.0]), 2).unwrap();
        let bar = v(&[0.0]);
        let inputs = CslInputs {
            gradients: vec![csl_gradient(&d1, &bar).unwrap(), csl_gradient(&d2, &bar).unwrap()],
            beta_bar: bar,
            central: &d1,
        };
        assert_eq!(inputs.global_gradient().unwrap(), v(&[-2.0]));
        assert!((csl_fit(&inputs).unwrap()[0] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn hard_threshold_zeroes_small() {
        assert_eq!(hard_threshold(&v(&[0.5, -0.1, 0.2]), 0.2), v(&[0.5, 0.0, 0.0]));
    }
}
