//! End-to-end estimators run from the central site over a transport.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{avgm, avgm_wald, csl_fit, csl_gradient, local_wald, opt_fit, CslInputs};
use crate::cedar::{cedar_fit_from_local, CedarFit, CedarOptions};
use crate::error::{Error, Result};
use crate::inference::cedar_covariance;
use crate::linalg::{spd_inverse, Mat, Vector};
use crate::model::{local_mle, sufficient_stats, LocalFit, SiteData};
use crate::posterior::DEFAULT_PSI;
use crate::protocol::{run_round, CommTrace, Hypothesis, SitePayload, Task, TaskRequest, Transport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Avgm,
    Opt,
    /// Surrogate likelihood initialized at the central OLS.
    Csl1,
    /// Surrogate likelihood initialized at the AVGM estimate.
    CslA,
    Cedar(usize),
}

impl Method {
    pub fn expected_rounds(self) -> usize {
        match self {
            Method::CslA => 2,
            _ => 1,
        }
    }

    pub fn k(self) -> usize {
        match self {
            Method::Cedar(k) => k,
            _ => 0,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Avgm => f.write_str("avgm"),
            Method::Opt => f.write_str("opt"),
            Method::Csl1 => f.write_str("csl1"),
            Method::CslA => f.write_str("csla"),
            Method::Cedar(k) => write!(f, "cedar{k}"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "avgm" => Ok(Method::Avgm),
            "opt" => Ok(Method::Opt),
            "csl1" => Ok(Method::Csl1),
            "csla" => Ok(Method::CslA),
            other => other
                .strip_prefix("cedar")
                .and_then(|k| if k.is_empty() { Some(0) } else { k.parse().ok() })
                .map(Method::Cedar)
                .ok_or_else(|| Error::InvalidConfig(format!("unknown method '{s}'"))),
        }
    }
}

impl Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriverOptions {
    pub psi: f64,
    pub cedar: CedarOptions,
    /// Per-coefficient null values; when set AVGM asks sites for Wald statistics.
    pub nulls: Option<Vec<f64>>,
}

impl Default for DriverOptions {
    fn default() -> Self {
        DriverOptions {
            psi: DEFAULT_PSI,
            cedar: CedarOptions::default(),
            nulls: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MethodFit {
    pub method: Method,
    pub beta: Vector,
    /// Estimated covariance of `beta`, when the method provides one.
    pub covariance: Option<Mat>,
    /// Combined AVGM Wald statistics, one per coefficient.
    pub combined_wald: Option<Vec<f64>>,
    pub cedar: Option<CedarFit>,
    pub trace: CommTrace,
    #[serde(skip)]
    pub payloads: Vec<SitePayload>,
}

/// The central site's view: its own data plus the ids of remote sites.
pub struct Central<'a> {
    pub data: &'a SiteData,
    pub remote: Vec<u32>,
    local: LocalFit,
}

impl<'a> Central<'a> {
    pub fn new(data: &'a SiteData, remote: Vec<u32>) -> Result<Self> {
        if remote.contains(&data.site_id()) {
            return Err(Error::InvalidConfig("central site listed as remote".into()));
        }
        Ok(Central {
            local: local_mle(data)?,
            data,
            remote,
        })
    }

    pub fn local(&self) -> &LocalFit {
        &self.local
    }

    pub fn m(&self) -> usize {
        self.remote.len() + 1
    }
}

fn session_round(
    transport: &mut dyn Transport,
    central: &Central<'_>,
    session: &str,
    trace: &mut CommTrace,
    request: &TaskRequest,
) -> Result<Vec<SitePayload>> {
    let round = trace.rounds as u32 + 1;
    let (payloads, t) = run_round(transport, session, round, request, &central.remote)?;
    trace.merge(&t);
    Ok(payloads)
}

/// Run `method` with the central site's data and remote sites reached via
/// `transport`. `session` names the rounds of this run.
pub fn run_method(
    method: Method,
    central: &Central<'_>,
    transport: &mut dyn Transport,
    session: &str,
    opts: &DriverOptions,
) -> Result<MethodFit> {
    let mut trace = CommTrace::default();
    let local = central.local();
    let p = local.p;
    let mut fit = MethodFit {
        method,
        beta: Vector::zeros(p),
        covariance: None,
        combined_wald: None,
        cedar: None,
        trace: CommTrace::default(),
        payloads: Vec::new(),
    };
    match method {
        Method::Avgm => {
            let request = match &opts.nulls {
                Some(nulls) => TaskRequest::wald_stats(Hypothesis {
                    nulls: nulls.iter().copied().enumerate().collect(),
                    alpha: 0.05,
                }),
                None => TaskRequest::new(Task::MleOnly),
            };
            let payloads = session_round(transport, central, session, &mut trace, &request)?;
            let betas: Vec<&Vector> = std::iter::once(&local.beta_hat)
                .chain(payloads.iter().map(|pl| &pl.beta_hat))
                .collect();
            fit.beta = avgm(&betas)?;
            if let Some(nulls) = &opts.nulls {
                let pairs: Vec<(usize, f64)> = nulls.iter().copied().enumerate().collect();
                let own = local_wald(local, central.data, &pairs)?;
                let mut combined = Vec::with_capacity(p);
                for j in 0..p {
                    let mut w = vec![own[j]];
                    for pl in &payloads {
                        let site_w = pl.wald.as_ref().ok_or_else(|| {
                            Error::Validation(format!("site {} sent no Wald statistics", pl.site_id))
                        })?;
                        w.push(site_w[j]);
                    }
                    combined.push(avgm_wald(&w)?);
                }
                fit.combined_wald = Some(combined);
            }
            fit.payloads = payloads;
        }
        Method::Opt => {
            let payloads = session_round(
                transport,
                central,
                session,
                &mut trace,
                &TaskRequest::new(Task::SufficientStats),
            )?;
            let own = sufficient_stats(central.data);
            let mut stats = vec![&own];
            for pl in &payloads {
                stats.push(pl.stats.as_ref().ok_or_else(|| {
                    Error::Validation(format!("site {} sent no sufficient statistics", pl.site_id))
                })?);
            }
            let (beta, var) = opt_fit(&stats)?;
            fit.beta = beta;
            fit.covariance = Some(var);
            fit.payloads = payloads;
        }
        Method::Csl1 | Method::CslA => {
            let beta_bar = if method == Method::CslA {
                let first = session_round(
                    transport,
                    central,
                    session,
                    &mut trace,
                    &TaskRequest::new(Task::MleOnly),
                )?;
                let betas: Vec<&Vector> = std::iter::once(&local.beta_hat)
                    .chain(first.iter().map(|pl| &pl.beta_hat))
                    .collect();
                avgm(&betas)?
            } else {
                local.beta_hat.clone()
            };
            let payloads = session_round(
                transport,
                central,
                session,
                &mut trace,
                &TaskRequest::csl_gradient(&beta_bar),
            )?;
            let mut gradients = vec![csl_gradient(central.data, &beta_bar)?];
            for pl in &payloads {
                gradients.push(pl.gradient.clone().ok_or_else(|| {
                    Error::Validation(format!("site {} sent no gradient", pl.site_id))
                })?);
            }
            let total_n: usize = local.n + payloads.iter().map(|pl| pl.n).sum::<usize>();
            let inputs = CslInputs {
                beta_bar,
                gradients,
                central: central.data,
            };
            fit.beta = csl_fit(&inputs)?;
            fit.covariance = Some(csl_covariance(central.data, &fit.beta, total_n)?);
            fit.payloads = payloads;
        }
        Method::Cedar(k) => {
            let request = if k == 0 {
                TaskRequest::new(Task::MleOnly)
            } else {
                TaskRequest::mle_plus_posterior(k, opts.psi)
            };
            let payloads = session_round(transport, central, session, &mut trace, &request)?;
            let cf = cedar_fit_from_local(local, &payloads, &opts.cedar)?;
            fit.beta = cf.beta.clone();
            fit.covariance = Some(cedar_covariance(&cf)?);
            fit.cedar = Some(cf);
            fit.payloads = payloads;
        }
    }
    fit.trace = trace;
    Ok(fit)
}

/// `Î⁻¹/N` with `Î = S₁/(n σ̂²)` and `σ̂²` the central residual variance at `beta`.
pub fn csl_covariance(central: &SiteData, beta: &Vector, total_n: usize) -> Result<Mat> {
    let n = central.n() as f64;
    let resid = central.y() - central.x() * beta;
    let sigma_sq = resid.norm_squared() / n;
    let s1 = central.x().tr_mul(central.x());
    let s1_inv = spd_inverse(&s1).ok_or(Error::RankDeficient {
        site: central.site_id(),
    })?;
    Ok(s1_inv * (n * sigma_sq / total_n as f64))
}
