//! Site/central message exchange.
//!
//! A round is one broadcast of a [`TaskRequest`] followed by collection of
//! one [`SitePayload`] from every addressed site. Requests travel as JSON,
//! payloads in the binary format documented in [`payload`].

mod payload;
mod transport;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use payload::{decode_payload, encode_payload, SitePayload, MAGIC, SCHEMA_VERSION};
pub use transport::{collect_round, FileDropTransport, InProcessTransport, Transport};

use crate::baselines::{csl_gradient, local_wald};
use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::model::{local_mle, sufficient_stats, SiteData};
use crate::posterior::{build_block, draw_posterior};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    MleOnly,
    MlePlusPosterior,
    CslGradient,
    WaldStats,
    SufficientStats,
}

/// Null values tested coefficient by coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    /// `(j, b0)` pairs, `j` zero-based.
    pub nulls: Vec<(usize, f64)>,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRequest {
    pub task: Task,
    #[serde(default)]
    pub k: usize,
    #[serde(default = "default_psi")]
    pub psi: f64,
    #[serde(default)]
    pub beta_bar: Option<Vec<f64>>,
    #[serde(default)]
    pub hypothesis: Option<Hypothesis>,
}

fn default_psi() -> f64 {
    crate::posterior::DEFAULT_PSI
}

impl TaskRequest {
    pub fn new(task: Task) -> Self {
        TaskRequest {
            task,
            k: 0,
            psi: default_psi(),
            beta_bar: None,
            hypothesis: None,
        }
    }

    pub fn mle_plus_posterior(k: usize, psi: f64) -> Self {
        TaskRequest {
            k,
            psi,
            ..Self::new(Task::MlePlusPosterior)
        }
    }

    pub fn csl_gradient(beta_bar: &Vector) -> Self {
        TaskRequest {
            beta_bar: Some(beta_bar.iter().copied().collect()),
            ..Self::new(Task::CslGradient)
        }
    }

    pub fn wald_stats(hypothesis: Hypothesis) -> Self {
        TaskRequest {
            hypothesis: Some(hypothesis),
            ..Self::new(Task::WaldStats)
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.task {
            Task::CslGradient => match &self.beta_bar {
                Some(b) if b.iter().all(|v| v.is_finite()) => {}
                Some(_) => return Err(Error::InvalidConfig("beta_bar must be finite".into())),
                None => return Err(Error::InvalidConfig("csl_gradient requires beta_bar".into())),
            },
            Task::MlePlusPosterior => {
                if self.k == 0 {
                    return Err(Error::InvalidConfig("mle_plus_posterior requires K >= 1".into()));
                }
                if !(self.psi > 0.0 && self.psi.is_finite()) {
                    return Err(Error::InvalidConfig("psi must be positive".into()));
                }
            }
            Task::WaldStats => {
                if self.hypothesis.is_none() {
                    return Err(Error::InvalidConfig("wald_stats requires a hypothesis".into()));
                }
            }
            Task::MleOnly | Task::SufficientStats => {}
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec(self)?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let req: TaskRequest = serde_json::from_slice(bytes)?;
        req.validate()?;
        Ok(req)
    }
}

/// Communication accounting across rounds.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommTrace {
    pub rounds: usize,
    /// Request bytes times sites plus all response bytes, per round.
    pub bytes_per_round: Vec<usize>,
    pub per_site_bytes: BTreeMap<u32, usize>,
}

impl CommTrace {
    pub fn total_bytes(&self) -> usize {
        self.bytes_per_round.iter().sum()
    }

    pub fn merge(&mut self, other: &CommTrace) {
        self.rounds += other.rounds;
        self.bytes_per_round.extend_from_slice(&other.bytes_per_round);
        for (site, b) in &other.per_site_bytes {
            *self.per_site_bytes.entry(*site).or_default() += b;
        }
    }
}

/// A remote site: owns its data and answers requests. Stateless between
/// rounds; posterior draws come from a fixed per-site seed.
#[derive(Debug, Clone)]
pub struct SiteNode {
    data: SiteData,
    seed: u64,
}

impl SiteNode {
    pub fn new(data: SiteData, seed: u64) -> Self {
        SiteNode { data, seed }
    }

    pub fn site_id(&self) -> u32 {
        self.data.site_id()
    }

    pub fn handle(&self, req: &TaskRequest) -> Result<SitePayload> {
        req.validate()?;
        let site = self.site_id();
        let fit = local_mle(&self.data)?;
        let mut payload = SitePayload::new(site, fit.n, fit.beta_hat.clone(), fit.sigma_hat_sq);
        match req.task {
            Task::MleOnly => {}
            Task::MlePlusPosterior => {
                let draws = draw_posterior(&fit, req.k, req.psi, self.seed)?;
                payload.block = Some(build_block(&draws, &fit));
            }
            Task::CslGradient => {
                let bar = req.beta_bar.as_ref().expect("validated");
                if bar.len() != fit.p {
                    return Err(Error::DimensionMismatch(format!(
                        "beta_bar has length {}, site has p = {}",
                        bar.len(),
                        fit.p
                    )));
                }
                payload.gradient = Some(csl_gradient(&self.data, &Vector::from_column_slice(bar))?);
            }
            Task::WaldStats => {
                let hyp = req.hypothesis.as_ref().expect("validated");
                payload.wald = Some(local_wald(&fit, &self.data, &hyp.nulls)?);
            }
            Task::SufficientStats => {
                payload.stats = Some(sufficient_stats(&self.data));
            }
        }
        Ok(payload)
    }

    /// Decode a raw request, answer it, encode the payload.
    pub fn serve(&self, request: &[u8]) -> Result<Vec<u8>> {
        let req = TaskRequest::from_bytes(request)?;
        encode_payload(&self.handle(&req)?)
    }
}

/// Broadcast one request and collect every addressed site's payload.
///
/// `session` namespaces rounds so several methods can share a transport.
pub fn run_round(
    transport: &mut dyn Transport,
    session: &str,
    round: u32,
    request: &TaskRequest,
    sites: &[u32],
) -> Result<(Vec<SitePayload>, CommTrace)> {
    request.validate()?;
    let req_bytes = request.to_bytes()?;
    let responses = transport.exchange(session, round, &req_bytes, sites)?;
    let missing: Vec<u32> = sites
        .iter()
        .copied()
        .filter(|s| !responses.iter().any(|(id, _)| id == s))
        .collect();
    if !missing.is_empty() {
        return Err(Error::IncompleteRound {
            round,
            missing,
        });
    }
    let mut trace = CommTrace {
        rounds: 1,
        ..CommTrace::default()
    };
    let mut total = 0;
    let mut payloads = Vec::with_capacity(sites.len());
    for &site in sites {
        let bytes = &responses.iter().find(|(id, _)| *id == site).expect("checked").1;
        let payload = decode_payload(bytes).map_err(|e| e.at_site(site))?;
        if payload.site_id != site {
            return Err(Error::Validation(format!(
                "payload from site {site} claims site_id {}",
                payload.site_id
            ))
            .at_site(site));
        }
        let b = req_bytes.len() + bytes.len();
        total += b;
        trace.per_site_bytes.insert(site, b);
        payloads.push(payload);
    }
    trace.bytes_per_round.push(total);
    Ok((payloads, trace))
}
