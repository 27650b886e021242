//! Seeded simulation studies and the multi-file analysis workflow.
//!
//! Every random quantity is drawn from a stream derived from the master seed
//! and its position in the run (grid point, replicate, site), so results do
//! not depend on evaluation order.

mod analyze;
mod config;
mod report;
mod roc;
mod privacy_grid;

use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use analyze::{analyze_csv, AnalysisOptions, AnalysisReport, SiteSummary};
pub use config::{BetaDesign, ExperimentConfig, GridPoint, SparseConfig, TestConfig};
pub use report::{
    aggregate, read_rows, summary_csv, write_gnuplot, write_rows, PowerRow, SummaryRow,
};
pub use roc::{auc_from_scores, run_roc_study, RocPoint, RocStudy, RocSummary};
pub use privacy_grid::{run_privacy_grid, write_privacy_grid, PrivacyGrid, PrivacyGridRow};

use crate::drivers::{run_method, Central, DriverOptions, MethodFit};
use crate::error::Result;
use crate::inference::{normal_quantile, wald_from_se, Sided};
use crate::linalg::Vector;
use crate::model::{generate_site_data, GroundTruth, SiteData};
use crate::protocol::{InProcessTransport, SiteNode};
use crate::seed::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    pub p: usize,
    pub n: usize,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub replicate: usize,
    pub l2_error: Option<f64>,
    pub power: Option<f64>,
    pub specificity: Option<f64>,
    pub comm_rounds: Option<usize>,
    pub comm_bytes: Option<usize>,
    pub wall_ms: Option<u64>,
    pub failed: Option<String>,
}

/// One simulated federation: ground truth plus every site's data.
pub struct Replicate {
    pub truth: GroundTruth,
    pub sites: Vec<SiteData>,
    pub node_seeds: Vec<u64>,
}

impl Replicate {
    /// Sites are numbered `1..=M`; site 1 is central.
    pub fn generate(cfg: &ExperimentConfig, point: &GridPoint, replicate: usize) -> Result<Self> {
        let base = derive_seed(cfg.master_seed, &[point.n as u64, point.m as u64, replicate as u64]);
        let truth = cfg.truth(derive_seed(base, &[0]))?;
        let mut sites = Vec::with_capacity(point.m);
        let mut node_seeds = Vec::with_capacity(point.m);
        for site in 1..=point.m as u64 {
            let data = generate_site_data(&truth, point.n, derive_seed(base, &[1, site]))?;
            sites.push(data.with_site_id(site as u32));
            node_seeds.push(derive_seed(base, &[2, site]));
        }
        Ok(Replicate {
            truth,
            sites,
            node_seeds,
        })
    }

    /// Remote site handlers, each owning its data.
    pub fn remote_nodes(&self) -> Vec<SiteNode> {
        self.sites[1..]
            .iter()
            .zip(&self.node_seeds[1..])
            .map(|(d, &s)| SiteNode::new(d.clone(), s))
            .collect()
    }

    pub fn remote_ids(&self) -> Vec<u32> {
        self.sites[1..].iter().map(|d| d.site_id()).collect()
    }
}

/// Fraction of rejected tests on the support and of accepted tests off it.
fn test_rates(
    fit: &MethodFit,
    truth: &GroundTruth,
    tests: &TestConfig,
) -> Result<(Option<f64>, Option<f64>)> {
    let p = fit.beta.len();
    let rejects: Vec<bool> = if let Some(w) = &fit.combined_wald {
        let crit = match tests.alternative {
            Sided::Two => normal_quantile(1.0 - tests.alpha / 2.0),
            Sided::Greater => normal_quantile(1.0 - tests.alpha),
        };
        w.iter()
            .map(|&w| match tests.alternative {
                Sided::Two => w.abs() > crit,
                Sided::Greater => w > crit,
            })
            .collect()
    } else if let Some(cov) = &fit.covariance {
        (0..p)
            .map(|j| {
                wald_from_se(fit.beta[j], cov[(j, j)].sqrt(), j, 0.0, tests.alpha, tests.alternative)
                    .map(|r| r.reject)
            })
            .collect::<Result<_>>()?
    } else {
        return Ok((None, None));
    };
    let support = truth.support();
    let (mut hit, mut pos, mut keep, mut neg) = (0usize, 0usize, 0usize, 0usize);
    for (j, &r) in rejects.iter().enumerate() {
        if support.contains(&j) {
            pos += 1;
            hit += r as usize;
        } else {
            neg += 1;
            keep += !r as usize;
        }
    }
    let rate = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
    Ok((rate(hit, pos), rate(keep, neg)))
}

fn l2(a: &Vector, b: &Vector) -> f64 {
    (a - b).norm()
}

/// Run every method on every grid point and replicate.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let methods = cfg.method_list()?;
    let mut rows = Vec::new();
    for point in cfg.grid()? {
        for replicate in 0..cfg.replicates {
            let rep = Replicate::generate(cfg, &point, replicate)?;
            let mut transport = InProcessTransport::new(rep.remote_nodes());
            let central = Central::new(&rep.sites[0], rep.remote_ids());
            let opts = DriverOptions {
                psi: cfg.psi,
                cedar: cfg.cedar,
                nulls: cfg.tests.as_ref().map(|_| vec![0.0; cfg.p]),
            };
            for &method in &methods {
                let mut row = ResultRow {
                    method: method.to_string(),
                    p: cfg.p,
                    n: point.n,
                    m: point.m,
                    k: method.k(),
                    replicate,
                    l2_error: None,
                    power: None,
                    specificity: None,
                    comm_rounds: None,
                    comm_bytes: None,
                    wall_ms: None,
                    failed: None,
                };
                let start = Instant::now();
                let outcome = central.as_ref().map_err(|e| e.to_string()).and_then(|c| {
                    run_method(method, c, &mut transport, &method.to_string(), &opts)
                        .map_err(|e| e.to_string())
                });
                match outcome {
                    Ok(fit) => {
                        row.l2_error = Some(l2(&fit.beta, &rep.truth.beta0));
                        row.comm_rounds = Some(fit.trace.rounds);
                        row.comm_bytes = Some(fit.trace.total_bytes());
                        if let Some(tests) = &cfg.tests {
                            match test_rates(&fit, &rep.truth, tests) {
                                Ok((pw, sp)) => {
                                    row.power = pw;
                                    row.specificity = sp;
                                }
                                Err(e) => row.failed = Some(e.to_string()),
                            }
                        }
                    }
                    Err(e) => {
                        log::warn!("{method} failed at n={} M={} rep={replicate}: {e}", point.n, point.m);
                        row.failed = Some(e);
                    }
                }
                if cfg.record_wall_ms {
                    row.wall_ms = Some(start.elapsed().as_millis() as u64);
                }
                rows.push(row);
            }
        }
    }
    Ok(rows)
}

/// Per-method power and specificity.
pub fn run_power_study(cfg: &ExperimentConfig) -> Result<Vec<PowerRow>> {
    if cfg.tests.is_none() {
        return Err(crate::Error::InvalidConfig("power study needs a tests section".into()));
    }
    let rows = run_experiment(cfg)?;
    Ok(report::power_table(&rows))
}
