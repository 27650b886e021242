use serde::{Deserialize, Serialize};

use crate::baselines::{avgm, csl_gradient, hard_threshold, opt_fit, CslInputs};
use crate::cedar::{cedar_fit_warm, solve_quadratic_lasso, CedarFit, CedarOptions, ProxOptions};
use crate::drivers::{run_method, Central, DriverOptions, Method};
use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};
use crate::model::{sufficient_stats, GroundTruth};
use crate::protocol::InProcessTransport;

use super::{ExperimentConfig, Replicate};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub method: String,
    pub n: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub replicate: usize,
    /// Penalty or threshold level.
    pub level: f64,
    pub tpr: f64,
    pub fpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocSummary {
    pub method: String,
    pub p: usize,
    pub n: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub replicates: usize,
    pub failed: usize,
    pub mean_auc: f64,
    pub se_auc: f64,
}

#[derive(Debug, Clone, Default)]
pub struct RocStudy {
    pub points: Vec<RocPoint>,
    /// `(method, n, M, replicate, auc)`.
    pub aucs: Vec<(String, usize, usize, usize, f64)>,
    pub summary: Vec<RocSummary>,
}

/// Area under the ROC curve of a variable ranking: the probability that a
/// support coordinate outranks a null one, ties counting one half.
pub fn auc_from_scores(scores: &[f64], support: &[usize]) -> Option<f64> {
    let (pos, neg): (Vec<_>, Vec<_>) = (0..scores.len()).partition(|j| support.contains(j));
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut acc = 0.0;
    for &i in &pos {
        for &j in &neg {
            acc += match scores[i].partial_cmp(&scores[j]) {
                Some(std::cmp::Ordering::Greater) => 1.0,
                Some(std::cmp::Ordering::Equal) => 0.5,
                _ => 0.0,
            };
        }
    }
    Some(acc / (pos.len() * neg.len()) as f64)
}

fn rates(beta: &Vector, support: &[usize]) -> (f64, f64) {
    let p = beta.len();
    let pos = support.len().max(1) as f64;
    let neg = (p - support.len()).max(1) as f64;
    let (mut tp, mut fp) = (0.0, 0.0);
    for j in 0..p {
        if beta[j] != 0.0 {
            if support.contains(&j) {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
        }
    }
    (tp / pos, fp / neg)
}

/// Levels in decreasing order, ending at zero.
fn level_grid(given: &[f64], top: f64, len: usize) -> Vec<f64> {
    let mut levels: Vec<f64> = if given.is_empty() {
        let top = top.max(f64::MIN_POSITIVE) * 1.05;
        let len = len.max(2);
        (0..len)
            .map(|i| top * 1e-4f64.powf(i as f64 / (len - 1) as f64))
            .collect()
    } else {
        given.to_vec()
    };
    levels.sort_by(|a, b| b.total_cmp(a));
    if levels.last() != Some(&0.0) {
        levels.push(0.0);
    }
    levels
}

/// A path of `(level, estimate)` pairs; the score of a coordinate is the
/// largest level at which it is selected.
fn path_scores(path: &[(f64, Vector)], p: usize) -> Vec<f64> {
    (0..p)
        .map(|j| {
            path.iter()
                .filter(|(_, b)| b[j] != 0.0)
                .map(|(l, _)| *l)
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

fn lasso_path(h: &Mat, g: &Vector, given: &[f64], len: usize) -> Result<Vec<(f64, Vector)>> {
    let levels = level_grid(given, g.amax(), len);
    let mut start = Vector::zeros(g.len());
    let mut out = Vec::with_capacity(levels.len());
    for lambda in levels {
        let b = solve_quadratic_lasso(h, g, lambda, &start, ProxOptions::default())?;
        start = b.clone();
        out.push((lambda, b));
    }
    Ok(out)
}

fn cedar_path(
    central: &Central<'_>,
    payloads: &[crate::protocol::SitePayload],
    base: &CedarOptions,
    given: &[f64],
    len: usize,
) -> Result<Vec<(f64, Vector)>> {
    let dense = cedar_fit_warm(central.local(), payloads, base, None)?;
    let n_total = dense.n_total as f64;
    // Per-observation level λ enters the loglikelihood as Nλ.
    let h: Mat = dense.s_hat.iter().fold(Mat::zeros(dense.beta.len(), dense.beta.len()), |a, s| a + s);
    let top = (&h * &dense.beta).amax() / (dense.sigma_sq * n_total);
    let levels = level_grid(given, top, len);
    let mut prev: Option<CedarFit> = None;
    let mut out = Vec::with_capacity(levels.len());
    for lambda in levels {
        let fit = if lambda == 0.0 {
            dense.clone()
        } else {
            let opts = CedarOptions {
                penalty_lambda: lambda * n_total,
                ..*base
            };
            cedar_fit_warm(central.local(), payloads, &opts, prev.as_ref().or(Some(&dense)))?
        };
        out.push((lambda, fit.beta.clone()));
        prev = Some(fit);
    }
    Ok(out)
}

fn method_path(
    method: Method,
    rep: &Replicate,
    cfg: &ExperimentConfig,
) -> Result<(Vec<(f64, Vector)>, Option<Vec<f64>>)> {
    let sparse = cfg.sparse.as_ref().expect("validated");
    let central = Central::new(&rep.sites[0], rep.remote_ids())?;
    let mut transport = InProcessTransport::new(rep.remote_nodes());
    let opts = DriverOptions {
        psi: cfg.psi,
        cedar: cfg.cedar,
        nulls: None,
    };
    let session = method.to_string();
    let fit = run_method(method, &central, &mut transport, &session, &opts)?;
    let p = cfg.p;
    match method {
        Method::Avgm => {
            let levels = if sparse.thresholds.is_empty() {
                let mut l: Vec<f64> = fit.beta.iter().map(|v| v.abs()).collect();
                l.push(fit.beta.amax() * 1.05);
                level_grid(&l, 0.0, 0)
            } else {
                level_grid(&sparse.thresholds, 0.0, 0)
            };
            // A coordinate survives thresholds strictly below its magnitude.
            let path = levels
                .into_iter()
                .map(|t| (t, hard_threshold(&fit.beta, t)))
                .collect();
            let scores = fit.beta.iter().map(|v| v.abs()).collect();
            Ok((path, Some(scores)))
        }
        Method::Opt => {
            let own = sufficient_stats(central.data);
            let mut stats = vec![&own];
            for pl in &fit.payloads {
                stats.push(pl.stats.as_ref().ok_or_else(|| Error::Validation("missing stats".into()))?);
            }
            let _ = opt_fit(&stats)?;
            let total_n: usize = stats.iter().map(|s| s.n).sum();
            let (mut h, mut g) = (Mat::zeros(p, p), Vector::zeros(p));
            for s in &stats {
                h += &s.s;
                g += &s.xty;
            }
            let path = lasso_path(&(h / total_n as f64), &(g / total_n as f64), &sparse.lambdas, sparse.path_len)?;
            Ok((path, None))
        }
        Method::Csl1 | Method::CslA => {
            let beta_bar = match method {
                Method::CslA => {
                    let betas: Vec<&Vector> = std::iter::once(&central.local().beta_hat)
                        .chain(fit.payloads.iter().map(|pl| &pl.beta_hat))
                        .collect();
                    avgm(&betas)?
                }
                _ => central.local().beta_hat.clone(),
            };
            let mut gradients = vec![csl_gradient(central.data, &beta_bar)?];
            gradients.extend(fit.payloads.iter().filter_map(|pl| pl.gradient.clone()));
            let inputs = CslInputs {
                beta_bar: beta_bar.clone(),
                gradients,
                central: central.data,
            };
            // Surrogate loss: ½βᵀ(S₁/n)β − (X₁ᵀy₁/n + ∇L₁(β̄) − ∇L(β̄))ᵀβ.
            let n1 = central.data.n() as f64;
            let h = central.data.x().tr_mul(central.data.x()) / n1;
            let g = central.data.x().tr_mul(central.data.y()) / n1
                + csl_gradient(central.data, &beta_bar)?
                - inputs.global_gradient()?;
            Ok((lasso_path(&h, &g, &sparse.lambdas, sparse.path_len)?, None))
        }
        Method::Cedar(_) => Ok((
            cedar_path(&central, &fit.payloads, &cfg.cedar, &sparse.lambdas, sparse.path_len)?,
            None,
        )),
    }
}

/// TPR/FPR along each method's selection path and the per-replicate AUC.
pub fn run_roc_study(cfg: &ExperimentConfig) -> Result<RocStudy> {
    cfg.validate()?;
    if cfg.sparse.is_none() {
        return Err(Error::InvalidConfig("ROC study needs a sparse section".into()));
    }
    let methods = cfg.method_list()?;
    let mut study = RocStudy::default();
    for point in cfg.grid()? {
        let mut failed = vec![0usize; methods.len()];
        for replicate in 0..cfg.replicates {
            let rep = Replicate::generate(cfg, &point, replicate)?;
            let support = support_of(&rep.truth);
            for (mi, &method) in methods.iter().enumerate() {
                let (path, scores) = match method_path(method, &rep, cfg) {
                    Ok(v) => v,
                    Err(e) => {
                        log::warn!("{method} ROC failed at replicate {replicate}: {e}");
                        failed[mi] += 1;
                        continue;
                    }
                };
                for (level, beta) in &path {
                    let (tpr, fpr) = rates(beta, &support);
                    study.points.push(RocPoint {
                        method: method.to_string(),
                        n: point.n,
                        m: point.m,
                        replicate,
                        level: *level,
                        tpr,
                        fpr,
                    });
                }
                let scores = scores.unwrap_or_else(|| path_scores(&path, cfg.p));
                if let Some(auc) = auc_from_scores(&scores, &support) {
                    study
                        .aucs
                        .push((method.to_string(), point.n, point.m, replicate, auc));
                }
            }
        }
        for (mi, method) in methods.iter().enumerate() {
            let tag = method.to_string();
            let vals: Vec<f64> = study
                .aucs
                .iter()
                .filter(|a| a.0 == tag && a.1 == point.n && a.2 == point.m)
                .map(|a| a.4)
                .collect();
            let (mean, se) = super::report::mean_se(&vals);
            study.summary.push(RocSummary {
                method: tag,
                p: cfg.p,
                n: point.n,
                m: point.m,
                replicates: vals.len(),
                failed: failed[mi],
                mean_auc: mean,
                se_auc: se,
            });
        }
    }
    Ok(study)
}

fn support_of(truth: &GroundTruth) -> Vec<usize> {
    truth.support()
}
