use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::drivers::{run_method, Central, DriverOptions, Method, MethodFit};
use crate::error::{Error, Result};
use crate::inference::{normal_quantile, wald_from_se, Sided, WaldResult};
use crate::model::{read_site_csv, SiteData};
use crate::protocol::{CommTrace, FileDropTransport, SiteNode};
use crate::seed::derive_seed;

#[derive(Debug, Clone)]
pub struct AnalysisOptions {
    pub method: Method,
    pub driver: DriverOptions,
    pub alpha: f64,
    pub sided: Sided,
    /// Root of the file-drop exchange directory.
    pub work_dir: PathBuf,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SiteSummary {
    pub site_id: u32,
    pub path: String,
    pub n: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalysisReport {
    pub method: Method,
    pub p: usize,
    pub sites: Vec<SiteSummary>,
    pub fit: MethodFit,
    pub wald: Vec<WaldResult>,
    /// `(lo, hi)` per coefficient.
    pub intervals: Vec<(f64, f64)>,
    pub trace: CommTrace,
}

/// Fit `method` to site CSV files; the first file is the central site.
pub fn analyze_csv(paths: &[impl AsRef<Path>], opts: &AnalysisOptions) -> Result<AnalysisReport> {
    if paths.is_empty() {
        return Err(Error::Empty("no site files"));
    }
    let mut sites: Vec<SiteData> = Vec::with_capacity(paths.len());
    for (i, path) in paths.iter().enumerate() {
        let data = read_site_csv(path, i as u32 + 1)?;
        if let Some(first) = sites.first() {
            if data.p() != first.p() {
                return Err(Error::DimensionMismatch(format!(
                    "{} has {} features but {} has {}",
                    path.as_ref().display(),
                    data.p(),
                    paths[0].as_ref().display(),
                    first.p()
                )));
            }
        }
        sites.push(data);
    }
    let nodes: Vec<SiteNode> = sites[1..]
        .iter()
        .map(|d| SiteNode::new(d.clone(), derive_seed(opts.seed, &[d.site_id() as u64])))
        .collect();
    let remote: Vec<u32> = nodes.iter().map(SiteNode::site_id).collect();
    let mut transport = FileDropTransport::new(&opts.work_dir, nodes);
    let central = Central::new(&sites[0], remote)?;
    let fit = run_method(opts.method, &central, &mut transport, &opts.method.to_string(), &opts.driver)?;

    let p = sites[0].p();
    let mut wald = Vec::new();
    let mut intervals = Vec::new();
    if let Some(cov) = &fit.covariance {
        let z = normal_quantile(1.0 - opts.alpha / 2.0).max(0.0);
        for j in 0..p {
            let se = cov[(j, j)].sqrt();
            wald.push(wald_from_se(fit.beta[j], se, j, 0.0, opts.alpha, opts.sided)?);
            intervals.push((fit.beta[j] - z * se, fit.beta[j] + z * se));
        }
    }
    Ok(AnalysisReport {
        method: opts.method,
        p,
        sites: sites
            .iter()
            .zip(paths)
            .map(|(d, path)| SiteSummary {
                site_id: d.site_id(),
                path: path.as_ref().display().to_string(),
                n: d.n(),
            })
            .collect(),
        trace: fit.trace.clone(),
        fit,
        wald,
        intervals,
    })
}
