use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::ResultRow;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub p: usize,
    pub n: usize,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub replicates: usize,
    pub failed: usize,
    pub mean_l2: f64,
    pub se_l2: f64,
    pub mean_power: Option<f64>,
    pub mean_specificity: Option<f64>,
    pub comm_rounds: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerRow {
    pub method: String,
    pub p: usize,
    pub n: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub power: Option<f64>,
    pub specificity: Option<f64>,
    pub replicates: usize,
}

pub(crate) fn mean_se(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn mean_opt(v: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let vals: Vec<f64> = v.flatten().collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

type Key = (usize, usize, usize, String, usize);

fn grouped(rows: &[ResultRow]) -> BTreeMap<Key, Vec<&ResultRow>> {
    // Keyed so that output order is independent of row order.
    let mut groups: BTreeMap<Key, Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.p, r.n, r.m, r.method.clone(), r.k))
            .or_default()
            .push(r);
    }
    for g in groups.values_mut() {
        g.sort_by_key(|r| r.replicate);
    }
    groups
}

/// Mean error and test rates per `(method, p, n, M, K)`.
pub fn aggregate(rows: &[ResultRow]) -> Vec<SummaryRow> {
    grouped(rows)
        .into_iter()
        .map(|((p, n, m, method, k), g)| {
            let ok: Vec<&&ResultRow> = g.iter().filter(|r| r.failed.is_none()).collect();
            let errs: Vec<f64> = ok.iter().filter_map(|r| r.l2_error).collect();
            let (mean_l2, se_l2) = mean_se(&errs);
            let rounds: Vec<usize> = ok.iter().filter_map(|r| r.comm_rounds).collect();
            SummaryRow {
                method,
                p,
                n,
                m,
                k,
                replicates: g.len(),
                failed: g.len() - ok.len(),
                mean_l2,
                se_l2,
                mean_power: mean_opt(ok.iter().map(|r| r.power)),
                mean_specificity: mean_opt(ok.iter().map(|r| r.specificity)),
                comm_rounds: rounds.first().copied().filter(|r| rounds.iter().all(|x| x == r)),
            }
        })
        .collect()
}

pub(crate) fn power_table(rows: &[ResultRow]) -> Vec<PowerRow> {
    aggregate(rows)
        .into_iter()
        .map(|s| PowerRow {
            method: s.method,
            p: s.p,
            n: s.n,
            m: s.m,
            power: s.mean_power,
            specificity: s.mean_specificity,
            replicates: s.replicates - s.failed,
        })
        .collect()
}

pub fn write_rows<T: Serialize>(rows: &[T], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::InvalidData(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn summary_csv(rows: &[ResultRow]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_rows(&aggregate(rows), &mut buf)?;
    Ok(buf)
}

pub fn read_rows(path: &Path) -> Result<Vec<ResultRow>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Csv {
        path: path.display().to_string(),
        row: 0,
        detail: e.to_string(),
    })?;
    rdr.deserialize()
        .enumerate()
        .map(|(i, r)| {
            r.map_err(|e| Error::Csv {
                path: path.display().to_string(),
                row: i + 2,
                detail: e.to_string(),
            })
        })
        .collect()
}

/// One `<method>.dat` file per method with columns `n M K mean_l2 se_l2`.
/// CSL₁ is left out when its error exceeds ten times OPT's at any point.
pub fn write_gnuplot(summary: &[SummaryRow], dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let opt_at = |s: &SummaryRow| {
        summary
            .iter()
            .find(|o| o.method == "opt" && o.p == s.p && o.n == s.n && o.m == s.m)
            .map(|o| o.mean_l2)
    };
    let drop_csl1 = summary
        .iter()
        .filter(|s| s.method == "csl1")
        .any(|s| opt_at(s).is_some_and(|o| s.mean_l2 > 10.0 * o));
    let mut by_method: BTreeMap<&str, Vec<&SummaryRow>> = BTreeMap::new();
    for s in summary {
        if s.method == "csl1" && drop_csl1 {
            continue;
        }
        by_method.entry(&s.method).or_default().push(s);
    }
    let mut written = Vec::new();
    for (method, rows) in by_method {
        let path = dir.join(format!("{method}.dat"));
        let mut f = fs::File::create(&path)?;
        writeln!(f, "# n M K mean_l2 se_l2")?;
        for r in rows {
            writeln!(f, "{} {} {} {} {}", r.n, r.m, r.k, r.mean_l2, r.se_l2)?;
        }
        written.push(path);
    }
    Ok(written)
}
