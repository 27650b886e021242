use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::privacy::{expected_epsilon_bound, mc_min_epsilon, McScenario};
use crate::seed::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyGrid {
    pub p: Vec<usize>,
    #[serde(rename = "K")]
    pub k: Vec<usize>,
    pub c: Vec<f64>,
    pub psi: f64,
    pub reps: usize,
    pub datasets: usize,
    pub seed: u64,
}

impl PrivacyGrid {
    pub fn standard(reps: usize, seed: u64) -> Self {
        PrivacyGrid {
            p: vec![4, 16],
            k: vec![4, 16],
            c: vec![1.0, 0.5, 0.25, 0.125, 0.0625],
            psi: crate::posterior::DEFAULT_PSI,
            reps,
            datasets: 8,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyGridRow {
    pub p: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub c: f64,
    pub n: usize,
    pub delta: f64,
    pub eps_mc: f64,
    pub eps_tail: f64,
    pub eps_forward_mean: f64,
    pub eps_expected: f64,
}

/// Minimum ε for every `(p, K, c)` cell with `n = p/c` and `δ = 1/n`.
pub fn run_privacy_grid(grid: &PrivacyGrid) -> Result<Vec<PrivacyGridRow>> {
    let mut rows = Vec::new();
    for &p in &grid.p {
        for &k in &grid.k {
            for &c in &grid.c {
                let mut sc = McScenario::grid_cell(p, k, c, grid.reps, 0);
                sc.psi = grid.psi;
                sc.datasets = grid.datasets;
                sc.seed = derive_seed(grid.seed, &[p as u64, k as u64, c.to_bits()]);
                let est = mc_min_epsilon(&sc)?;
                let fwd = est.per_dataset.iter().map(|d| d.eps_forward).sum::<f64>()
                    / est.per_dataset.len() as f64;
                rows.push(PrivacyGridRow {
                    p,
                    k,
                    c,
                    n: sc.n,
                    delta: sc.delta,
                    eps_mc: est.eps_mc,
                    eps_tail: est.eps_tail,
                    eps_forward_mean: fwd,
                    eps_expected: expected_epsilon_bound(k, c, sc.psi, sc.delta)?,
                });
            }
        }
    }
    Ok(rows)
}

/// Plain-text table: one line per `(p, K)`, one column per `c`.
pub fn write_privacy_grid(rows: &[PrivacyGridRow], mut out: impl Write) -> Result<()> {
    let mut cs: Vec<f64> = Vec::new();
    for r in rows {
        if !cs.contains(&r.c) {
            cs.push(r.c);
        }
    }
    write!(out, "{:>4} {:>4} |", "p", "K")?;
    for c in &cs {
        write!(out, " {:>8}", format!("c={c}"))?;
    }
    writeln!(out)?;
    let mut keys: Vec<(usize, usize)> = Vec::new();
    for r in rows {
        if !keys.contains(&(r.p, r.k)) {
            keys.push((r.p, r.k));
        }
    }
    for (p, k) in keys {
        write!(out, "{p:>4} {k:>4} |")?;
        for c in &cs {
            match rows.iter().find(|r| r.p == p && r.k == k && r.c == *c) {
                Some(r) => write!(out, " {:>8.3}", r.eps_mc)?,
                None => write!(out, " {:>8}", "-")?,
            }
        }
        writeln!(out)?;
    }
    Ok(())
}
