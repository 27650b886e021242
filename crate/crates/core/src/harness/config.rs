use serde::{Deserialize, Deserializer, Serialize};

use crate::cedar::CedarOptions;
use crate::drivers::Method;
use crate::error::{Error, Result};
use crate::inference::Sided;
use crate::linalg::Vector;
use crate::model::GroundTruth;
use crate::posterior::DEFAULT_PSI;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaDesign {
    /// First `⌊p/4⌋` coefficients `U(0,1)`, the rest zero; mixed feature laws.
    #[default]
    Sparse,
    /// `β₀ = 0` with the same feature laws.
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SparseConfig {
    /// Per-observation penalty levels; empty picks a path from each method's
    /// smallest all-zero level.
    #[serde(default)]
    pub lambdas: Vec<f64>,
    /// Hard-threshold levels for AVGM; empty ranks by `|β̂_j|`.
    #[serde(default)]
    pub thresholds: Vec<f64>,
    #[serde(default = "default_path_len")]
    pub path_len: usize,
}

fn default_path_len() -> usize {
    20
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestConfig {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_alternative")]
    pub alternative: Sided,
}

fn default_alpha() -> f64 {
    0.05
}

fn default_alternative() -> Sided {
    Sided::Greater
}

fn one_or_many<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<usize>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(usize),
        Many(Vec<usize>),
    }
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(v) => vec![v],
        OneOrMany::Many(v) => v,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub p: usize,
    #[serde(deserialize_with = "one_or_many")]
    pub n: Vec<usize>,
    #[serde(rename = "M", default, deserialize_with = "one_or_many")]
    pub m: Vec<usize>,
    /// Fixed total sample size; `M = N/n` for each `n`.
    #[serde(rename = "N_fixed", default)]
    pub n_fixed: Option<usize>,
    #[serde(rename = "K", default = "default_k", deserialize_with = "one_or_many")]
    pub k: Vec<usize>,
    #[serde(default = "default_psi")]
    pub psi: f64,
    #[serde(default = "default_methods")]
    pub methods: Vec<String>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub sparse: Option<SparseConfig>,
    #[serde(default)]
    pub tests: Option<TestConfig>,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_sigma0_sq")]
    pub sigma0_sq: f64,
    #[serde(default)]
    pub beta_design: BetaDesign,
    #[serde(default)]
    pub record_wall_ms: bool,
    #[serde(default)]
    pub cedar: CedarOptions,
}

fn default_k() -> Vec<usize> {
    vec![0, 4, 16]
}

fn default_psi() -> f64 {
    DEFAULT_PSI
}

fn default_methods() -> Vec<String> {
    ["avgm", "opt", "csl1", "csla", "cedar"].map(String::from).to_vec()
}

fn default_replicates() -> usize {
    100
}

fn default_sigma0_sq() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridPoint {
    pub n: usize,
    pub m: usize,
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.p == 0 {
            return bad("p must be positive");
        }
        if self.n.is_empty() {
            return bad("n grid is empty");
        }
        if self.n_fixed.is_none() && self.m.is_empty() {
            return bad("M grid is empty and N_fixed is not set");
        }
        if self.replicates == 0 {
            return bad("replicates must be at least 1");
        }
        if !(self.psi > 0.0) || !(self.sigma0_sq > 0.0) {
            return bad("psi and sigma0_sq must be positive");
        }
        if let Some(t) = &self.tests {
            if !(t.alpha > 0.0 && t.alpha < 1.0) {
                return bad("tests.alpha must lie in (0, 1)");
            }
        }
        self.method_list()?;
        self.grid()?;
        Ok(())
    }

    /// Methods in run order; a bare `cedar` expands over the K list.
    pub fn method_list(&self) -> Result<Vec<Method>> {
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig("no methods selected".into()));
        }
        let mut out = Vec::new();
        for name in &self.methods {
            if name.eq_ignore_ascii_case("cedar") {
                if self.k.is_empty() {
                    return Err(Error::InvalidConfig("K list is empty".into()));
                }
                out.extend(self.k.iter().map(|&k| Method::Cedar(k)));
            } else {
                out.push(name.parse()?);
            }
        }
        Ok(out)
    }

    pub fn grid(&self) -> Result<Vec<GridPoint>> {
        let mut out = Vec::new();
        if let Some(total) = self.n_fixed {
            for &n in &self.n {
                if n == 0 || total % n != 0 {
                    return Err(Error::InvalidConfig(format!("N_fixed = {total} is not a multiple of n = {n}")));
                }
                out.push(GridPoint { n, m: total / n });
            }
        } else {
            for &n in &self.n {
                for &m in &self.m {
                    out.push(GridPoint { n, m });
                }
            }
        }
        if out.iter().any(|g| g.m == 0 || g.n == 0) {
            return Err(Error::InvalidConfig("n and M must be positive".into()));
        }
        Ok(out)
    }

    pub fn truth(&self, seed: u64) -> Result<GroundTruth> {
        let t = GroundTruth::simulation_design(self.p, self.sigma0_sq, seed)?;
        match self.beta_design {
            BetaDesign::Sparse => Ok(t),
            BetaDesign::Zero => GroundTruth::new(Vector::zeros(self.p), self.sigma0_sq, t.feature_law),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_scalars_and_lists() {
        let cfg = ExperimentConfig::from_json(
            r#"{"p": 4, "n": 8, "M": [16, 64], "K": [0, 16], "methods": ["avgm", "cedar"], "replicates": 3}"#,
        )
        .unwrap();
        assert_eq!(cfg.grid().unwrap().len(), 2);
        assert_eq!(
            cfg.method_list().unwrap(),
            vec![Method::Avgm, Method::Cedar(0), Method::Cedar(16)]
        );
    }

    #[test]
    fn fixed_total() {
        let cfg = ExperimentConfig::from_json(r#"{"p": 2, "n": [8, 16], "N_fixed": 256}"#).unwrap();
        let g = cfg.grid().unwrap();
        assert_eq!((g[0].m, g[1].m), (32, 16));
        assert!(ExperimentConfig::from_json(r#"{"p": 2, "n": [7], "N_fixed": 256}"#).is_err());
    }

    #[test]
    fn rejects_bad_config() {
        for s in [
            r#"{"p": 4, "n": [], "M": 4}"#,
            r#"{"p": 4, "n": 8, "M": 4, "replicates": 0}"#,
            r#"{"p": 4, "n": 8, "M": 4, "methods": ["bogus"]}"#,
            r#"{"p": 4, "n": 8, "M": 4, "unknown": 1}"#,
        ] {
            assert!(ExperimentConfig::from_json(s).is_err(), "{s}");
        }
    }
}
