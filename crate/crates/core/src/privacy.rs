//! Differential-privacy accounting for released posterior draws.
//!
//! Neighbouring datasets differ by one point `(x, y)`: `D₂ = D₁ ∪ {(x, y)}`.
//! With `σ²` fixed, each of the `K` draws `β̃ ~ N(β_i, ψσ² S_i⁻¹)` contributes
//! a log-likelihood ratio that depends on the data only through the leverage
//! `c = xᵀS₁⁻¹x` and the residual `r = y − xᵀβ₁`. Writing `w ~ N(0, 1)`,
//!
//! ```text
//! forward (draws from D₁): −½log(1+c) + (c/2)w² − r√(c/ψ) w + r²c/(2ψ(1+c))
//! reverse (draws from D₂):  ½log(1+c) − (c'/2)w² + r√(c'/ψ) w/(1+c) + r²c/(2ψ(1+c)²)
//! ```
//!
//! with `c' = c/(1+c)`. The Monte Carlo estimator samples these scalars.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, Mat, Vector};
use crate::seed::{derive_seed, rng_from_seed, SimRng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBoundInputs {
    pub k: usize,
    /// Leverage `xᵀS₁⁻¹x` of the added point.
    pub c: f64,
    /// `(β₂−β₁)ᵀS₂(β₂−β₁)/(ψσ²)`.
    pub xi2: f64,
    /// `(y−xᵀβ₁)²/(ψσ²c)`.
    pub lambda_priv: f64,
    pub delta: f64,
    pub psi: f64,
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("delta {delta} outside (0, 1)")))
    }
}

/// `(ε_forward, ε_reverse)` for the `K`-draw release.
pub fn epsilon_delta_bound(inp: &PrivacyBoundInputs) -> Result<(f64, f64)> {
    check_delta(inp.delta)?;
    if !(inp.c >= 0.0 && inp.xi2 >= 0.0 && inp.lambda_priv >= 0.0 && inp.psi > 0.0) {
        return Err(Error::InvalidConfig("privacy inputs must be nonnegative".into()));
    }
    let k = inp.k as f64;
    let c = inp.c;
    let log_inv_delta = -inp.delta.ln();
    let lambda = if c == 0.0 { 0.0 } else { inp.lambda_priv };
    let forward = -0.5 * k * c.ln_1p()
        + 0.5 * k * c
        + 0.5 * k * inp.xi2
        + c * log_inv_delta
        + c * (k * (1.0 + 2.0 * lambda) * log_inv_delta).sqrt();
    let reverse = 0.5 * k * c.ln_1p() + 0.5 * k * inp.xi2;
    Ok((forward, reverse))
}

/// Bound on the expectation of `ε_δ` over the model.
pub fn expected_epsilon_bound(k: usize, c: f64, psi: f64, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    if !(c >= 0.0) || !(psi > 0.0) {
        return Err(Error::InvalidConfig("c must be nonnegative and psi positive".into()));
    }
    if c == 0.0 {
        return Ok(0.0);
    }
    let k = k as f64;
    let l = -delta.ln();
    Ok(-0.5 * k * c.ln_1p()
        + 0.5 * k * c
        + k * c / (2.0 * psi)
        + c * l
        + c * (k * (1.0 + 2.0 * (1.0 + c) / (psi * c)) * l).sqrt())
}

/// A pair of neighbouring datasets, stored through the quantities the
/// posterior depends on. `σ² = 1` and `β₀ = 0`.
#[derive(Debug, Clone)]
pub struct NeighborPair {
    pub s1: Mat,
    pub x: Vector,
    pub y: f64,
    pub beta1: Vector,
    pub beta2: Vector,
    /// Leverage, equal to the requested `c` up to rounding.
    pub c: f64,
    /// Residual of the added point under `β₁`.
    pub r: f64,
}

impl NeighborPair {
    pub fn s2(&self) -> Mat {
        &self.s1 + &self.x * self.x.transpose()
    }

    /// `(β₂−β₁)ᵀS₁(β₂−β₁)/ψ`. Reported only.
    pub fn xi1(&self, psi: f64) -> f64 {
        let d = &self.beta2 - &self.beta1;
        d.dot(&(&self.s1 * &d)) / psi
    }

    pub fn xi2(&self, psi: f64) -> f64 {
        let d = &self.beta2 - &self.beta1;
        d.dot(&(self.s2() * &d)) / psi
    }

    pub fn lambda_priv(&self, psi: f64) -> f64 {
        if self.c == 0.0 {
            0.0
        } else {
            self.r * self.r / (psi * self.c)
        }
    }

    pub fn bound_inputs(&self, k: usize, psi: f64, delta: f64) -> PrivacyBoundInputs {
        PrivacyBoundInputs {
            k,
            c: self.c,
            xi2: self.xi2(psi),
            lambda_priv: self.lambda_priv(psi),
            delta,
            psi,
        }
    }
}

/// Draw `D₁` with `n` standard Gaussian rows and add a point of leverage
/// exactly `c`.
pub fn neighbor_pair(n: usize, p: usize, c: f64, rng: &mut SimRng) -> Result<NeighborPair> {
    if n < p || p == 0 {
        return Err(Error::InvalidConfig(format!("need n >= p >= 1, got n = {n}, p = {p}")));
    }
    if !(c >= 0.0 && c.is_finite()) {
        return Err(Error::InvalidConfig("c must be finite and nonnegative".into()));
    }
    let x1 = Mat::from_fn(n, p, |_, _| rng.sample(StandardNormal));
    let y1 = Vector::from_fn(n, |_, _| rng.sample(StandardNormal));
    let s1 = x1.tr_mul(&x1);
    let chol = cholesky(&s1).ok_or_else(|| Error::numerical("sampled design is singular"))?;
    let beta1 = chol.solve(&x1.tr_mul(&y1));
    let u = Vector::from_fn(p, |_, _| rng.sample(StandardNormal));
    let lev_u = u.dot(&chol.solve(&u));
    let x = u * (c / lev_u).sqrt();
    let y: f64 = rng.sample(StandardNormal);
    let s2 = &s1 + &x * x.transpose();
    let chol2 = cholesky(&s2).ok_or_else(|| Error::numerical("augmented design is singular"))?;
    let beta2 = chol2.solve(&(x1.tr_mul(&y1) + &x * y));
    let c_real = x.dot(&chol.solve(&x));
    let r = y - x.dot(&beta1);
    Ok(NeighborPair {
        s1,
        x,
        y,
        beta1,
        beta2,
        c: c_real,
        r,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Draws from `D₁`, loss `log p₁/p₂`.
    Forward,
    /// Draws from `D₂`, loss `log p₂/p₁`.
    Reverse,
}

/// `reps` samples of the joint privacy loss of `K` draws.
pub fn loss_samples(
    pair: &NeighborPair,
    k: usize,
    psi: f64,
    reps: usize,
    direction: Direction,
    rng: &mut SimRng,
) -> Vec<f64> {
    let c = pair.c;
    let r = pair.r;
    let (konst, quad, lin) = match direction {
        Direction::Forward => (
            -0.5 * c.ln_1p() + r * r * c / (2.0 * psi * (1.0 + c)),
            0.5 * c,
            -r * (c / psi).sqrt(),
        ),
        Direction::Reverse => {
            let cp = c / (1.0 + c);
            (
                0.5 * c.ln_1p() + r * r * c / (2.0 * psi * (1.0 + c).powi(2)),
                -0.5 * cp,
                r * (cp / psi).sqrt() / (1.0 + c),
            )
        }
    };
    let kf = k as f64;
    (0..reps)
        .map(|_| {
            let mut acc = konst * kf;
            for _ in 0..k {
                let w: f64 = rng.sample(StandardNormal);
                acc += quad * w * w + lin * w;
            }
            acc
        })
        .collect()
}

/// Joint log density ratio `log p₁(draws) − log p₂(draws)` evaluated with
/// dense Gaussian densities.
pub fn dense_log_ratio(pair: &NeighborPair, draws: &[Vector], psi: f64) -> Result<f64> {
    let s2 = pair.s2();
    let log_dens = |s: &Mat, mean: &Vector, b: &Vector| -> Result<f64> {
        let chol = cholesky(s).ok_or_else(|| Error::numerical("singular Gram matrix"))?;
        let half_logdet = chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let d = b - mean;
        Ok(half_logdet - d.dot(&(s * &d)) / (2.0 * psi))
    };
    let mut total = 0.0;
    for b in draws {
        total += log_dens(&pair.s1, &pair.beta1, b)? - log_dens(&s2, &pair.beta2, b)?;
    }
    Ok(total)
}

/// Smallest `ε ≥ 0` with `E[(1 − e^{ε−L})₊] ≤ δ` under the empirical law of `L`.
pub fn hockey_stick_epsilon(losses: &[f64], delta: f64) -> f64 {
    let mut sorted: Vec<f64> = losses.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let n = sorted.len() as f64;
    let target = n * delta;
    let Some(&top) = sorted.first() else {
        return 0.0;
    };
    // Over the segment where exactly the j largest losses exceed ε the
    // objective is (j − e^ε Σ_{i≤j} e^{−L_i}) / n.
    let mut scaled_sum = 0.0;
    for j in 1..=sorted.len() {
        scaled_sum += (top - sorted[j - 1]).exp();
        let jf = j as f64;
        let next = sorted.get(j).copied().unwrap_or(f64::NEG_INFINITY);
        let at_next = if next == f64::NEG_INFINITY {
            jf
        } else {
            jf - (next - top).exp() * scaled_sum
        };
        if at_next > target {
            let eps = (jf - target).ln() + top - scaled_sum.ln();
            return eps.max(0.0);
        }
    }
    0.0
}

/// Empirical `(1−δ)`-quantile.
pub fn tail_quantile(losses: &[f64], delta: f64) -> f64 {
    if losses.is_empty() {
        return 0.0;
    }
    let mut sorted = losses.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let idx = ((1.0 - delta) * sorted.len() as f64).ceil() as usize;
    sorted[idx.clamp(1, sorted.len()) - 1]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McScenario {
    pub n: usize,
    pub p: usize,
    pub k: usize,
    pub psi: f64,
    pub c: f64,
    pub delta: f64,
    /// Loss samples per dataset and direction.
    pub reps: usize,
    /// Neighbouring-dataset redraws averaged over.
    pub datasets: usize,
    pub seed: u64,
}

impl McScenario {
    /// The Table-style cell: `n = p/c`, `δ = 1/n`, `ψ = 100`.
    pub fn grid_cell(p: usize, k: usize, c: f64, reps: usize, seed: u64) -> Self {
        let n = (p as f64 / c).round() as usize;
        McScenario {
            n,
            p,
            k,
            psi: crate::posterior::DEFAULT_PSI,
            c,
            delta: 1.0 / n as f64,
            reps,
            datasets: 8,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        check_delta(self.delta)?;
        if self.n < self.p || self.p == 0 {
            return Err(Error::InvalidConfig("need n >= p >= 1".into()));
        }
        if !(self.psi > 0.0) || self.datasets == 0 {
            return Err(Error::InvalidConfig("psi and datasets must be positive".into()));
        }
        if self.k > 0 && (self.reps as f64) * self.delta < 20.0 {
            return Err(Error::Resolution(format!(
                "reps·δ = {:.2} < 20; increase reps",
                self.reps as f64 * self.delta
            )));
        }
        Ok(())
    }
}

/// Results for one neighbouring-dataset draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetPrivacy {
    /// Hockey-stick ε, maximized over directions.
    pub eps_hockey: f64,
    pub q_forward: f64,
    pub q_reverse: f64,
    pub eps_forward: f64,
    pub eps_reverse: f64,
    pub xi1: f64,
    pub xi2: f64,
    pub lambda_priv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    /// Mean hockey-stick ε over dataset draws.
    pub eps_mc: f64,
    /// Mean `(1−δ)`-quantile of the loss, maximized over directions.
    pub eps_tail: f64,
    pub per_dataset: Vec<DatasetPrivacy>,
}

/// Analyse one dataset draw.
pub fn dataset_privacy(
    pair: &NeighborPair,
    k: usize,
    psi: f64,
    delta: f64,
    reps: usize,
    rng: &mut SimRng,
) -> Result<DatasetPrivacy> {
    let (eps_forward, eps_reverse) = epsilon_delta_bound(&pair.bound_inputs(k, psi, delta))?;
    let base = DatasetPrivacy {
        eps_hockey: 0.0,
        q_forward: 0.0,
        q_reverse: 0.0,
        eps_forward,
        eps_reverse,
        xi1: pair.xi1(psi),
        xi2: pair.xi2(psi),
        lambda_priv: pair.lambda_priv(psi),
    };
    if k == 0 {
        return Ok(base);
    }
    let fwd = loss_samples(pair, k, psi, reps, Direction::Forward, rng);
    let rev = loss_samples(pair, k, psi, reps, Direction::Reverse, rng);
    Ok(DatasetPrivacy {
        eps_hockey: hockey_stick_epsilon(&fwd, delta).max(hockey_stick_epsilon(&rev, delta)),
        q_forward: tail_quantile(&fwd, delta),
        q_reverse: tail_quantile(&rev, delta),
        ..base
    })
}

/// Monte Carlo minimum ε over neighbouring-dataset redraws.
pub fn mc_min_epsilon(sc: &McScenario) -> Result<McEstimate> {
    sc.validate()?;
    let mut per_dataset = Vec::with_capacity(sc.datasets);
    for d in 0..sc.datasets {
        let mut rng = rng_from_seed(derive_seed(sc.seed, &[d as u64]));
        let pair = neighbor_pair(sc.n, sc.p, sc.c, &mut rng)?;
        per_dataset.push(dataset_privacy(&pair, sc.k, sc.psi, sc.delta, sc.reps, &mut rng)?);
    }
    let m = per_dataset.len() as f64;
    Ok(McEstimate {
        eps_mc: per_dataset.iter().map(|d| d.eps_hockey).sum::<f64>() / m,
        eps_tail: per_dataset
            .iter()
            .map(|d| d.q_forward.max(d.q_reverse).max(0.0))
            .sum::<f64>()
            / m,
        per_dataset,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyReport {
    /// Mean of the forward bound over dataset draws.
    pub eps_forward: f64,
    pub eps_reverse: f64,
    pub eps_expected: f64,
    pub eps_mc: f64,
    pub eps_tail: f64,
    pub xi1_mean: f64,
    pub params: McScenario,
}

pub fn privacy_report(sc: &McScenario) -> Result<PrivacyReport> {
    let est = mc_min_epsilon(sc)?;
    let m = est.per_dataset.len() as f64;
    let mean = |f: fn(&DatasetPrivacy) -> f64| est.per_dataset.iter().map(f).sum::<f64>() / m;
    Ok(PrivacyReport {
        eps_forward: mean(|d| d.eps_forward),
        eps_reverse: mean(|d| d.eps_reverse),
        eps_expected: expected_epsilon_bound(sc.k, sc.c, sc.psi, sc.delta)?,
        eps_mc: est.eps_mc,
        eps_tail: est.eps_tail,
        xi1_mean: mean(|d| d.xi1),
        params: *sc,
    })
}
