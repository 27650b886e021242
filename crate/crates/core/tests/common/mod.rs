#![allow(dead_code)]

use cedar_core::linalg::{Mat, Vector};
use cedar_core::model::{generate_site_data, generate_site_data_scaled, local_mle, GroundTruth, LocalFit, SiteData};
use cedar_core::protocol::{SiteNode, SitePayload, TaskRequest, Task};
use cedar_core::seed::derive_seed;

/// Gaussian-design sites `1..=m` with `β₀ = (0.5, -0.25, 1, 0, …)`.
pub fn gaussian_sites(p: usize, n: usize, m: usize, seed: u64) -> (GroundTruth, Vec<SiteData>) {
    let beta0 = Vector::from_fn(p, |i, _| [0.5, -0.25, 1.0, 0.0][i % 4]);
    let truth = GroundTruth::gaussian(beta0, 1.0).unwrap();
    let sites = (1..=m as u64)
        .map(|s| {
            generate_site_data(&truth, n, derive_seed(seed, &[s]))
                .unwrap()
                .with_site_id(s as u32)
        })
        .collect();
    (truth, sites)
}

/// As [`gaussian_sites`] with `Cov(x) = scale_m · I` per site.
pub fn scaled_sites(p: usize, n: usize, scales: &[f64], seed: u64) -> (GroundTruth, Vec<SiteData>) {
    let beta0 = Vector::from_fn(p, |i, _| [0.5, -0.25, 1.0, 0.0][i % 4]);
    let truth = GroundTruth::gaussian(beta0, 1.0).unwrap();
    let sites = scales
        .iter()
        .enumerate()
        .map(|(i, &sc)| {
            let s = i as u64 + 1;
            generate_site_data_scaled(&truth, n, sc, derive_seed(seed, &[s]))
                .unwrap()
                .with_site_id(s as u32)
        })
        .collect();
    (truth, sites)
}

/// Remote payloads for sites `2..`, with `k` posterior draws each.
pub fn payloads(sites: &[SiteData], k: usize, psi: f64, seed: u64) -> Vec<SitePayload> {
    let req = if k == 0 {
        TaskRequest::new(Task::MleOnly)
    } else {
        TaskRequest::mle_plus_posterior(k, psi)
    };
    sites[1..]
        .iter()
        .map(|d| {
            SiteNode::new(d.clone(), derive_seed(seed, &[d.site_id() as u64]))
                .handle(&req)
                .unwrap()
        })
        .collect()
}

pub fn central_fit(sites: &[SiteData]) -> LocalFit {
    local_mle(&sites[0]).unwrap()
}

/// Least squares through a Householder QR of the stacked design.
pub fn qr_ols(x: &Mat, y: &Vector) -> Vector {
    let qr = x.clone().qr();
    let qty = qr.q().transpose() * y;
    qr.r().solve_upper_triangular(&qty).unwrap()
}

pub fn max_abs_diff(a: &Vector, b: &Vector) -> f64 {
    (a - b).amax()
}

/// Nelder–Mead on `θ = (β, ln σ², ln Σ)` followed by Newton polishing with
/// finite-difference derivatives.
pub fn direct_maximize(f: &dyn Fn(&[f64; 3]) -> f64, start: [f64; 3]) -> [f64; 3] {
    let neg = |x: &[f64; 3]| -f(x);
    let mut simplex: Vec<[f64; 3]> = vec![start];
    for i in 0..3 {
        let mut v = start;
        v[i] += 0.2;
        simplex.push(v);
    }
    for _ in 0..20_000 {
        simplex.sort_by(|a, b| neg(a).total_cmp(&neg(b)));
        let spread = (neg(&simplex[3]) - neg(&simplex[0])).abs();
        if spread < 1e-14 {
            break;
        }
        let mut c = [0.0; 3];
        for v in &simplex[..3] {
            for i in 0..3 {
                c[i] += v[i] / 3.0;
            }
        }
        let along = |t: f64| {
            let mut x = [0.0; 3];
            for i in 0..3 {
                x[i] = c[i] + t * (simplex[3][i] - c[i]);
            }
            x
        };
        let r = along(-1.0);
        if neg(&r) < neg(&simplex[0]) {
            let e = along(-2.0);
            simplex[3] = if neg(&e) < neg(&r) { e } else { r };
        } else if neg(&r) < neg(&simplex[2]) {
            simplex[3] = r;
        } else {
            let k = along(0.5);
            if neg(&k) < neg(&simplex[3]) {
                simplex[3] = k;
            } else {
                let best = simplex[0];
                for v in simplex.iter_mut().skip(1) {
                    for i in 0..3 {
                        v[i] = best[i] + 0.5 * (v[i] - best[i]);
                    }
                }
            }
        }
    }
    let mut x = simplex[0];
    for _ in 0..20 {
        let h = 1e-4;
        let at = |d: [f64; 3]| {
            let mut y = x;
            for i in 0..3 {
                y[i] += d[i];
            }
            f(&y)
        };
        let e = |i: usize, s: f64| {
            let mut d = [0.0; 3];
            d[i] = s;
            d
        };
        let mut g = Vector::zeros(3);
        let mut hess = Mat::zeros(3, 3);
        for i in 0..3 {
            g[i] = (at(e(i, h)) - at(e(i, -h))) / (2.0 * h);
            for j in 0..3 {
                let mut pp = e(i, h);
                pp[j] += h;
                let mut pm = e(i, h);
                pm[j] -= h;
                let mut mp = e(i, -h);
                mp[j] += h;
                let mut mm = e(i, -h);
                mm[j] -= h;
                hess[(i, j)] = (at(pp) - at(pm) - at(mp) + at(mm)) / (4.0 * h * h);
            }
        }
        let step = hess.lu().solve(&g).unwrap();
        for i in 0..3 {
            x[i] -= step[i];
        }
        if step.amax() < 1e-12 {
            break;
        }
    }
    x
}

/// Maximizer `(β, σ², Σ)` of the p = 1 marginal loglikelihood found without EM.
pub fn direct_marginal_max(central: &LocalFit, pls: &[SitePayload]) -> [f64; 3] {
    let f = |t: &[f64; 3]| {
        cedar_core::cedar::marginal_loglik(
            &Vector::from_element(1, t[0]),
            t[1].exp(),
            &Mat::from_element(1, 1, t[2].exp()),
            central,
            pls,
        )
        .unwrap_or(f64::NEG_INFINITY)
    };
    let start = [central.beta_hat[0], 0.0, (central.s[(0, 0)] / central.n as f64).ln()];
    let x = direct_maximize(&f, start);
    [x[0], x[1].exp(), x[2].exp()]
}

/// Transport wrapper that records every response.
pub struct Recording<T> {
    pub inner: T,
    pub log: Vec<(u32, Vec<u8>)>,
}

impl<T> Recording<T> {
    pub fn new(inner: T) -> Self {
        Recording { inner, log: Vec::new() }
    }
}

impl<T: cedar_core::protocol::Transport> cedar_core::protocol::Transport for Recording<T> {
    fn exchange(
        &mut self,
        session: &str,
        round: u32,
        request: &[u8],
        sites: &[u32],
    ) -> cedar_core::Result<Vec<(u32, Vec<u8>)>> {
        let out = self.inner.exchange(session, round, request, sites)?;
        self.log.extend(out.iter().cloned());
        Ok(out)
    }
}
