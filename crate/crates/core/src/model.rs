//! Regression data model, per-site estimation and the synthetic design.
//!
//! Every site follows `y_m = X_m β₀ + e_m` with `e_m ~ N(0, σ₀² I)`. A site
//! only ever exposes summaries of its data: the local fit ([`LocalFit`]) or,
//! for the non-private pooled estimator, its [`SufficientStats`].

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, Mat, Vector};
use crate::seed::{derive_seed, rng_from_seed, SimRng};

/// Raw data held by a single site.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteData {
    x: Mat,
    y: Vector,
    site_id: u32,
}

impl SiteData {
    pub fn new(x: Mat, y: Vector, site_id: u32) -> Result<Self> {
        if site_id == 0 {
            return Err(Error::InvalidData("site ids start at 1".into()));
        }
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::InvalidData(format!(
                "site {site_id}: design must have at least one row and one column"
            )));
        }
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch(format!(
                "site {site_id}: X has {} rows but y has {} entries",
                x.nrows(),
                y.len()
            )));
        }
        if !x.iter().chain(y.iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidData(format!(
                "site {site_id}: non-finite entry"
            )));
        }
        Ok(SiteData { x, y, site_id })
    }

    pub fn x(&self) -> &Mat {
        &self.x
    }

    pub fn y(&self) -> &Vector {
        &self.y
    }

    pub fn site_id(&self) -> u32 {
        self.site_id
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn with_site_id(mut self, site_id: u32) -> Self {
        assert!(site_id >= 1);
        self.site_id = site_id;
        self
    }

    /// Stack the rows of several sites; used for pooled reference fits.
    pub fn concat(sites: &[SiteData]) -> Result<SiteData> {
        let first = sites.first().ok_or(Error::Empty("site list"))?;
        let p = first.p();
        if sites.iter().any(|s| s.p() != p) {
            return Err(Error::DimensionMismatch("sites disagree on p".into()));
        }
        let n: usize = sites.iter().map(SiteData::n).sum();
        let mut x = Mat::zeros(n, p);
        let mut y = Vector::zeros(n);
        let mut row = 0;
        for s in sites {
            x.rows_mut(row, s.n()).copy_from(&s.x);
            y.rows_mut(row, s.n()).copy_from(&s.y);
            row += s.n();
        }
        SiteData::new(x, y, first.site_id)
    }
}

/// Marginal law of a single feature column. All laws have mean zero and
/// unit variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureLaw {
    Gaussian,
    /// Uniform on `(-√3, √3)`.
    Uniform,
    /// Laplace with scale `1/√2`.
    Laplace,
}

impl FeatureLaw {
    fn sample(self, rng: &mut SimRng) -> f64 {
        match self {
            FeatureLaw::Gaussian => rng.sample(StandardNormal),
            FeatureLaw::Uniform => {
                let h = 3f64.sqrt();
                rng.random_range(-h..h)
            }
            FeatureLaw::Laplace => {
                let u: f64 = rng.random::<f64>() - 0.5;
                -std::f64::consts::FRAC_1_SQRT_2 * u.signum() * (1.0 - 2.0 * u.abs()).ln()
            }
        }
    }
}

/// Generating parameters shared by all sites of one simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub beta0: Vector,
    pub sigma0_sq: f64,
    pub feature_law: Vec<FeatureLaw>,
}

impl GroundTruth {
    pub fn new(beta0: Vector, sigma0_sq: f64, feature_law: Vec<FeatureLaw>) -> Result<Self> {
        if beta0.is_empty() {
            return Err(Error::InvalidConfig("p must be a positive integer".into()));
        }
        if !(sigma0_sq > 0.0 && sigma0_sq.is_finite()) {
            return Err(Error::InvalidConfig("sigma0_sq must be positive".into()));
        }
        if feature_law.len() != beta0.len() {
            return Err(Error::DimensionMismatch(
                "one feature law per coefficient".into(),
            ));
        }
        Ok(GroundTruth {
            beta0,
            sigma0_sq,
            feature_law,
        })
    }

    /// All-Gaussian design with the given coefficients.
    pub fn gaussian(beta0: Vector, sigma0_sq: f64) -> Result<Self> {
        let p = beta0.len();
        Self::new(beta0, sigma0_sq, vec![FeatureLaw::Gaussian; p])
    }

    /// The mixed simulation design: `⌊p/2⌋` Gaussian columns, `⌊p/4⌋`
    /// uniform columns and Laplace for the rest, assigned to columns by a
    /// seeded permutation. The first `⌊p/4⌋` coefficients are drawn from
    /// `U(0, 1)`, the others are zero.
    pub fn simulation_design(p: usize, sigma0_sq: f64, seed: u64) -> Result<Self> {
        if p == 0 {
            return Err(Error::InvalidConfig("p must be a positive integer".into()));
        }
        let mut rng = rng_from_seed(derive_seed(seed, &[0x7275_7468]));
        let n_gauss = p / 2;
        let n_unif = p / 4;
        let mut laws: Vec<FeatureLaw> = (0..p)
            .map(|j| {
                if j < n_gauss {
                    FeatureLaw::Gaussian
                } else if j < n_gauss + n_unif {
                    FeatureLaw::Uniform
                } else {
                    FeatureLaw::Laplace
                }
            })
            .collect();
        laws.shuffle(&mut rng);
        let n_active = p / 4;
        let beta0 = Vector::from_fn(p, |j, _| {
            if j < n_active {
                rng.random::<f64>()
            } else {
                0.0
            }
        });
        Self::new(beta0, sigma0_sq, laws)
    }

    pub fn p(&self) -> usize {
        self.beta0.len()
    }

    /// Indices of the nonzero coefficients.
    pub fn support(&self) -> Vec<usize> {
        (0..self.p()).filter(|&j| self.beta0[j] != 0.0).collect()
    }
}

/// Draw one site's data; identical seeds give bitwise identical output.
pub fn generate_site_data(truth: &GroundTruth, n: usize, seed: u64) -> Result<SiteData> {
    generate_site_data_scaled(truth, n, 1.0, seed)
}

/// As [`generate_site_data`] with every feature multiplied by
/// `sqrt(cov_scale)`, so the feature covariance is `cov_scale · I`.
pub fn generate_site_data_scaled(
    truth: &GroundTruth,
    n: usize,
    cov_scale: f64,
    seed: u64,
) -> Result<SiteData> {
    if n == 0 {
        return Err(Error::InvalidConfig("n must be at least 1".into()));
    }
    if !(cov_scale > 0.0) {
        return Err(Error::InvalidConfig("cov_scale must be positive".into()));
    }
    let p = truth.p();
    let mut rng = rng_from_seed(seed);
    let s = cov_scale.sqrt();
    let mut x = Mat::zeros(n, p);
    for i in 0..n {
        for j in 0..p {
            x[(i, j)] = s * truth.feature_law[j].sample(&mut rng);
        }
    }
    let sd = truth.sigma0_sq.sqrt();
    let mut y = &x * &truth.beta0;
    for v in y.iter_mut() {
        *v += sd * rng.sample::<f64, _>(StandardNormal);
    }
    SiteData::new(x, y, 1)
}

/// Local maximum likelihood fit of one site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalFit {
    pub site_id: u32,
    pub beta_hat: Vector,
    /// Residual sum of squares over `n` (the MLE, not the unbiased form).
    pub sigma_hat_sq: f64,
    /// Gram matrix `XᵀX`.
    pub s: Mat,
    pub n: usize,
    pub p: usize,
}

pub fn local_mle(data: &SiteData) -> Result<LocalFit> {
    let site = data.site_id();
    if data.n() < data.p() {
        return Err(Error::RankDeficient { site });
    }
    let s = data.x().tr_mul(data.x());
    let xty = data.x().tr_mul(data.y());
    let chol = cholesky(&s).ok_or(Error::RankDeficient { site })?;
    let beta_hat = chol.solve(&xty);
    let resid = data.y() - data.x() * &beta_hat;
    Ok(LocalFit {
        site_id: site,
        sigma_hat_sq: resid.norm_squared() / data.n() as f64,
        beta_hat,
        s,
        n: data.n(),
        p: data.p(),
    })
}

/// `(XᵀX, Xᵀy, yᵀy, n)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SufficientStats {
    pub s: Mat,
    pub xty: Vector,
    pub yty: f64,
    pub n: usize,
}

impl SufficientStats {
    pub fn p(&self) -> usize {
        self.xty.len()
    }

    pub fn zeros(p: usize) -> Self {
        SufficientStats {
            s: Mat::zeros(p, p),
            xty: Vector::zeros(p),
            yty: 0.0,
            n: 0,
        }
    }

    pub fn accumulate(&mut self, other: &SufficientStats) {
        self.s += &other.s;
        self.xty += &other.xty;
        self.yty += other.yty;
        self.n += other.n;
    }
}

pub fn sufficient_stats(data: &SiteData) -> SufficientStats {
    SufficientStats {
        s: data.x().tr_mul(data.x()),
        xty: data.x().tr_mul(data.y()),
        yty: data.y().norm_squared(),
        n: data.n(),
    }
}

/// Read a headerless CSV whose last column is the response.
pub fn read_site_csv(path: impl AsRef<Path>, site_id: u32) -> Result<SiteData> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Csv {
            path: shown.clone(),
            row: 0,
            detail: e.to_string(),
        })?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::Csv {
            path: shown.clone(),
            row,
            detail: e.to_string(),
        })?;
        let vals = rec
            .iter()
            .enumerate()
            .map(|(col, field)| {
                field
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Csv {
                        path: shown.clone(),
                        row,
                        detail: format!("column {}: cannot parse {field:?} as a finite number", col + 1),
                    })
            })
            .collect::<Result<Vec<f64>>>()?;
        if vals.len() < 2 {
            return Err(Error::Csv {
                path: shown.clone(),
                row,
                detail: "need at least one feature column and a response".into(),
            });
        }
        if let Some(first) = rows.first() {
            if first.len() != vals.len() {
                return Err(Error::Csv {
                    path: shown.clone(),
                    row,
                    detail: format!("expected {} columns, found {}", first.len(), vals.len()),
                });
            }
        }
        rows.push(vals);
    }
    if rows.is_empty() {
        return Err(Error::Csv {
            path: shown,
            row: 0,
            detail: "file has no rows".into(),
        });
    }
    let n = rows.len();
    let p = rows[0].len() - 1;
    let x = Mat::from_fn(n, p, |i, j| rows[i][j]);
    let y = Vector::from_fn(n, |i, _| rows[i][p]);
    SiteData::new(x, y, site_id)
}

pub fn write_site_csv(path: impl AsRef<Path>, data: &SiteData) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path.as_ref())
        .map_err(|e| Error::Io(e.into()))?;
    for i in 0..data.n() {
        let mut rec: Vec<String> = (0..data.p()).map(|j| format!("{:?}", data.x[(i, j)])).collect();
        rec.push(format!("{:?}", data.y[i]));
        w.write_record(&rec).map_err(|e| Error::Io(e.into()))?;
    }
    w.flush()?;
    Ok(())
}
