//! Binary encoding of [`SitePayload`].
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic        4 bytes  "CDRP"
//! version      u32
//! site_id      u32
//! n            u64
//! p            u32
//! sigma_hat_sq f64
//! beta_hat     p × f64
//! flags        u8       bit0 block, bit1 gradient, bit2 wald, bit3 stats
//! [block]      u8 form (0 columns, 1 gram), u32 K, f64 psi,
//!              columns: p×K f64 row-major | gram: p(p+1)/2 f64 packed upper
//! [gradient]   p × f64
//! [wald]       u32 len, len × f64
//! [stats]      u64 n, f64 yty, p(p+1)/2 f64 packed upper S, p × f64 Xᵀy
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{pack_upper, unpack_upper, Mat, Vector};
use crate::model::SufficientStats;
use crate::posterior::{BlockForm, PosteriorBlock};

pub const MAGIC: [u8; 4] = *b"CDRP";
pub const SCHEMA_VERSION: u32 = 1;

const FLAG_BLOCK: u8 = 1;
const FLAG_GRADIENT: u8 = 1 << 1;
const FLAG_WALD: u8 = 1 << 2;
const FLAG_STATS: u8 = 1 << 3;

/// The one-shot message a site sends to the central site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SitePayload {
    pub schema_version: u32,
    pub site_id: u32,
    pub n: usize,
    pub p: usize,
    pub beta_hat: Vector,
    pub sigma_hat_sq: f64,
    pub block: Option<PosteriorBlock>,
    /// Local loss gradient at the requested point (surrogate likelihood).
    pub gradient: Option<Vector>,
    /// Per-coefficient local Wald statistics for the requested hypotheses.
    pub wald: Option<Vec<f64>>,
    /// Raw sufficient statistics. Not privacy preserving; only sent for the
    /// pooled estimator.
    pub stats: Option<SufficientStats>,
}

impl SitePayload {
    pub fn new(site_id: u32, n: usize, beta_hat: Vector, sigma_hat_sq: f64) -> Self {
        SitePayload {
            schema_version: SCHEMA_VERSION,
            site_id,
            n,
            p: beta_hat.len(),
            beta_hat,
            sigma_hat_sq,
            block: None,
            gradient: None,
            wald: None,
            stats: None,
        }
    }

    /// Number of posterior draws summarized in the block.
    pub fn k(&self) -> usize {
        self.block.as_ref().map_or(0, |b| b.k)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Validation(format!("site {}: {what}", self.site_id)));
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::VersionMismatch {
                expected: SCHEMA_VERSION,
                found: self.schema_version,
            });
        }
        if self.beta_hat.len() != self.p {
            return bad("beta_hat length differs from p");
        }
        if !self.beta_hat.iter().all(|v| v.is_finite()) || !self.sigma_hat_sq.is_finite() {
            return bad("non-finite estimate");
        }
        if let Some(block) = &self.block {
            if !(block.psi > 0.0 && block.psi.is_finite()) {
                return bad("psi must be positive and finite");
            }
            let (rows, cols, vals): (usize, usize, &Mat) = match &block.form {
                BlockForm::Columns(b) => (b.nrows(), b.ncols(), b),
                BlockForm::Gram(g) => (g.nrows(), g.ncols(), g),
            };
            let expected_cols = match block.form {
                BlockForm::Columns(_) => block.k,
                BlockForm::Gram(_) => self.p,
            };
            if rows != self.p || cols != expected_cols {
                return bad("posterior block has the wrong shape");
            }
            if !vals.iter().all(|v| v.is_finite()) {
                return bad("non-finite posterior block");
            }
        }
        if let Some(g) = &self.gradient {
            if g.len() != self.p || !g.iter().all(|v| v.is_finite()) {
                return bad("invalid gradient");
            }
        }
        if let Some(w) = &self.wald {
            if !w.iter().all(|v| v.is_finite()) {
                return bad("non-finite Wald statistic");
            }
        }
        if let Some(st) = &self.stats {
            if st.p() != self.p
                || st.s.nrows() != self.p
                || !st.yty.is_finite()
                || !st.s.iter().chain(st.xty.iter()).all(|v| v.is_finite())
            {
                return bad("invalid sufficient statistics");
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let payload: SitePayload = serde_json::from_str(s)?;
        payload.validate()?;
        Ok(payload)
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s<'a>(&mut self, vals: impl IntoIterator<Item = &'a f64>) {
        for v in vals {
            self.f64(*v);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or(Error::Truncated(what))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self, what: &'static str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
    fn u64(&mut self, what: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn f64(&mut self, what: &'static str) -> Result<f64> {
        let v = f64::from_le_bytes(self.take(8, what)?.try_into().unwrap());
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Validation(format!("non-finite value in {what}")))
        }
    }
    fn f64s(&mut self, len: usize, what: &'static str) -> Result<Vec<f64>> {
        // Check the length before allocating.
        if self.buf.len() - self.pos < len.saturating_mul(8) {
            return Err(Error::Truncated(what));
        }
        (0..len).map(|_| self.f64(what)).collect()
    }
}

pub fn encode_payload(payload: &SitePayload) -> Result<Vec<u8>> {
    payload.validate()?;
    let p = payload.p;
    let mut w = Writer(Vec::with_capacity(64 + 8 * p));
    w.0.extend_from_slice(&MAGIC);
    w.u32(payload.schema_version);
    w.u32(payload.site_id);
    w.u64(payload.n as u64);
    w.u32(p as u32);
    w.f64(payload.sigma_hat_sq);
    w.f64s(payload.beta_hat.iter());
    let mut flags = 0;
    if payload.block.is_some() {
        flags |= FLAG_BLOCK;
    }
    if payload.gradient.is_some() {
        flags |= FLAG_GRADIENT;
    }
    if payload.wald.is_some() {
        flags |= FLAG_WALD;
    }
    if payload.stats.is_some() {
        flags |= FLAG_STATS;
    }
    w.u8(flags);
    if let Some(block) = &payload.block {
        match &block.form {
            BlockForm::Columns(b) => {
                w.u8(0);
                w.u32(block.k as u32);
                w.f64(block.psi);
                for i in 0..p {
                    for j in 0..block.k {
                        w.f64(b[(i, j)]);
                    }
                }
            }
            BlockForm::Gram(g) => {
                w.u8(1);
                w.u32(block.k as u32);
                w.f64(block.psi);
                w.f64s(pack_upper(g).iter());
            }
        }
    }
    if let Some(g) = &payload.gradient {
        w.f64s(g.iter());
    }
    if let Some(wald) = &payload.wald {
        w.u32(wald.len() as u32);
        w.f64s(wald.iter());
    }
    if let Some(st) = &payload.stats {
        w.u64(st.n as u64);
        w.f64(st.yty);
        w.f64s(pack_upper(&st.s).iter());
        w.f64s(st.xty.iter());
    }
    Ok(w.0)
}

pub fn decode_payload(bytes: &[u8]) -> Result<SitePayload> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Validation("bad magic bytes".into()));
    }
    let version = r.u32("version")?;
    if version != SCHEMA_VERSION {
        return Err(Error::VersionMismatch {
            expected: SCHEMA_VERSION,
            found: version,
        });
    }
    let site_id = r.u32("site_id")?;
    let n = r.u64("n")? as usize;
    let p = r.u32("p")? as usize;
    let sigma_hat_sq = r.f64("sigma_hat_sq")?;
    let beta_hat = Vector::from_vec(r.f64s(p, "beta_hat")?);
    let flags = r.u8("flags")?;
    if flags & !(FLAG_BLOCK | FLAG_GRADIENT | FLAG_WALD | FLAG_STATS) != 0 {
        return Err(Error::Validation(format!("unknown flag bits {flags:#04x}")));
    }
    let tri = p * (p + 1) / 2;
    let block = if flags & FLAG_BLOCK != 0 {
        let form = r.u8("block form")?;
        let k = r.u32("block K")? as usize;
        let psi = r.f64("block psi")?;
        let form = match form {
            0 => {
                let vals = r.f64s(p.saturating_mul(k), "block columns")?;
                BlockForm::Columns(Mat::from_row_slice(p, k, &vals))
            }
            1 => BlockForm::Gram(unpack_upper(p, &r.f64s(tri, "block gram")?)),
            other => return Err(Error::Validation(format!("unknown block form {other}"))),
        };
        Some(PosteriorBlock { form, k, psi })
    } else {
        None
    };
    let gradient = if flags & FLAG_GRADIENT != 0 {
        Some(Vector::from_vec(r.f64s(p, "gradient")?))
    } else {
        None
    };
    let wald = if flags & FLAG_WALD != 0 {
        let len = r.u32("wald length")? as usize;
        Some(r.f64s(len, "wald")?)
    } else {
        None
    };
    let stats = if flags & FLAG_STATS != 0 {
        let n = r.u64("stats n")? as usize;
        let yty = r.f64("stats yty")?;
        let s = unpack_upper(p, &r.f64s(tri, "stats S")?);
        let xty = Vector::from_vec(r.f64s(p, "stats Xty")?);
        Some(SufficientStats { s, xty, yty, n })
    } else {
        None
    };
    if r.pos != bytes.len() {
        return Err(Error::Validation(format!(
            "{} trailing bytes after payload",
            bytes.len() - r.pos
        )));
    }
    let payload = SitePayload {
        schema_version: version,
        site_id,
        n,
        p,
        beta_hat,
        sigma_hat_sq,
        block,
        gradient,
        wald,
        stats,
    };
    payload.validate()?;
    Ok(payload)
}
