//! Dense symmetric linear algebra helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use statrs::function::gamma::ln_gamma;

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Cholesky factor of a symmetric positive definite matrix, `None` otherwise.
pub fn cholesky(m: &Mat) -> Option<Cholesky<f64, Dyn>> {
    if !m.iter().all(|v| v.is_finite()) {
        return None;
    }
    let chol = Cholesky::new(m.clone())?;
    // nalgebra accepts tiny positive pivots; reject factors that are not
    // numerically usable.
    let l = chol.l_dirty();
    let max = (0..m.nrows()).map(|i| l[(i, i)]).fold(0.0_f64, f64::max);
    let min = (0..m.nrows()).map(|i| l[(i, i)]).fold(f64::INFINITY, f64::min);
    if !(min > 0.0) || min / max < 1e-14 {
        return None;
    }
    Some(chol)
}

pub fn spd_inverse(m: &Mat) -> Option<Mat> {
    let mut inv = cholesky(m)?.inverse();
    symmetrize(&mut inv);
    Some(inv)
}

pub fn log_det_chol(chol: &Cholesky<f64, Dyn>) -> f64 {
    let l = chol.l_dirty();
    2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
}

pub fn symmetrize(m: &mut Mat) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn min_eigenvalue(m: &Mat) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.min()
}

/// Symmetric square root via the eigendecomposition.
pub fn sym_sqrt(m: &Mat) -> Mat {
    let eig = SymmetricEigen::new(m.clone());
    let d = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * Mat::from_diagonal(&d) * eig.eigenvectors.transpose()
}

/// Row-major upper triangle including the diagonal, `p(p+1)/2` entries.
pub fn pack_upper(m: &Mat) -> Vec<f64> {
    let p = m.nrows();
    let mut out = Vec::with_capacity(p * (p + 1) / 2);
    for i in 0..p {
        for j in i..p {
            out.push(m[(i, j)]);
        }
    }
    out
}

pub fn unpack_upper(p: usize, packed: &[f64]) -> Mat {
    debug_assert_eq!(packed.len(), p * (p + 1) / 2);
    let mut m = Mat::zeros(p, p);
    let mut k = 0;
    for i in 0..p {
        for j in i..p {
            m[(i, j)] = packed[k];
            m[(j, i)] = packed[k];
            k += 1;
        }
    }
    m
}

/// `ln Γ_p(a)`, the log multivariate gamma function.
pub fn ln_multigamma(p: usize, a: f64) -> f64 {
    let pf = p as f64;
    let mut acc = pf * (pf - 1.0) / 4.0 * std::f64::consts::PI.ln();
    for j in 0..p {
        acc += ln_gamma(a - j as f64 / 2.0);
    }
    acc
}

pub fn frobenius_rel(a: &Mat, b: &Mat) -> f64 {
    (a - b).norm() / b.norm()
}
