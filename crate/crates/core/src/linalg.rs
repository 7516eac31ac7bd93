//! Small dense linear-algebra helpers shared by the estimators.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen, SVD};

use crate::error::{Error, Result};

/// Relative eigenvalue tolerance below which a PSD matrix is considered singular.
pub const PSD_REL_TOL: f64 = 1e-10;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Extreme eigenvalues `(min, max)` of a symmetric matrix.
pub fn eig_range(m: &DMatrix<f64>) -> (f64, f64) {
    if m.nrows() == 0 {
        return (0.0, 0.0);
    }
    let e = SymmetricEigen::new(symmetrize(m)).eigenvalues;
    let min = e.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (min, max)
}

/// Checks `min eig >= -PSD_REL_TOL * max eig`.
pub fn check_psd(m: &DMatrix<f64>) -> Result<()> {
    let (min_eig, max_eig) = eig_range(m);
    if min_eig < -PSD_REL_TOL * max_eig.abs().max(f64::MIN_POSITIVE) {
        return Err(Error::NotPsd { min_eig, max_eig });
    }
    Ok(())
}

/// Factor `K = L Lᵀ` through the eigendecomposition, keeping only directions
/// whose eigenvalue exceeds `PSD_REL_TOL` times the largest one. `L` is d×r.
pub fn psd_factor(k: &DMatrix<f64>) -> DMatrix<f64> {
    let d = k.nrows();
    if d == 0 {
        return DMatrix::zeros(0, 0);
    }
    let eig = SymmetricEigen::new(symmetrize(k));
    let max = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    if max <= 0.0 {
        return DMatrix::zeros(d, 0);
    }
    let keep: Vec<usize> = (0..d)
        .filter(|&i| eig.eigenvalues[i] > PSD_REL_TOL * max)
        .collect();
    let mut l = DMatrix::zeros(d, keep.len());
    for (c, &i) in keep.iter().enumerate() {
        let s = eig.eigenvalues[i].sqrt();
        for r in 0..d {
            l[(r, c)] = eig.eigenvectors[(r, i)] * s;
        }
    }
    l
}

/// Moore–Penrose pseudo-inverse of a symmetric PSD matrix with the same
/// relative cutoff as [`psd_factor`].
pub fn psd_pinv(k: &DMatrix<f64>) -> DMatrix<f64> {
    let d = k.nrows();
    let eig = SymmetricEigen::new(symmetrize(k));
    let max = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    let mut out = DMatrix::zeros(d, d);
    for i in 0..d {
        let lam = eig.eigenvalues[i];
        if max > 0.0 && lam > PSD_REL_TOL * max {
            let v = eig.eigenvectors.column(i);
            out += (v * v.transpose()) / lam;
        }
    }
    out
}

pub fn cholesky(m: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m).ok_or_else(|| Error::Numerical("Cholesky factorization failed".into()))
}

pub fn chol_logdet(c: &Cholesky<f64, Dyn>) -> f64 {
    let l = c.l_dirty();
    (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0
}

/// Thin SVD with singular values sorted in decreasing order.
pub struct SortedSvd {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v: DMatrix<f64>,
}

pub fn sorted_svd(m: &DMatrix<f64>) -> SortedSvd {
    let (rows, cols) = m.shape();
    let k = rows.min(cols);
    if k == 0 {
        return SortedSvd {
            u: DMatrix::zeros(rows, 0),
            s: DVector::zeros(0),
            v: DMatrix::zeros(cols, 0),
        };
    }
    let svd = SVD::new(m.clone(), true, true);
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v_t requested");
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut su = DMatrix::zeros(rows, k);
    let mut sv = DMatrix::zeros(cols, k);
    let mut ss = DVector::zeros(k);
    for (dst, &src) in order.iter().enumerate() {
        su.set_column(dst, &u.column(src));
        sv.set_column(dst, &vt.row(src).transpose());
        ss[dst] = svd.singular_values[src];
    }
    SortedSvd { u: su, s: ss, v: sv }
}

/// Numerical rank: singular values above `rel * s_max`.
pub fn numerical_rank(s: &DVector<f64>, rel: f64) -> usize {
    let max = s.iter().cloned().fold(0.0_f64, f64::max);
    if max == 0.0 {
        return 0;
    }
    s.iter().filter(|&&v| v > rel * max).count()
}

/// Singular-value soft thresholding: `U max(S - tau, 0) Vᵀ`.
pub fn svt(m: &DMatrix<f64>, tau: f64) -> DMatrix<f64> {
    let svd = sorted_svd(m);
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for i in 0..svd.s.len() {
        let s = svd.s[i] - tau;
        if s <= 0.0 {
            break;
        }
        out += svd.u.column(i) * svd.v.column(i).transpose() * s;
    }
    out
}

pub fn nuclear_norm(m: &DMatrix<f64>) -> f64 {
    sorted_svd(m).s.sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn rank_two() -> DMatrix<f64> {
        let a = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 2.0, 1.0, 0.0, 3.0, 1.0, 1.0]);
        &a * a.transpose()
    }

    #[test]
    fn psd_factor_of_singular_matrix() {
        let k = rank_two();
        let l = psd_factor(&k);
        assert_eq!(l.ncols(), 2);
        assert!((&l * l.transpose() - &k).amax() < 1e-12);
        assert_eq!(psd_factor(&DMatrix::zeros(3, 3)).ncols(), 0);
    }

    #[test]
    fn pseudo_inverse_identities() {
        let k = rank_two();
        let p = psd_pinv(&k);
        assert!((&k * &p * &k - &k).amax() < 1e-10);
        assert!((&p * &k * &p - &p).amax() < 1e-10);
    }

    #[test]
    fn sorted_svd_reconstructs() {
        let m = DMatrix::from_row_slice(3, 4, &[3.0, 1.0, 0.0, 2.0, 0.5, -1.0, 4.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
        let svd = sorted_svd(&m);
        assert!(svd.s.as_slice().windows(2).all(|w| w[0] >= w[1]));
        let back = &svd.u * DMatrix::from_diagonal(&svd.s) * svd.v.transpose();
        assert!((back - &m).amax() < 1e-12);
        assert_relative_eq!(nuclear_norm(&m), svd.s.sum());
    }

    #[test]
    fn rank_and_thresholding() {
        let s = DVector::from_column_slice(&[10.0, 1.0, 1e-8, 0.0]);
        assert_eq!(numerical_rank(&s, 1e-6), 2);
        assert_eq!(numerical_rank(&DVector::zeros(3), 1e-6), 0);
        let m = DMatrix::from_diagonal(&DVector::from_column_slice(&[3.0, 1.0, 0.5]));
        let t = svt(&m, 0.75);
        assert_relative_eq!(t[(0, 0)], 2.25);
        assert_relative_eq!(t[(1, 1)], 0.25);
        assert_eq!(t[(2, 2)], 0.0);
    }

    #[test]
    fn psd_check_and_logdet() {
        assert!(check_psd(&rank_two()).is_ok());
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(check_psd(&bad), Err(Error::NotPsd { .. })));
        let spd = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        assert_relative_eq!(chol_logdet(&cholesky(spd).unwrap()), 11f64.ln(), max_relative = 1e-14);
        assert!(cholesky(bad).is_err());
    }
}
