//! Internal dense linear-algebra helpers built on nalgebra's SVD.

use nalgebra::{DMatrix, DVector, SVD};

use crate::scalar::Scalar;

/// Default relative threshold below which singular values count as zero.
pub const RANK_TOL: f64 = 1e-9;

/// Rank and extreme singular values of a dense matrix.
pub struct SvdRank<T> {
    pub rank: usize,
    pub sigma_max: T,
    /// Smallest singular value of the full decomposition (possibly zero),
    /// `min(nrows, ncols)` values are considered.
    pub sigma_min: T,
}

/// Computes the numerical rank with threshold `tol * sigma_max`.
pub fn svd_rank<T: Scalar>(m: &DMatrix<T>, tol: T) -> SvdRank<T> {
    let svd = SVD::new(m.clone(), false, false);
    let sv = &svd.singular_values;
    let sigma_max = sv.iter().copied().fold(T::zero(), |a, b| a.max(b));
    let sigma_min = sv.iter().copied().fold(sigma_max, |a, b| a.min(b));
    let threshold = tol * sigma_max;
    let rank = sv.iter().filter(|&&s| s > threshold).count();
    SvdRank {
        rank,
        sigma_max,
        sigma_min,
    }
}

/// Moore-Penrose pseudo-inverse with relative cutoff `tol`.
pub fn pseudo_inverse<T: Scalar>(m: &DMatrix<T>, tol: T) -> DMatrix<T> {
    let svd = SVD::new(m.clone(), true, true);
    let sigma_max = svd
        .singular_values
        .iter()
        .copied()
        .fold(T::zero(), |a, b| a.max(b));
    svd.pseudo_inverse(tol * sigma_max)
        .expect("svd computed with u and v_t")
}

/// Minimum-norm least-squares solution of `m x = b`.
pub fn lstsq<T: Scalar>(m: &DMatrix<T>, b: &DVector<T>, tol: T) -> DVector<T> {
    let svd = SVD::new(m.clone(), true, true);
    let sigma_max = svd
        .singular_values
        .iter()
        .copied()
        .fold(T::zero(), |a, b| a.max(b));
    svd.solve(b, tol * sigma_max)
        .expect("svd computed with u and v_t")
}
