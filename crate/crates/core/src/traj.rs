//! Sequences, stacked windows, Hankel matrices, and persistence-of-excitation
//! checks.
//!
//! A [`Sequence`] is an ordered list of real vectors of common dimension `d`,
//! stored column-per-time-step. Hankel matrices are materialized eagerly; at
//! the data lengths this crate targets (a few thousand steps) that is cheaper
//! than anything lazy and makes QP assembly plain matrix algebra.
//!
//! All types are immutable after construction and all operations are pure, so
//! everything here is freely shareable between threads.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::scalar::Scalar;

/// Finite vector-valued signal: `N` samples of dimension `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence<T: Scalar> {
    /// `d x N`, one column per time step.
    data: DMatrix<T>,
}

impl<T: Scalar> Sequence<T> {
    /// Wraps a `d x N` matrix whose columns are the samples.
    pub fn from_matrix(data: DMatrix<T>) -> Result<Self> {
        if data.ncols() == 0 || data.nrows() == 0 {
            return Err(Error::Dimension(
                "sequence needs at least one sample of positive dimension".into(),
            ));
        }
        Ok(Self { data })
    }

    pub fn from_columns(cols: &[DVector<T>]) -> Result<Self> {
        if cols.is_empty() {
            return Err(Error::Dimension("sequence needs at least one sample".into()));
        }
        let d = cols[0].len();
        if cols.iter().any(|c| c.len() != d) {
            return Err(Error::Dimension("samples have mixed dimensions".into()));
        }
        Self::from_matrix(DMatrix::from_columns(cols))
    }

    /// Scalar (`d = 1`) sequence.
    pub fn from_scalars(vals: &[T]) -> Result<Self> {
        if vals.is_empty() {
            return Err(Error::Dimension("sequence needs at least one sample".into()));
        }
        Self::from_matrix(DMatrix::from_row_slice(1, vals.len(), vals))
    }

    pub fn zeros(dim: usize, len: usize) -> Self {
        Self {
            data: DMatrix::zeros(dim.max(1), len.max(1)),
        }
    }

    /// Constant sequence repeating `value` `len` times.
    pub fn constant(value: &DVector<T>, len: usize) -> Result<Self> {
        let cols: Vec<DVector<T>> = (0..len).map(|_| value.clone()).collect();
        Self::from_columns(&cols)
    }

    /// Sample dimension `d`.
    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    /// Number of samples `N`.
    pub fn len(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_empty(&self) -> bool {
        false // N >= 1 by construction
    }

    /// Sample at time `k`.
    pub fn at(&self, k: usize) -> DVector<T> {
        self.data.column(k).into_owned()
    }

    pub fn data(&self) -> &DMatrix<T> {
        &self.data
    }

    /// Stacked window `x_[a,b]`: samples `a..=b` concatenated into one vector
    /// of dimension `d * (b - a + 1)`.
    pub fn window(&self, a: usize, b: usize) -> Result<DVector<T>> {
        if a > b || b >= self.len() {
            return Err(Error::Dimension(format!(
                "window [{a}, {b}] out of range for sequence of length {}",
                self.len()
            )));
        }
        let d = self.dim();
        let count = b - a + 1;
        let mut out = DVector::zeros(d * count);
        for (j, k) in (a..=b).enumerate() {
            out.rows_mut(j * d, d).copy_from(&self.data.column(k));
        }
        Ok(out)
    }

    /// The whole signal as one stacked vector `x_[0,N-1]`.
    pub fn stacked(&self) -> DVector<T> {
        self.window(0, self.len() - 1).expect("full window in range")
    }

    /// Copy of the samples `a..=b` as a new sequence.
    pub fn segment(&self, a: usize, b: usize) -> Result<Self> {
        if a > b || b >= self.len() {
            return Err(Error::Dimension(format!(
                "segment [{a}, {b}] out of range for sequence of length {}",
                self.len()
            )));
        }
        Ok(Self {
            data: self.data.columns(a, b - a + 1).into_owned(),
        })
    }

    /// Hankel matrix with `block_rows` block rows: column `j` stacks samples
    /// `j..j+block_rows-1`.
    pub fn hankel(&self, block_rows: usize) -> Result<HankelMatrix<T>> {
        HankelMatrix::build(self, block_rows)
    }
}

/// Paired input-output signal of common length.
#[derive(Debug, Clone)]
pub struct Trajectory<T: Scalar> {
    pub u: Sequence<T>,
    pub y: Sequence<T>,
}

impl<T: Scalar> Trajectory<T> {
    pub fn new(u: Sequence<T>, y: Sequence<T>) -> Result<Self> {
        if u.len() != y.len() {
            return Err(Error::Dimension(format!(
                "input length {} != output length {}",
                u.len(),
                y.len()
            )));
        }
        Ok(Self { u, y })
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Block-Hankel matrix of a sequence: shape `(d * L) x (N - L + 1)` where
/// block `(i, j)` equals sample `i + j`.
#[derive(Debug, Clone, PartialEq)]
pub struct HankelMatrix<T: Scalar> {
    entries: DMatrix<T>,
    block_rows: usize,
    block_dim: usize,
}

impl<T: Scalar> HankelMatrix<T> {
    fn build(x: &Sequence<T>, block_rows: usize) -> Result<Self> {
        let n = x.len();
        let d = x.dim();
        if block_rows == 0 || block_rows > n {
            return Err(Error::Dimension(format!(
                "hankel depth {block_rows} invalid for sequence of length {n}"
            )));
        }
        let ncols = n - block_rows + 1;
        let mut entries = DMatrix::zeros(d * block_rows, ncols);
        for j in 0..ncols {
            for i in 0..block_rows {
                entries
                    .view_mut((i * d, j), (d, 1))
                    .copy_from(&x.data().column(i + j));
            }
        }
        Ok(Self {
            entries,
            block_rows,
            block_dim: d,
        })
    }

    pub fn entries(&self) -> &DMatrix<T> {
        &self.entries
    }

    /// Number of block rows `L`.
    pub fn block_rows(&self) -> usize {
        self.block_rows
    }

    /// Dimension `d` of each block.
    pub fn block_dim(&self) -> usize {
        self.block_dim
    }

    pub fn ncols(&self) -> usize {
        self.entries.ncols()
    }

    /// Rows of blocks `first..first + count` as a matrix view copy.
    pub fn block_row_range(&self, first: usize, count: usize) -> DMatrix<T> {
        let d = self.block_dim;
        self.entries.rows(first * d, count * d).into_owned()
    }
}

/// Outcome of a persistence-of-excitation check.
#[derive(Debug, Clone, Copy)]
pub struct PeReport<T> {
    /// `rank == d * order`.
    pub is_pe: bool,
    /// Numerical rank of the order-`L` Hankel matrix.
    pub rank: usize,
    /// Smallest singular value of the Hankel matrix.
    pub sigma_min: T,
}

/// Checks persistence of excitation of the given order: the order-`L` Hankel
/// matrix of `u` must have full row rank `dim(u) * L`.
///
/// The rank is computed from singular values with relative threshold
/// `tol * sigma_max`; [`linalg::RANK_TOL`] is the conventional choice. A
/// Hankel matrix with fewer columns than rows simply reports `is_pe = false`.
pub fn persistence_of_excitation<T: Scalar>(
    u: &Sequence<T>,
    order: usize,
    tol: T,
) -> Result<PeReport<T>> {
    if tol <= T::zero() {
        return Err(Error::Config("rank tolerance must be positive".into()));
    }
    let h = u.hankel(order)?;
    let r = linalg::svd_rank(h.entries(), tol);
    Ok(PeReport {
        is_pe: r.rank == u.dim() * order,
        rank: r.rank,
        sigma_min: r.sigma_min,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::RANK_TOL;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sequence(dim: usize, len: usize, seed: u64) -> Sequence<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = DMatrix::from_fn(dim, len, |_, _| rng.random_range(-1.0..1.0));
        Sequence::from_matrix(data).unwrap()
    }

    #[test]
    fn hankel_scalar_example() {
        let x = Sequence::from_scalars(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        let h = x.hankel(2).unwrap();
        let expected = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 2.0, 3.0, 4.0]);
        assert_eq!(h.entries(), &expected);
    }

    #[test]
    fn hankel_degenerate_single_column() {
        let x = Sequence::from_scalars(&[5.0]).unwrap();
        let h = x.hankel(1).unwrap();
        assert_eq!(h.entries(), &DMatrix::from_element(1, 1, 5.0));
    }

    #[test]
    fn hankel_depth_exceeding_length_is_error() {
        let x = Sequence::from_scalars(&[1.0, 2.0]).unwrap();
        assert!(matches!(x.hankel(3), Err(Error::Dimension(_))));
    }

    #[test]
    fn hankel_columns_match_window_oracle() {
        let x = random_sequence(2, 10, 7);
        let h = x.hankel(3).unwrap();
        assert_eq!(h.entries().shape(), (6, 8));
        for j in 0..8 {
            let col = h.entries().column(j).into_owned();
            let win = x.window(j, j + 2).unwrap();
            assert_eq!(col, win);
        }
    }

    #[test]
    fn window_examples() {
        let x = Sequence::from_scalars(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(x.window(0, 2).unwrap().as_slice(), &[1.0, 2.0, 3.0]);
        assert_eq!(x.window(1, 1).unwrap().as_slice(), &[2.0]);
        assert!(x.window(1, 3).is_err());

        let x2 = Sequence::from_columns(&[
            DVector::from_vec(vec![1.0, 2.0]),
            DVector::from_vec(vec![3.0, 4.0]),
        ])
        .unwrap();
        assert_eq!(x2.window(0, 1).unwrap().as_slice(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn pe_geometric_sequence_is_rank_one() {
        let u = Sequence::from_scalars(&[1.0, 2.0, 4.0, 8.0]).unwrap();
        let rep = persistence_of_excitation(&u, 2, RANK_TOL).unwrap();
        assert!(!rep.is_pe);
        assert_eq!(rep.rank, 1);
    }

    #[test]
    fn pe_impulse_sequence() {
        let u = Sequence::from_scalars(&[0.0, 1.0, 0.0, 0.0]).unwrap();
        let rep = persistence_of_excitation(&u, 2, RANK_TOL).unwrap();
        assert!(rep.is_pe);
        assert_eq!(rep.rank, 2);
    }

    #[test]
    fn pe_random_input_high_order() {
        // m = 2, N = 400: random input excites order L + 2n = 38.
        let u = random_sequence(2, 400, 1);
        let rep = persistence_of_excitation(&u, 30 + 2 * 4, RANK_TOL).unwrap();
        assert!(rep.is_pe);
        assert_eq!(rep.rank, 2 * 38);
        assert!(rep.sigma_min > 0.0);
    }

    #[test]
    fn pe_too_narrow_is_not_an_error() {
        let u = random_sequence(2, 5, 3);
        let rep = persistence_of_excitation(&u, 4, RANK_TOL).unwrap();
        assert!(!rep.is_pe);
        assert!(rep.rank < 8);
    }

    #[test]
    fn hankel_shift_structure() {
        let x = random_sequence(3, 20, 11);
        let l = 5;
        let h = x.hankel(l).unwrap();
        let d = 3;
        let ncols = h.ncols();
        for i in 0..l - 1 {
            let upper = h.entries().view((i * d, 1), (d, ncols - 1)).into_owned();
            let lower = h
                .entries()
                .view(((i + 1) * d, 0), (d, ncols - 1))
                .into_owned();
            assert_eq!(upper, lower);
        }
    }

    #[test]
    fn segment_and_constant() {
        let v = DVector::from_vec(vec![1.5, -2.0]);
        let c = Sequence::constant(&v, 4).unwrap();
        assert_eq!(c.len(), 4);
        assert_eq!(c.at(3), v);
        let s = c.segment(1, 2).unwrap();
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn f32_instantiation_works() {
        let x = Sequence::<f32>::from_scalars(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        let rep = persistence_of_excitation(&x, 2, 1e-5f32).unwrap();
        assert_eq!(rep.rank, 2);
        assert_relative_eq!(x.window(0, 1).unwrap()[1], 2.0f32);
    }

    proptest! {
        #[test]
        fn prop_hankel_window_consistency(dim in 1usize..4, len in 4usize..24, seed in 0u64..500) {
            let l = 1 + (seed as usize % len.min(6));
            let x = random_sequence(dim, len, seed);
            let h = x.hankel(l).unwrap();
            for j in 0..h.ncols() {
                let col = h.entries().column(j).into_owned();
                let win = x.window(j, j + l - 1).unwrap();
                prop_assert_eq!(col, win);
            }
        }

        #[test]
        fn prop_pe_monotone_in_order(seed in 0u64..200) {
            // Random inputs over long horizons are persistently exciting with
            // margin; the property is that excitation survives shrinking L.
            let u = random_sequence(1, 60, seed);
            let l_max = 8;
            let rep = persistence_of_excitation(&u, l_max, RANK_TOL).unwrap();
            prop_assume!(rep.is_pe);
            for l in 1..l_max {
                let r = persistence_of_excitation(&u, l, RANK_TOL).unwrap();
                prop_assert!(r.is_pe, "PE lost at order {} of {}", l, l_max);
            }
        }
    }
}
