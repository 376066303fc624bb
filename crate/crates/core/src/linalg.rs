//! Dense matrices that are either real or complex.
//!
//! GOE Hamiltonians (and their eigenvectors) are real; keeping them real
//! halves memory and roughly quarters the cost of the eigensolve and of every
//! propagation at large dimension.

use ndarray::{s, Array1, Array2, ArrayView2, ShapeBuilder};

use crate::error::{Error, Result};
use crate::scalar::{Real, C};

#[derive(Clone, Debug, PartialEq)]
pub enum DenseMatrix<R> {
    Real(Array2<R>),
    Complex(Array2<C<R>>),
}

impl<R: Real> DenseMatrix<R> {
    pub fn nrows(&self) -> usize {
        match self {
            DenseMatrix::Real(m) => m.nrows(),
            DenseMatrix::Complex(m) => m.nrows(),
        }
    }

    pub fn ncols(&self) -> usize {
        match self {
            DenseMatrix::Real(m) => m.ncols(),
            DenseMatrix::Complex(m) => m.ncols(),
        }
    }

    pub fn is_real(&self) -> bool {
        matches!(self, DenseMatrix::Real(_))
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> C<R> {
        match self {
            DenseMatrix::Real(m) => C::new(m[[i, j]], R::zero()),
            DenseMatrix::Complex(m) => m[[i, j]],
        }
    }

    pub fn to_complex(&self) -> Array2<C<R>> {
        match self {
            DenseMatrix::Real(m) => m.mapv(|x| C::new(x, R::zero())),
            DenseMatrix::Complex(m) => m.clone(),
        }
    }

    /// `max |M - M^H|` over all entries.
    pub fn hermiticity_defect(&self) -> R {
        let n = self.nrows();
        let mut worst = R::zero();
        for i in 0..n {
            for j in 0..=i {
                let d = (self.get(i, j) - self.get(j, i).conj()).norm();
                worst = worst.max(d);
            }
        }
        worst
    }

    pub fn max_abs(&self) -> R {
        match self {
            DenseMatrix::Real(m) => m.iter().fold(R::zero(), |a, x| a.max(x.abs())),
            DenseMatrix::Complex(m) => m.iter().fold(R::zero(), |a, x| a.max(x.norm())),
        }
    }

    /// Full eigendecomposition of a Hermitian matrix. Eigenvalues ascending;
    /// eigenvectors are the columns of the returned matrix, of the same kind
    /// (real or complex) as `self`. Only the lower triangle is read.
    pub fn eigh(&self) -> Result<(Array1<R>, DenseMatrix<R>)> {
        let n = self.nrows();
        assert_eq!(n, self.ncols(), "eigh needs a square matrix");
        let fail = |info| Error::Eigensolver { dimension: n, info };
        match self {
            DenseMatrix::Real(m) => {
                let mut a = Array2::<R>::zeros((n, n).f());
                a.assign(m);
                let buf = a.as_slice_memory_order_mut().expect("contiguous");
                let w = R::symmetric_eigen(n, buf).map_err(fail)?;
                Ok((Array1::from(w), DenseMatrix::Real(a)))
            }
            DenseMatrix::Complex(m) => {
                let mut a = Array2::<C<R>>::zeros((n, n).f());
                a.assign(m);
                let buf = a.as_slice_memory_order_mut().expect("contiguous");
                let w = R::hermitian_eigen(n, buf).map_err(fail)?;
                Ok((Array1::from(w), DenseMatrix::Complex(a)))
            }
        }
    }

    /// `M S` for a block of complex column vectors `S`.
    pub fn mul_states(&self, states: ArrayView2<C<R>>) -> Array2<C<R>> {
        match self {
            DenseMatrix::Real(m) => real_times_complex(m.view(), states),
            DenseMatrix::Complex(m) => m.dot(&states),
        }
    }

    /// `M^H S` for a block of complex column vectors `S`.
    pub fn adjoint_mul_states(&self, states: ArrayView2<C<R>>) -> Array2<C<R>> {
        match self {
            DenseMatrix::Real(m) => real_times_complex(m.t(), states),
            DenseMatrix::Complex(m) => {
                // M^H S = conj(M^T conj(S)); avoids materializing M^H.
                let conj_states = states.mapv(|z| z.conj());
                let mut out = m.t().dot(&conj_states);
                out.mapv_inplace(|z| z.conj());
                out
            }
        }
    }

    /// Columns `range` of the matrix as complex.
    pub fn columns_complex(&self, range: std::ops::Range<usize>) -> Array2<C<R>> {
        match self {
            DenseMatrix::Real(m) => m
                .slice(s![.., range])
                .mapv(|x| C::new(x, R::zero())),
            DenseMatrix::Complex(m) => m.slice(s![.., range]).to_owned(),
        }
    }
}

/// Real matrix times complex block via one real GEMM on `[Re S | Im S]`.
fn real_times_complex<R: Real>(m: ArrayView2<R>, states: ArrayView2<C<R>>) -> Array2<C<R>> {
    let k = states.ncols();
    let mut stacked = Array2::<R>::zeros((states.nrows(), 2 * k));
    stacked.slice_mut(s![.., ..k]).zip_mut_with(&states, |r, z| *r = z.re);
    stacked.slice_mut(s![.., k..]).zip_mut_with(&states, |r, z| *r = z.im);
    let prod = m.dot(&stacked);
    let mut out = Array2::<C<R>>::zeros((m.nrows(), k));
    ndarray::Zip::from(&mut out)
        .and(prod.slice(s![.., ..k]))
        .and(prod.slice(s![.., k..]))
        .for_each(|o, &re, &im| *o = C::new(re, im));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn diagonal_input() {
        let m = DenseMatrix::Real(Array2::from_diag(&array![1.0f64, 2.0, 3.0]));
        let (w, v) = m.eigh().unwrap();
        assert_eq!(w.to_vec(), vec![1.0, 2.0, 3.0]);
        for i in 0..3 {
            for j in 0..3 {
                let expect: f64 = if i == j { 1.0 } else { 0.0 };
                assert!((v.get(i, j).norm() - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn pauli_x() {
        let m = DenseMatrix::Real(array![[0.0f64, 1.0], [1.0, 0.0]]);
        let (w, _) = m.eigh().unwrap();
        assert!((w[0] + 1.0).abs() < 1e-14 && (w[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn real_and_complex_products_agree() {
        let m = array![[1.0, 2.0], [3.0, -1.0]];
        let s = array![[C::new(1.0, 2.0)], [C::new(-0.5, 0.25)]];
        let real = DenseMatrix::Real(m.clone());
        let cplx = DenseMatrix::Complex(m.mapv(|x| C::new(x, 0.0)));
        let a = real.mul_states(s.view());
        let b = cplx.mul_states(s.view());
        let c = real.adjoint_mul_states(s.view());
        let d = cplx.adjoint_mul_states(s.view());
        for (x, y) in a.iter().zip(b.iter()).chain(c.iter().zip(d.iter())) {
            assert!((x - y).norm() < 1e-15);
        }
        assert!((a[[0, 0]] - C::new(0.0, 2.5)).norm() < 1e-15);
        assert!((c[[0, 0]] - C::new(-0.5, 2.75)).norm() < 1e-15);
    }

    #[test]
    fn complex_adjoint_product() {
        let m = DenseMatrix::Complex(array![
            [C::new(0.0, 0.0), C::new(0.0, -1.0)],
            [C::new(0.0, 1.0), C::new(0.0, 0.0)]
        ]);
        assert_eq!(m.hermiticity_defect(), 0.0);
        let s = array![[C::new(1.0, 0.0)], [C::new(0.0, 0.0)]];
        let out = m.adjoint_mul_states(s.view());
        // M^H e0 = conj of the first row of M = (0, i)
        assert!((out[[1, 0]] - C::new(0.0, 1.0)).norm() < 1e-15);
    }
}
