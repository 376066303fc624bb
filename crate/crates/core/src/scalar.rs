//! Floating-point abstraction shared by the numerical core.
//!
//! Everything below `experiments` is generic over [`Real`], implemented for
//! `f32` and `f64`. The only backend-specific piece is the dense Hermitian
//! eigensolver, which dispatches to the matching LAPACK divide-and-conquer
//! driver.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::{LinalgScalar, ScalarOperand};
use num_complex::Complex;
use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

use crate::lapack;

/// Real scalar type the simulation can run in.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
    + LinalgScalar
    + ScalarOperand
{
    /// Eigendecomposition of a real symmetric `n x n` matrix stored
    /// column-major in `a`. On success `a` holds the orthonormal eigenvectors
    /// (columns) and the ascending eigenvalues are returned.
    fn symmetric_eigen(n: usize, a: &mut [Self]) -> Result<Vec<Self>, i32>;

    /// Complex Hermitian counterpart of [`Real::symmetric_eigen`].
    fn hermitian_eigen(n: usize, a: &mut [Complex<Self>]) -> Result<Vec<Self>, i32>;

    /// Converts an `f64` literal. Infallible for the supported types.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite float converts to f64")
    }
}

impl Real for f32 {
    fn symmetric_eigen(n: usize, a: &mut [f32]) -> Result<Vec<f32>, i32> {
        lapack::ssyevd(n, a)
    }

    fn hermitian_eigen(n: usize, a: &mut [Complex<f32>]) -> Result<Vec<f32>, i32> {
        lapack::cheevd(n, a)
    }
}

impl Real for f64 {
    fn symmetric_eigen(n: usize, a: &mut [f64]) -> Result<Vec<f64>, i32> {
        lapack::dsyevd(n, a)
    }

    fn hermitian_eigen(n: usize, a: &mut [Complex<f64>]) -> Result<Vec<f64>, i32> {
        lapack::zheevd(n, a)
    }
}

/// Complex amplitude type for a given real scalar.
pub type C<R> = Complex<R>;

/// Unit-modulus phase `exp(i theta)`.
#[inline]
pub fn phase<R: Real>(theta: R) -> C<R> {
    C::new(theta.cos(), theta.sin())
}
