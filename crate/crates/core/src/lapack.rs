//! Thin wrappers over the LAPACK `?syevd` / `?heevd` drivers.
//!
//! Matrices are column-major, lower triangle referenced. The divide-and-conquer
//! drivers are several times faster than `?syev` for the full eigenvector set,
//! which dominates the cost of every realization at large dimension.

use std::os::raw::c_char;

use lapack_sys::lapack_int;
use num_complex::Complex;

// Forces the system OpenBLAS (which bundles LAPACK) into the link.
extern crate blas_src;
extern crate openblas_src;

const JOBZ: c_char = b'V' as c_char;
const UPLO: c_char = b'L' as c_char;

fn dim(n: usize) -> Result<lapack_int, i32> {
    lapack_int::try_from(n).map_err(|_| -1)
}

fn work_len<T: num_traits::ToPrimitive>(query: T) -> Result<usize, i32> {
    query.to_usize().map(|l| l.max(1)).ok_or(-1)
}

macro_rules! real_driver {
    ($name:ident, $ffi:ident, $t:ty) => {
        pub(crate) fn $name(n: usize, a: &mut [$t]) -> Result<Vec<$t>, i32> {
            assert_eq!(a.len(), n * n, "matrix buffer must be n*n");
            if n == 0 {
                return Ok(Vec::new());
            }
            let ni = dim(n)?;
            let mut w = vec![0.0 as $t; n];
            let mut info: lapack_int = 0;
            let mut work_query: $t = 0.0;
            let mut iwork_query: lapack_int = 0;
            let query: lapack_int = -1;
            // SAFETY: all pointers reference live buffers of the sizes LAPACK
            // expects; the workspace query writes only the two scalars.
            unsafe {
                lapack_sys::$ffi(
                    &JOBZ, &UPLO, &ni, a.as_mut_ptr(), &ni, w.as_mut_ptr(),
                    &mut work_query, &query, &mut iwork_query, &query, &mut info,
                );
            }
            if info != 0 {
                return Err(info);
            }
            let lwork = work_len(work_query)?;
            let liwork = work_len(iwork_query)?;
            let mut work = vec![0.0 as $t; lwork];
            let mut iwork = vec![0 as lapack_int; liwork];
            let (lw, liw) = (dim(lwork)?, dim(liwork)?);
            // SAFETY: workspaces sized from the query above.
            unsafe {
                lapack_sys::$ffi(
                    &JOBZ, &UPLO, &ni, a.as_mut_ptr(), &ni, w.as_mut_ptr(),
                    work.as_mut_ptr(), &lw, iwork.as_mut_ptr(), &liw, &mut info,
                );
            }
            if info != 0 {
                return Err(info);
            }
            Ok(w)
        }
    };
}

macro_rules! complex_driver {
    ($name:ident, $ffi:ident, $t:ty) => {
        pub(crate) fn $name(n: usize, a: &mut [Complex<$t>]) -> Result<Vec<$t>, i32> {
            assert_eq!(a.len(), n * n, "matrix buffer must be n*n");
            if n == 0 {
                return Ok(Vec::new());
            }
            let ni = dim(n)?;
            let mut w = vec![0.0 as $t; n];
            let mut info: lapack_int = 0;
            let mut work_query = Complex::<$t>::new(0.0, 0.0);
            let mut rwork_query: $t = 0.0;
            let mut iwork_query: lapack_int = 0;
            let query: lapack_int = -1;
            // num_complex::Complex is #[repr(C)] { re, im }, identical to the
            // bindgen complex type.
            let a_ptr = a.as_mut_ptr().cast();
            // SAFETY: see the real driver; complex layouts match.
            unsafe {
                lapack_sys::$ffi(
                    &JOBZ, &UPLO, &ni, a_ptr, &ni, w.as_mut_ptr(),
                    (&mut work_query as *mut Complex<$t>).cast(), &query,
                    &mut rwork_query, &query, &mut iwork_query, &query, &mut info,
                );
            }
            if info != 0 {
                return Err(info);
            }
            let lwork = work_len(work_query.re)?;
            let lrwork = work_len(rwork_query)?;
            let liwork = work_len(iwork_query)?;
            let mut work = vec![Complex::<$t>::new(0.0, 0.0); lwork];
            let mut rwork = vec![0.0 as $t; lrwork];
            let mut iwork = vec![0 as lapack_int; liwork];
            let (lw, lrw, liw) = (dim(lwork)?, dim(lrwork)?, dim(liwork)?);
            // SAFETY: workspaces sized from the query above.
            unsafe {
                lapack_sys::$ffi(
                    &JOBZ, &UPLO, &ni, a_ptr, &ni, w.as_mut_ptr(),
                    work.as_mut_ptr().cast(), &lw, rwork.as_mut_ptr(), &lrw,
                    iwork.as_mut_ptr(), &liw, &mut info,
                );
            }
            if info != 0 {
                return Err(info);
            }
            Ok(w)
        }
    };
}

real_driver!(ssyevd, ssyevd_, f32);
real_driver!(dsyevd, dsyevd_, f64);
complex_driver!(cheevd, cheevd_, f32);
complex_driver!(zheevd, zheevd_, f64);
