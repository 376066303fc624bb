//! Exact propagation through one cached eigendecomposition, plus the
//! initial-state samplers.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::model::{BlockHamiltonian, Coarsening, Macrostate, MACROSTATES};
use crate::rng::{self, Stream};
use crate::scalar::{phase, Real, C};

/// Normalized (or, for branches, sub-normalized) pure state.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector<R>(pub Array1<C<R>>);

impl<R: Real> StateVector<R> {
    pub fn new(amplitudes: Array1<C<R>>) -> Self {
        StateVector(amplitudes)
    }

    pub fn basis(d: usize, k: usize) -> Self {
        let mut a = Array1::zeros(d);
        a[k] = C::new(R::one(), R::zero());
        StateVector(a)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn amplitudes(&self) -> ArrayView1<'_, C<R>> {
        self.0.view()
    }

    pub fn norm_sqr(&self) -> R {
        self.0.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn norm(&self) -> R {
        self.norm_sqr().sqrt()
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &StateVector<R>) -> C<R> {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| a.conj() * b)
            .fold(C::new(R::zero(), R::zero()), |acc, z| acc + z)
    }
}

#[derive(Clone, Debug)]
pub struct SpectralDecomposition<R> {
    /// Ascending.
    pub eigenvalues: Array1<R>,
    /// Orthonormal eigenvectors as columns.
    pub eigenvectors: DenseMatrix<R>,
}

pub fn eigendecompose<R: Real>(h: &BlockHamiltonian<R>) -> Result<SpectralDecomposition<R>> {
    let (eigenvalues, eigenvectors) = h.matrix.eigh()?;
    Ok(SpectralDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

impl<R: Real> SpectralDecomposition<R> {
    pub fn dimension(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Coefficients `E^H S` of a block of states in the eigenbasis.
    pub fn to_eigenbasis(&self, states: ArrayView2<C<R>>) -> Array2<C<R>> {
        self.eigenvectors.adjoint_mul_states(states)
    }

    /// States `E C` from eigenbasis coefficients.
    pub fn from_eigenbasis(&self, coeffs: ArrayView2<C<R>>) -> Array2<C<R>> {
        self.eigenvectors.mul_states(coeffs)
    }

    /// Multiplies eigenbasis coefficients by `exp(-i E_k dt)` in place.
    pub fn apply_phases(&self, coeffs: &mut Array2<C<R>>, dt: R) {
        for (mut row, &e) in coeffs.axis_iter_mut(Axis(0)).zip(self.eigenvalues.iter()) {
            let ph = phase(-e * dt);
            row.mapv_inplace(|z| z * ph);
        }
    }

    /// `exp(-i H dt)` applied to every column of `states`.
    pub fn evolve_batch(&self, states: ArrayView2<C<R>>, dt: R) -> Array2<C<R>> {
        if dt == R::zero() {
            return states.to_owned();
        }
        let mut coeffs = self.to_eigenbasis(states);
        self.apply_phases(&mut coeffs, dt);
        self.from_eigenbasis(coeffs.view())
    }

    pub fn evolve(&self, psi: &StateVector<R>, dt: R) -> StateVector<R> {
        let col = psi.0.view().insert_axis(Axis(1));
        StateVector(self.evolve_batch(col, dt).remove_axis(Axis(1)))
    }

    pub fn eigenvector(&self, k: usize) -> StateVector<R> {
        StateVector(self.eigenvectors.columns_complex(k..k + 1).remove_axis(Axis(1)))
    }

    /// `max |H - E diag(w) E^H|`.
    pub fn reconstruction_residual(&self, h: &DenseMatrix<R>) -> R {
        let v = self.eigenvectors.to_complex();
        let mut scaled = v.clone();
        for (mut col, &w) in scaled.columns_mut().into_iter().zip(self.eigenvalues.iter()) {
            col.mapv_inplace(|z| z * w);
        }
        let rebuilt = scaled.dot(&v.t().mapv(|z| z.conj()));
        let mut worst = R::zero();
        for ((i, j), z) in rebuilt.indexed_iter() {
            worst = worst.max((*z - h.get(i, j)).norm());
        }
        worst
    }

    /// `max |E^H E - I|`.
    pub fn orthonormality_defect(&self) -> R {
        let v = self.eigenvectors.to_complex();
        let g = v.t().mapv(|z| z.conj()).dot(&v);
        let mut worst = R::zero();
        for ((i, j), z) in g.indexed_iter() {
            let target = if i == j { R::one() } else { R::zero() };
            worst = worst.max((*z - C::new(target, R::zero())).norm());
        }
        worst
    }
}

/// `P_x |psi>`.
pub fn apply_projector<R: Real>(c: &Coarsening<R>, x: Macrostate, psi: &StateVector<R>) -> StateVector<R> {
    StateVector(c.apply(x, psi.amplitudes()))
}

/// Macrostate weights `<psi|P_x|psi>`.
pub fn macrostate_weights<R: Real>(c: &Coarsening<R>, psi: &StateVector<R>) -> [R; MACROSTATES] {
    Macrostate::ALL.map(|x| c.weight(x, psi.amplitudes()))
}

/// Equilibrium weights `V_x / D`.
pub fn equilibrium_weights<R: Real>(c: &Coarsening<R>) -> [R; MACROSTATES] {
    let d = R::from_usize(c.dimension()).expect("dimension fits");
    c.volumes().map(|v| R::from_usize(v).expect("volume fits") / d)
}

/// `sum_x sqrt(p_x) |psi_x>` with each `|psi_x>` Haar random on the range of
/// `P_x`. Subspace states are drawn in the order `-, 0, +` regardless of the
/// weights, so a seed fixes all three.
pub fn sample_haar_equilibrium<R: Real>(
    c: &Coarsening<R>,
    weights: [R; MACROSTATES],
    state_seed: u64,
) -> Result<StateVector<R>> {
    let tol = R::lit(1e-12).max(R::epsilon() * R::lit(8.0));
    if weights.iter().any(|w| !(*w >= R::zero()) || !w.is_finite()) {
        return Err(Error::InvalidArgument(format!("weights {weights:?} must be nonnegative")));
    }
    let total: R = weights.iter().copied().sum();
    if (total - R::one()).abs() > tol {
        return Err(Error::InvalidArgument(format!("weights {weights:?} sum to {total}, not 1")));
    }
    let volumes = c.volumes();
    for x in Macrostate::ALL {
        if weights[x.index()] > R::zero() && volumes[x.index()] == 0 {
            return Err(Error::InvalidArgument(format!(
                "weight on macrostate {x} but its subspace is empty"
            )));
        }
    }
    let mut g = rng::generator(state_seed, Stream::InitialState);
    let mut psi = Array1::<C<R>>::zeros(c.dimension());
    for x in Macrostate::ALL {
        let v = volumes[x.index()];
        let coords: Array1<C<R>> = (0..v).map(|_| rng::complex_normal::<R>(&mut g)).collect();
        let p = weights[x.index()];
        if p == R::zero() || v == 0 {
            continue;
        }
        let norm = coords.iter().map(|z| z.norm_sqr()).sum::<R>().sqrt();
        let scale = p.sqrt() / norm;
        psi += &c.embed(x, coords.mapv(|z| z * scale).view());
    }
    Ok(StateVector(psi))
}

#[derive(Clone, Debug)]
pub struct SelectedEigenstate<R> {
    pub index: usize,
    pub state: StateVector<R>,
}

/// Uniformly random eigenvector of the full Hamiltonian.
pub fn select_eigenstate<R: Real>(sd: &SpectralDecomposition<R>, state_seed: u64) -> SelectedEigenstate<R> {
    let mut g = rng::generator(state_seed, Stream::EigenstateIndex);
    let index = g.random_range(0..sd.dimension());
    SelectedEigenstate {
        index,
        state: sd.eigenvector(index),
    }
}
