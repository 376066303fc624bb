//! The two-band random-matrix heat-exchange model restricted to one
//! microcanonical window, and its three-macrostate coarse-graining.
//!
//! Basis ordering is `(-, 0, +)`: the first `V` states belong to the `-`
//! window, the next `3V` to the equal-energy window `0`, the last `V` to `+`.
//! The total dimension is `D = 5V`.

use std::fmt;
use std::ops::Range;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::rng::{self, Stream};
use crate::scalar::{phase, Real, C};

/// Number of macrostates.
pub const MACROSTATES: usize = 3;

/// Threshold below which the "strong interaction" condition is flagged.
const INTERACTION_STRENGTH_FLOOR: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Macrostate {
    Minus,
    Zero,
    Plus,
}

impl Macrostate {
    pub const ALL: [Macrostate; MACROSTATES] = [Macrostate::Minus, Macrostate::Zero, Macrostate::Plus];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    #[inline]
    pub fn from_index(i: usize) -> Macrostate {
        Self::ALL[i]
    }

    pub fn symbol(self) -> char {
        match self {
            Macrostate::Minus => '-',
            Macrostate::Zero => '0',
            Macrostate::Plus => '+',
        }
    }

    pub fn from_symbol(c: char) -> Option<Macrostate> {
        match c {
            '-' => Some(Macrostate::Minus),
            '0' => Some(Macrostate::Zero),
            '+' => Some(Macrostate::Plus),
            _ => None,
        }
    }
}

impl fmt::Display for Macrostate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.symbol())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingRegime {
    #[default]
    Weak,
    Strong,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ensemble {
    #[default]
    Goe,
    Gue,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagonalSpacing {
    #[default]
    Equal,
    Random,
}

impl fmt::Display for CouplingRegime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CouplingRegime::Weak => "weak",
            CouplingRegime::Strong => "strong",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig<R> {
    /// Size of the `-` (and `+`) window.
    pub v_minus: usize,
    pub delta_e: R,
    pub regime: CouplingRegime,
    pub ensemble: Ensemble,
    pub spacing: DiagonalSpacing,
    pub hamiltonian_seed: u64,
    /// Target value of the weak-coupling smallness condition.
    pub smallness_target: R,
}

impl<R: Real> ModelConfig<R> {
    /// Weak-coupling GOE model with equally spaced levels and `delta_e = 1`.
    pub fn new(v_minus: usize, hamiltonian_seed: u64) -> Self {
        ModelConfig {
            v_minus,
            delta_e: R::one(),
            regime: CouplingRegime::Weak,
            ensemble: Ensemble::Goe,
            spacing: DiagonalSpacing::Equal,
            hamiltonian_seed,
            smallness_target: R::lit(0.01),
        }
    }

    /// Builds the config for total dimension `d`, which must be a positive
    /// multiple of 5.
    pub fn with_dimension(d: usize, hamiltonian_seed: u64) -> Result<Self> {
        if d == 0 || d % 5 != 0 {
            return Err(Error::config("model.d", format!("dimension {d} is not a positive multiple of 5")));
        }
        Ok(Self::new(d / 5, hamiltonian_seed))
    }

    pub fn validate(&self) -> Result<()> {
        if self.v_minus == 0 {
            return Err(Error::config("model.v_minus", "must be at least 1"));
        }
        if !(self.delta_e > R::zero()) || !self.delta_e.is_finite() {
            return Err(Error::config("model.delta_e", "must be positive and finite"));
        }
        if !(self.smallness_target > R::zero() && self.smallness_target <= R::one()) {
            return Err(Error::config("model.smallness_target", "must lie in (0, 1]"));
        }
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        5 * self.v_minus
    }

    /// `(V_-, V_0, V_+)`.
    pub fn volumes(&self) -> [usize; MACROSTATES] {
        [self.v_minus, 3 * self.v_minus, self.v_minus]
    }

    pub fn block_layout(&self) -> [Range<usize>; MACROSTATES] {
        layout_from_volumes(self.volumes())
    }
}

fn layout_from_volumes(volumes: [usize; MACROSTATES]) -> [Range<usize>; MACROSTATES] {
    let a = volumes[0];
    let b = a + volumes[1];
    let c = b + volumes[2];
    [0..a, a..b, b..c]
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CouplingParameters<R> {
    pub lambda: R,
    /// Relaxation time scale, used as the default history step.
    pub tau: R,
    /// `(1/V)(pi lambda V / 2 dE)^2`, required to be small.
    pub smallness_left: R,
    /// `32 (pi lambda V / 2 dE)^2`, required to be large.
    pub interaction_strength_right: R,
    /// Set when `interaction_strength_right < 10`.
    pub weak_interaction_warning: bool,
}

/// Coupling constant and time scale for a model configuration.
pub fn derive_coupling<R: Real>(config: &ModelConfig<R>) -> CouplingParameters<R> {
    let v = R::from_usize(config.v_minus).expect("volume fits");
    let de = config.delta_e;
    let two = R::lit(2.0);
    let pi = R::PI();
    let mut lambda = two * de / pi * (config.smallness_target / v).sqrt();
    if config.regime == CouplingRegime::Strong {
        lambda *= R::lit(10.0);
    }
    let x = pi * lambda * v / (two * de);
    let smallness_left = x * x / v;
    let interaction_strength_right = R::lit(32.0) * x * x;
    let tau = de / (R::lit(4.0) * pi * lambda * lambda * v);
    CouplingParameters {
        lambda,
        tau,
        smallness_left,
        interaction_strength_right,
        weak_interaction_warning: interaction_strength_right < R::lit(INTERACTION_STRENGTH_FLOOR),
    }
}

#[derive(Clone, Debug)]
pub struct BlockHamiltonian<R> {
    pub matrix: DenseMatrix<R>,
    pub layout: [Range<usize>; MACROSTATES],
    pub coupling: CouplingParameters<R>,
}

impl<R: Real> BlockHamiltonian<R> {
    pub fn dimension(&self) -> usize {
        self.matrix.nrows()
    }

    /// Wraps an arbitrary Hermitian matrix, e.g. for tests against external
    /// oracles. The layout is the default three-window split when `d` is a
    /// multiple of 5 and a single block otherwise.
    pub fn from_matrix(matrix: DenseMatrix<R>, coupling: CouplingParameters<R>) -> Self {
        let d = matrix.nrows();
        let layout = if d % 5 == 0 && d > 0 {
            layout_from_volumes([d / 5, 3 * d / 5, d / 5])
        } else {
            [0..0, 0..d, d..d]
        };
        BlockHamiltonian { matrix, layout, coupling }
    }
}

/// Levels of one diagonal block inside `[0, 2 dE)`.
fn block_energies<R: Real, G: Rng>(count: usize, config: &ModelConfig<R>, rng: &mut G) -> Vec<R> {
    let width = R::lit(2.0) * config.delta_e;
    let n = R::from_usize(count).expect("volume fits");
    match config.spacing {
        DiagonalSpacing::Equal => (0..count)
            .map(|k| width * R::from_usize(k).expect("index fits") / n)
            .collect(),
        DiagonalSpacing::Random => {
            let mut e: Vec<R> = (0..count)
                .map(|_| width * R::lit(rng.random::<f64>()))
                .collect();
            e.sort_by(|a, b| a.partial_cmp(b).expect("finite energies"));
            e
        }
    }
}

/// Fills the `(-,0)` and `(0,+)` coupling blocks (and their adjoints) with
/// entries from `draw`.
fn fill_couplings<T, F>(
    m: &mut Array2<T>,
    layout: &[Range<usize>; MACROSTATES],
    rng: &mut rand_chacha::ChaCha8Rng,
    mut draw: F,
) where
    T: Copy,
    F: FnMut(&mut rand_chacha::ChaCha8Rng) -> (T, T),
{
    let [minus, zero, plus] = layout.clone();
    for (rows, cols) in [(minus, zero.clone()), (zero, plus)] {
        for i in rows.clone() {
            for j in cols.clone() {
                let (v, v_adj) = draw(rng);
                m[[i, j]] = v;
                m[[j, i]] = v_adj;
            }
        }
    }
}

/// Builds the block Hamiltonian: diagonal level blocks with `H_-- = H_++`,
/// Gaussian couplings between neighbouring windows, and a zero `(-,+)` block.
pub fn build_hamiltonian<R: Real>(config: &ModelConfig<R>) -> Result<BlockHamiltonian<R>> {
    config.validate()?;
    let coupling = derive_coupling(config);
    let layout = config.block_layout();
    let d = config.dimension();
    let [v_minus, v_zero, _] = config.volumes();

    let mut energy_rng = rng::generator(config.hamiltonian_seed, Stream::DiagonalEnergies);
    let e_minus = block_energies(v_minus, config, &mut energy_rng);
    let e_zero = block_energies(v_zero, config, &mut energy_rng);
    let diagonal: Vec<R> = e_minus
        .iter()
        .chain(e_zero.iter())
        .chain(e_minus.iter())
        .copied()
        .collect();

    let mut coupling_rng = rng::generator(config.hamiltonian_seed, Stream::Couplings);
    let lambda = coupling.lambda;
    let matrix = match config.ensemble {
        Ensemble::Goe => {
            let mut m = Array2::<R>::zeros((d, d));
            fill_couplings(&mut m, &layout, &mut coupling_rng, |g| {
                let v = lambda * rng::normal::<R>(g);
                (v, v)
            });
            for (i, e) in diagonal.iter().enumerate() {
                m[[i, i]] = *e;
            }
            DenseMatrix::Real(m)
        }
        Ensemble::Gue => {
            let mut m = Array2::<C<R>>::zeros((d, d));
            fill_couplings(&mut m, &layout, &mut coupling_rng, |g| {
                let v = rng::complex_normal::<R>(g) * lambda;
                (v, v.conj())
            });
            for (i, e) in diagonal.iter().enumerate() {
                m[[i, i]] = C::new(*e, R::zero());
            }
            DenseMatrix::Complex(m)
        }
    };
    Ok(BlockHamiltonian {
        matrix,
        layout,
        coupling,
    })
}

/// Hermitian generator `A` of a projector rotation `exp(i A delta)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationGenerator {
    /// `A_ij = 1` for `|i - j| = 1`.
    NearestNeighbor,
    /// `A_ij = 1` for `i + j = D - 1` (zero-based).
    AntiDiagonal,
    /// Drawn like the unscaled interaction: Gaussian `(-,0)` and `(0,+)` blocks.
    RandomLikeInteraction,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Perturbation<R> {
    pub generator: PerturbationGenerator,
    pub delta: R,
    /// Seed for `RandomLikeInteraction`; ignored otherwise.
    pub seed: u64,
}

/// A complete orthogonal family of projectors `{P_-, P_0, P_+}`.
///
/// Each projector is `B_x B_x^H` where `B_x` is a block of columns of a
/// unitary `basis` selected by `ranges[x]`. With no basis the projectors are
/// the coordinate masks over `ranges`.
#[derive(Clone, Debug)]
pub struct Coarsening<R> {
    ranges: [Range<usize>; MACROSTATES],
    basis: Option<DenseMatrix<R>>,
}

impl<R: Real> Coarsening<R> {
    /// Coordinate projectors onto contiguous index ranges.
    pub fn from_ranges(ranges: [Range<usize>; MACROSTATES]) -> Result<Self> {
        check_ranges(&ranges)?;
        Ok(Coarsening { ranges, basis: None })
    }

    /// Projectors onto groups of columns of a unitary matrix: group `x` spans
    /// columns `ranges[x]`. Spectral projectors of a Hamiltonian are built by
    /// passing its eigenvectors.
    pub fn from_basis(basis: DenseMatrix<R>, ranges: [Range<usize>; MACROSTATES]) -> Result<Self> {
        check_ranges(&ranges)?;
        if basis.nrows() != basis.ncols() || basis.nrows() != ranges[2].end {
            return Err(Error::InvalidArgument(format!(
                "basis is {}x{}, ranges cover {}",
                basis.nrows(),
                basis.ncols(),
                ranges[2].end
            )));
        }
        Ok(Coarsening {
            ranges,
            basis: Some(basis),
        })
    }

    pub fn dimension(&self) -> usize {
        self.ranges[2].end
    }

    pub fn ranges(&self) -> &[Range<usize>; MACROSTATES] {
        &self.ranges
    }

    pub fn is_coordinate(&self) -> bool {
        self.basis.is_none()
    }

    /// `rank(P_x)` for each macrostate.
    pub fn volumes(&self) -> [usize; MACROSTATES] {
        [self.ranges[0].len(), self.ranges[1].len(), self.ranges[2].len()]
    }

    /// Isometry `B_x` whose columns span the range of `P_x`.
    pub fn subspace_basis(&self, x: Macrostate) -> Array2<C<R>> {
        let r = self.ranges[x.index()].clone();
        match &self.basis {
            Some(b) => b.columns_complex(r),
            None => {
                let mut m = Array2::zeros((self.dimension(), r.len()));
                for (col, row) in r.enumerate() {
                    m[[row, col]] = C::new(R::one(), R::zero());
                }
                m
            }
        }
    }

    /// Dense `D x D` projector matrix.
    pub fn projector_matrix(&self, x: Macrostate) -> Array2<C<R>> {
        let b = self.subspace_basis(x);
        b.dot(&b.t().mapv(|z| z.conj()))
    }

    /// `P_x` applied to every column of `states`.
    pub fn apply_batch(&self, x: Macrostate, states: ArrayView2<C<R>>) -> Array2<C<R>> {
        let r = self.ranges[x.index()].clone();
        match &self.basis {
            None => {
                let mut out = Array2::zeros(states.raw_dim());
                out.slice_mut(s![r.clone(), ..]).assign(&states.slice(s![r, ..]));
                out
            }
            Some(_) => {
                let b = self.subspace_basis(x);
                let coeff = b.t().mapv(|z| z.conj()).dot(&states);
                b.dot(&coeff)
            }
        }
    }

    pub fn apply(&self, x: Macrostate, psi: ArrayView1<C<R>>) -> Array1<C<R>> {
        let col = psi.insert_axis(ndarray::Axis(1));
        self.apply_batch(x, col).remove_axis(ndarray::Axis(1))
    }

    /// `<psi|P_x|psi>`.
    pub fn weight(&self, x: Macrostate, psi: ArrayView1<C<R>>) -> R {
        let r = self.ranges[x.index()].clone();
        match &self.basis {
            None => psi.slice(s![r]).iter().map(|z| z.norm_sqr()).sum(),
            Some(_) => {
                let b = self.subspace_basis(x);
                b.t()
                    .mapv(|z| z.conj())
                    .dot(&psi)
                    .iter()
                    .map(|z| z.norm_sqr())
                    .sum()
            }
        }
    }

    /// Embeds subspace coordinates (length `V_x`) into the full space.
    pub fn embed(&self, x: Macrostate, coords: ArrayView1<C<R>>) -> Array1<C<R>> {
        let r = self.ranges[x.index()].clone();
        assert_eq!(coords.len(), r.len(), "coordinate count must equal V_x");
        match &self.basis {
            None => {
                let mut out = Array1::zeros(self.dimension());
                out.slice_mut(s![r]).assign(&coords);
                out
            }
            Some(_) => self.subspace_basis(x).dot(&coords),
        }
    }
}

fn check_ranges(ranges: &[Range<usize>; MACROSTATES]) -> Result<()> {
    if ranges[0].start != 0 || ranges[0].end != ranges[1].start || ranges[1].end != ranges[2].start {
        return Err(Error::InvalidArgument(format!(
            "macrostate ranges {ranges:?} must be contiguous and start at 0"
        )));
    }
    if ranges.iter().any(|r| r.start > r.end) || ranges[2].end == 0 {
        return Err(Error::InvalidArgument(format!("macrostate ranges {ranges:?} are empty or reversed")));
    }
    Ok(())
}

fn perturbation_generator<R: Real>(config: &ModelConfig<R>, p: &Perturbation<R>) -> DenseMatrix<R> {
    let d = config.dimension();
    match p.generator {
        PerturbationGenerator::NearestNeighbor => {
            let mut a = Array2::<R>::zeros((d, d));
            for i in 1..d {
                a[[i, i - 1]] = R::one();
                a[[i - 1, i]] = R::one();
            }
            DenseMatrix::Real(a)
        }
        PerturbationGenerator::AntiDiagonal => {
            let mut a = Array2::<R>::zeros((d, d));
            for i in 0..d {
                a[[i, d - 1 - i]] = R::one();
            }
            DenseMatrix::Real(a)
        }
        PerturbationGenerator::RandomLikeInteraction => {
            let layout = config.block_layout();
            let mut g = rng::generator(p.seed, Stream::PerturbationGenerator);
            match config.ensemble {
                Ensemble::Goe => {
                    let mut a = Array2::<R>::zeros((d, d));
                    fill_couplings(&mut a, &layout, &mut g, |g| {
                        let v = rng::normal::<R>(g);
                        (v, v)
                    });
                    DenseMatrix::Real(a)
                }
                Ensemble::Gue => {
                    let mut a = Array2::<C<R>>::zeros((d, d));
                    fill_couplings(&mut a, &layout, &mut g, |g| {
                        let v = rng::complex_normal::<R>(g);
                        (v, v.conj())
                    });
                    DenseMatrix::Complex(a)
                }
            }
        }
    }
}

/// The three window projectors, optionally rotated by `exp(i A delta)`.
pub fn build_coarsening<R: Real>(
    config: &ModelConfig<R>,
    perturbation: Option<&Perturbation<R>>,
) -> Result<Coarsening<R>> {
    config.validate()?;
    let ranges = config.block_layout();
    let Some(p) = perturbation else {
        return Coarsening::from_ranges(ranges);
    };
    if !p.delta.is_finite() {
        return Err(Error::config("perturbation.delta", "must be finite"));
    }
    if p.delta == R::zero() {
        return Coarsening::from_ranges(ranges);
    }
    let a = perturbation_generator(config, p);
    let (w, vecs) = a.eigh()?;
    // V = W diag(exp(i delta w)) W^H
    let d = config.dimension();
    let wc = vecs.to_complex();
    let mut scaled = wc.clone();
    for (mut col, &wk) in scaled.columns_mut().into_iter().zip(w.iter()) {
        let ph = phase(p.delta * wk);
        col.mapv_inplace(|z| z * ph);
    }
    let rotation = scaled.dot(&wc.t().mapv(|z| z.conj()));
    debug_assert_eq!(rotation.nrows(), d);
    Coarsening::from_basis(DenseMatrix::Complex(rotation), ranges)
}
