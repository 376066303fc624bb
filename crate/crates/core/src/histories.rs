//! Branch states and the decoherence functional.
//!
//! A history of length `L` is a tuple `(x_0, ..., x_{L-1})` of macrostates,
//! one per grid time. It is encoded as the integer `sum_k x_k 3^k` with
//! `(-, 0, +) -> (0, 1, 2)`, so `x_0` is the least significant digit. Branch
//! states and DF rows/columns are stored in that order.

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{Coarsening, Macrostate, MACROSTATES};
use crate::rng::{self, Stream};
use crate::scalar::{Real, C};
use crate::spectral::{SpectralDecomposition, StateVector};

/// Longest supported history.
pub const MAX_HISTORY_LENGTH: usize = 6;

/// Default cap on stored branch amplitudes (`3^L * D`), about 1 GiB in `f64`.
pub const DEFAULT_AMPLITUDE_BUDGET: usize = 1 << 26;

/// `3^len`.
#[inline]
pub fn history_count(len: usize) -> usize {
    MACROSTATES.pow(len as u32)
}

#[derive(Clone, Debug, PartialEq)]
pub struct HistoryGrid<R> {
    times: Vec<R>,
}

impl<R: Real> HistoryGrid<R> {
    /// `t_k = k * step` for `k = 0..=num_steps`.
    pub fn constant(num_steps: usize, step: R) -> Result<Self> {
        let times = (0..=num_steps)
            .map(|k| R::from_usize(k).expect("step index fits") * step)
            .collect();
        Self::from_times(times)
    }

    /// Spacings drawn uniformly from `[lo, hi]`, starting at `t_0 = 0`.
    pub fn random_uniform(num_steps: usize, lo: R, hi: R, seed: u64) -> Result<Self> {
        if !(lo >= R::zero() && hi >= lo && hi.is_finite()) {
            return Err(Error::InvalidArgument(format!("random spacing bounds [{lo}, {hi}] invalid")));
        }
        let mut g = rng::generator(seed, Stream::TimeSpacing);
        let mut times = Vec::with_capacity(num_steps + 1);
        let mut t = R::zero();
        times.push(t);
        for _ in 0..num_steps {
            let u = R::lit(g.random::<f64>());
            t += lo + (hi - lo) * u;
            times.push(t);
        }
        Self::from_times(times)
    }

    pub fn from_times(times: Vec<R>) -> Result<Self> {
        if times.is_empty() || times.len() > MAX_HISTORY_LENGTH {
            return Err(Error::InvalidArgument(format!(
                "history length {} outside [1, {MAX_HISTORY_LENGTH}]",
                times.len()
            )));
        }
        if times.iter().any(|t| !t.is_finite()) || times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("grid times must be finite and strictly increasing".into()));
        }
        Ok(HistoryGrid { times })
    }

    pub fn times(&self) -> &[R] {
        &self.times
    }

    /// History length `L`.
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn num_steps(&self) -> usize {
        self.times.len() - 1
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct History {
    labels: Vec<Macrostate>,
}

impl History {
    pub fn new(labels: Vec<Macrostate>) -> Self {
        History { labels }
    }

    pub fn from_index(mut index: usize, len: usize) -> Self {
        let labels = (0..len)
            .map(|_| {
                let x = Macrostate::from_index(index % MACROSTATES);
                index /= MACROSTATES;
                x
            })
            .collect();
        History { labels }
    }

    pub fn index(&self) -> usize {
        self.labels
            .iter()
            .rev()
            .fold(0, |acc, x| acc * MACROSTATES + x.index())
    }

    pub fn labels(&self) -> &[Macrostate] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn last(&self) -> Option<Macrostate> {
        self.labels.last().copied()
    }

    /// Number of positions where the labels differ.
    pub fn hamming(&self, other: &History) -> usize {
        self.labels
            .iter()
            .zip(other.labels.iter())
            .filter(|(a, b)| a != b)
            .count()
    }
}

/// Oldest-first, comma separated: `0,+,0`.
impl fmt::Display for History {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, x) in self.labels.iter().enumerate() {
            if k > 0 {
                f.write_str(",")?;
            }
            write!(f, "{x}")?;
        }
        Ok(())
    }
}

impl FromStr for History {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let labels = s
            .split(',')
            .map(|tok| {
                let mut chars = tok.trim().chars();
                match (chars.next().and_then(Macrostate::from_symbol), chars.next()) {
                    (Some(x), None) => Ok(x),
                    _ => Err(Error::InvalidArgument(format!("bad history label {tok:?} in {s:?}"))),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(History { labels })
    }
}

/// All `3^L` conditional states `P_{x_n} U ... P_{x_1} U P_{x_0} |psi>`,
/// one column per history.
#[derive(Clone, Debug)]
pub struct BranchStates<R> {
    pub times: Vec<R>,
    pub states: Array2<C<R>>,
}

impl<R: Real> BranchStates<R> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn branch(&self, h: &History) -> StateVector<R> {
        StateVector(self.states.column(h.index()).to_owned())
    }
}

/// Builds the branch tree level by level. Each node is propagated once and
/// then split by the three projectors, so the cost is one batched evolution
/// per level rather than one per leaf.
pub fn compute_branch_states<R: Real>(
    sd: &SpectralDecomposition<R>,
    c: &Coarsening<R>,
    psi0: &StateVector<R>,
    grid: &HistoryGrid<R>,
    amplitude_budget: usize,
) -> Result<BranchStates<R>> {
    let d = sd.dimension();
    if psi0.len() != d || c.dimension() != d {
        return Err(Error::InvalidArgument(format!(
            "state length {} / coarsening dimension {} do not match D = {d}",
            psi0.len(),
            c.dimension()
        )));
    }
    if (psi0.norm() - R::one()).abs() > R::lit(1e-6) {
        return Err(Error::InvalidArgument(format!("initial state has norm {}", psi0.norm())));
    }
    let required = history_count(grid.len()).saturating_mul(d);
    if required > amplitude_budget {
        return Err(Error::BudgetExceeded {
            required,
            budget: amplitude_budget,
        });
    }

    let split = |parents: &Array2<C<R>>| -> Array2<C<R>> {
        let k = parents.ncols();
        let mut next = Array2::zeros((d, MACROSTATES * k));
        for x in Macrostate::ALL {
            let i = x.index();
            next.slice_mut(s![.., i * k..(i + 1) * k])
                .assign(&c.apply_batch(x, parents.view()));
        }
        next
    };

    let mut level = split(&psi0.0.clone().insert_axis(Axis(1)));
    for w in grid.times().windows(2) {
        let evolved = sd.evolve_batch(level.view(), w[1] - w[0]);
        level = split(&evolved);
    }
    Ok(BranchStates {
        times: grid.times().to_vec(),
        states: level,
    })
}

/// `D(x; y) = <psi(y)|psi(x)>` over all pairs of histories on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoherenceFunctional<R> {
    entries: Array2<C<R>>,
    times: Vec<R>,
}

impl<R: Real> DecoherenceFunctional<R> {
    /// Wraps a precomputed `3^L x 3^L` matrix.
    pub fn from_entries(entries: Array2<C<R>>, times: Vec<R>) -> Result<Self> {
        let n = history_count(times.len());
        if entries.dim() != (n, n) {
            return Err(Error::InvalidArgument(format!(
                "DF over {} times must be {n}x{n}, got {:?}",
                times.len(),
                entries.dim()
            )));
        }
        Ok(DecoherenceFunctional { entries, times })
    }

    pub fn entries(&self) -> &Array2<C<R>> {
        &self.entries
    }

    pub fn times(&self) -> &[R] {
        &self.times
    }

    /// History length `L`.
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn num_histories(&self) -> usize {
        self.entries.nrows()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> C<R> {
        self.entries[[x, y]]
    }

    /// Real diagonal `D(x; x)`.
    pub fn probabilities(&self) -> Vec<R> {
        self.entries.diag().iter().map(|z| z.re).collect()
    }

    pub fn trace(&self) -> R {
        self.entries.diag().iter().map(|z| z.re).sum()
    }

    pub fn hermiticity_defect(&self) -> R {
        let n = self.num_histories();
        let mut worst = R::zero();
        for i in 0..n {
            for j in 0..=i {
                worst = worst.max((self.entries[[i, j]] - self.entries[[j, i]].conj()).norm());
            }
        }
        worst
    }

    /// Label of the final time of history `h`.
    #[inline]
    pub fn final_label(&self, h: usize) -> usize {
        h / history_count(self.len() - 1)
    }
}

/// Gram matrix of the branch states. Histories ending in different
/// macrostates are orthogonal and left at exactly zero; each of the three
/// final-label blocks is one GEMM, mirrored to make the result exactly
/// Hermitian with a real diagonal.
pub fn compute_df<R: Real>(branches: &BranchStates<R>) -> DecoherenceFunctional<R> {
    let len = branches.len();
    let n = history_count(len);
    let block = history_count(len - 1);
    let mut entries = Array2::<C<R>>::zeros((n, n));
    for c in 0..MACROSTATES {
        let cols = c * block..(c + 1) * block;
        let b = branches.states.slice(s![.., cols.clone()]);
        // (B^T conj(B))[a, a'] = <psi(a')|psi(a)> = D(a; a')
        let gram = b.t().dot(&b.mapv(|z| z.conj()));
        let mut target = entries.slice_mut(s![cols.clone(), cols]);
        for a in 0..block {
            target[[a, a]] = C::new(gram[[a, a]].re, R::zero());
            for a2 in (a + 1)..block {
                let z = gram[[a, a2]];
                target[[a, a2]] = z;
                target[[a2, a]] = z.conj();
            }
        }
    }
    DecoherenceFunctional {
        entries,
        times: branches.times.clone(),
    }
}

fn normalize_subset(len: usize, subset: &[usize]) -> Result<Vec<usize>> {
    let mut t: Vec<usize> = subset.to_vec();
    t.sort_unstable();
    t.dedup();
    if t.is_empty() {
        return Err(Error::InvalidArgument("time subset is empty".into()));
    }
    if let Some(&bad) = t.iter().find(|&&k| k >= len) {
        return Err(Error::InvalidArgument(format!("time index {bad} outside grid of length {len}")));
    }
    Ok(t)
}

/// Maps every history on the full grid to its restriction to `subset`
/// (which must be sorted and unique).
pub(crate) fn restriction_map(len: usize, subset: &[usize]) -> Vec<usize> {
    (0..history_count(len))
        .map(|h| {
            subset
                .iter()
                .rev()
                .fold(0, |acc, &k| acc * MACROSTATES + (h / history_count(k)) % MACROSTATES)
        })
        .collect()
}

/// Bitmask with bit `k` set for every time index in `subset`.
pub fn subset_mask(subset: &[usize]) -> u32 {
    subset.iter().fold(0, |m, &k| m | (1 << k))
}

pub fn subset_from_mask(mask: u32) -> Vec<usize> {
    (0..32).filter(|k| mask & (1 << k) != 0).collect()
}

/// DF over the times in `t_subset`, obtained by summing bra and ket labels
/// independently over every other time.
pub fn marginalize<R: Real>(df: &DecoherenceFunctional<R>, t_subset: &[usize]) -> Result<DecoherenceFunctional<R>> {
    let subset = normalize_subset(df.len(), t_subset)?;
    if subset.len() == df.len() {
        return Ok(df.clone());
    }
    let map = restriction_map(df.len(), &subset);
    let m = history_count(subset.len());
    let mut out = Array2::<C<R>>::zeros((m, m));
    for (x, row) in df.entries.outer_iter().enumerate() {
        let zx = map[x];
        for (y, z) in row.iter().enumerate() {
            out[[zx, map[y]]] += *z;
        }
    }
    Ok(DecoherenceFunctional {
        entries: out,
        times: subset.iter().map(|&k| df.times[k]).collect(),
    })
}

/// DF for the first `l` grid times (containment property).
pub fn truncate<R: Real>(df: &DecoherenceFunctional<R>, l: usize) -> Result<DecoherenceFunctional<R>> {
    if l == 0 || l > df.len() {
        return Err(Error::InvalidArgument(format!("cannot truncate length {} DF to {l}", df.len())));
    }
    marginalize(df, &(0..l).collect::<Vec<_>>())
}
