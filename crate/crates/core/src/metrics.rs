//! Quantifiers of approximate decoherence and the derived analyses.

use std::cmp::Ordering;

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::histories::{history_count, restriction_map, subset_from_mask, DecoherenceFunctional, History};
use crate::model::{Coarsening, Macrostate, MACROSTATES};
use crate::scalar::{phase, Real, C};
use crate::spectral::{SpectralDecomposition, StateVector};

/// Branch weights at or below this fraction of the trace are treated as
/// empty. Roundoff leaves amplitudes of order `eps` on branches that vanish
/// exactly in exact arithmetic; their normalized overlaps are meaningless.
fn degenerate_floor<R: Real>(trace: R) -> R {
    let eps = R::epsilon();
    (eps * eps.sqrt() * trace.abs()).max(R::lit(1e-300)).max(R::min_positive_value())
}

/// Tolerance on the imaginary part of a marginal probability.
fn imaginary_tolerance<R: Real>() -> R {
    R::lit(1e-10).max(R::epsilon() * R::lit(1e3))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairEpsilon<R> {
    pub value: R,
    /// One of the two branches is (numerically) empty; `value` is 0.
    pub degenerate: bool,
}

#[inline]
fn pair_epsilon<R: Real>(df: &DecoherenceFunctional<R>, x: usize, y: usize, floor: R) -> PairEpsilon<R> {
    let dx = df.get(x, x).re;
    let dy = df.get(y, y).re;
    if dx <= floor || dy <= floor {
        return PairEpsilon {
            value: R::zero(),
            degenerate: true,
        };
    }
    PairEpsilon {
        value: df.get(x, y).norm() / (dx * dy).sqrt(),
        degenerate: false,
    }
}

/// Normalized off-diagonal element `|D(x;y)| / sqrt(D(x;x) D(y;y))`.
pub fn epsilon_pair<R: Real>(df: &DecoherenceFunctional<R>, x: &History, y: &History) -> Result<PairEpsilon<R>> {
    if x.len() != df.len() || y.len() != df.len() {
        return Err(Error::InvalidArgument(format!(
            "histories of length {}/{} on a DF of length {}",
            x.len(),
            y.len(),
            df.len()
        )));
    }
    if x == y {
        return Err(Error::InvalidArgument(format!("epsilon needs distinct histories, got {x} twice")));
    }
    if x.last() != y.last() {
        return Ok(PairEpsilon {
            value: R::zero(),
            degenerate: false,
        });
    }
    Ok(pair_epsilon(df, x.index(), y.index(), degenerate_floor(df.trace())))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpsilonReport<R> {
    pub epsilon_avg: R,
    /// `3^(2L-1) - 3^L` ordered pairs with equal final label.
    pub pair_count: u64,
    pub skipped_pairs: u64,
    /// `(x, y, epsilon)` for `x < y`, when requested.
    pub per_pair: Option<Vec<(usize, usize, R)>>,
}

/// Number of ordered pairs `x != y` with `x_n = y_n`.
pub fn nontrivial_pair_count(len: usize) -> u64 {
    let m = MACROSTATES as u64;
    m.pow(2 * len as u32 - 1) - m.pow(len as u32)
}

/// Iterates unordered pairs `x < y` sharing the final label.
fn for_each_nontrivial_pair<R: Real>(df: &DecoherenceFunctional<R>, mut f: impl FnMut(usize, usize)) {
    let block = history_count(df.len() - 1);
    for c in 0..MACROSTATES {
        let base = c * block;
        for a in 0..block {
            for b in (a + 1)..block {
                f(base + a, base + b);
            }
        }
    }
}

fn epsilon_average_impl<R: Real>(df: &DecoherenceFunctional<R>, keep_pairs: bool) -> Result<EpsilonReport<R>> {
    if df.len() < 2 {
        return Err(Error::InvalidArgument("epsilon average needs histories of length >= 2".into()));
    }
    let floor = degenerate_floor(df.trace());
    let mut sum = R::zero();
    let mut skipped = 0u64;
    let mut pairs = keep_pairs.then(Vec::new);
    for_each_nontrivial_pair(df, |x, y| {
        let e = pair_epsilon(df, x, y, floor);
        if e.degenerate {
            skipped += 2;
        }
        sum += e.value + e.value;
        if let Some(p) = pairs.as_mut() {
            p.push((x, y, e.value));
        }
    });
    let pair_count = nontrivial_pair_count(df.len());
    Ok(EpsilonReport {
        epsilon_avg: sum / R::from_u64(pair_count).expect("count fits"),
        pair_count,
        skipped_pairs: skipped,
        per_pair: pairs,
    })
}

/// Average of the normalized DF over all nontrivial ordered pairs.
pub fn epsilon_average<R: Real>(df: &DecoherenceFunctional<R>) -> Result<EpsilonReport<R>> {
    epsilon_average_impl(df, false)
}

/// As [`epsilon_average`], also returning every pair value.
pub fn epsilon_average_detailed<R: Real>(df: &DecoherenceFunctional<R>) -> Result<EpsilonReport<R>> {
    epsilon_average_impl(df, true)
}

/// Born and decohered distributions over the histories on a time subset.
#[derive(Clone, Debug, PartialEq)]
pub struct MarginalDistributions<R> {
    pub subset: Vec<usize>,
    /// Indexed by the restricted history encoding.
    pub p: Vec<R>,
    pub p_cl: Vec<R>,
}

/// `p(z) = sum D(x;y)` over all `x, y` restricting to `z`, and
/// `p_cl(z) = sum D(x;x)`. The subset must contain the final time.
pub fn marginal_probabilities<R: Real>(
    df: &DecoherenceFunctional<R>,
    t_subset: &[usize],
) -> Result<MarginalDistributions<R>> {
    let len = df.len();
    let mut subset = t_subset.to_vec();
    subset.sort_unstable();
    subset.dedup();
    if subset.last() != Some(&(len - 1)) || subset.iter().any(|&k| k >= len) {
        return Err(Error::InvalidArgument(format!(
            "time subset {t_subset:?} must lie in 0..{len} and contain the final time"
        )));
    }
    let map = restriction_map(len, &subset);
    let m = history_count(subset.len());
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); m];
    for (h, &z) in map.iter().enumerate() {
        groups[z].push(h);
    }
    let tol = imaginary_tolerance::<R>();
    let mut p = Vec::with_capacity(m);
    let mut p_cl = Vec::with_capacity(m);
    for members in &groups {
        let mut acc = C::new(R::zero(), R::zero());
        let mut diag = R::zero();
        for &x in members {
            diag += df.get(x, x).re;
            for &y in members {
                acc += df.get(x, y);
            }
        }
        if acc.im.abs() > tol {
            return Err(Error::ImaginaryResidue {
                residue: acc.im.as_f64(),
                mask: crate::histories::subset_mask(&subset),
            });
        }
        p.push(acc.re);
        p_cl.push(diag);
    }
    Ok(MarginalDistributions { subset, p, p_cl })
}

/// Half the L1 distance between two distributions.
pub fn trace_distance<R: Real>(p: &[R], p_cl: &[R]) -> R {
    assert_eq!(p.len(), p_cl.len(), "distributions over different sets");
    p.iter().zip(p_cl).map(|(a, b)| (*a - *b).abs()).sum::<R>() / R::lit(2.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceDistanceReport<R> {
    /// `(subset mask, Delta_T)` for every subset containing the final time,
    /// ascending by mask.
    pub per_subset: Vec<(u32, R)>,
    pub delta_max: R,
    pub argmax_subset: u32,
}

/// Worst-case trace distance over all time subsets that contain the final
/// time (`2^(L-1)` of them).
pub fn delta_max<R: Real>(df: &DecoherenceFunctional<R>) -> Result<TraceDistanceReport<R>> {
    let n = df.len() - 1;
    let final_bit = 1u32 << n;
    let per_subset = (0..(1u32 << n))
        .into_par_iter()
        .map(|lower| {
            let mask = lower | final_bit;
            let m = marginal_probabilities(df, &subset_from_mask(mask))?;
            Ok((mask, trace_distance(&m.p, &m.p_cl)))
        })
        .collect::<Result<Vec<_>>>()?;
    let (argmax_subset, delta_max) = per_subset
        .iter()
        .copied()
        .fold((final_bit, R::neg_infinity()), |best, cur| if cur.1 > best.1 { cur } else { best });
    Ok(TraceDistanceReport {
        per_subset,
        delta_max,
        argmax_subset,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceBin<R> {
    pub distance: usize,
    pub eps_mean: R,
    /// Ordered pairs at this distance with equal final label.
    pub pair_count: u64,
    pub skipped_pairs: u64,
}

/// Mean normalized DF as a function of the Hamming distance between
/// histories, over pairs with equal final label (`d = 1..=L-1`).
pub fn epsilon_by_distance<R: Real>(df: &DecoherenceFunctional<R>) -> Result<Vec<DistanceBin<R>>> {
    let len = df.len();
    if len < 2 {
        return Err(Error::InvalidArgument("distance bins need histories of length >= 2".into()));
    }
    let floor = degenerate_floor(df.trace());
    let mut sums = vec![R::zero(); len];
    let mut counts = vec![0u64; len];
    let mut skipped = vec![0u64; len];
    let digits: Vec<History> = (0..df.num_histories()).map(|h| History::from_index(h, len)).collect();
    for_each_nontrivial_pair(df, |x, y| {
        let d = digits[x].hamming(&digits[y]);
        let e = pair_epsilon(df, x, y, floor);
        sums[d] += e.value + e.value;
        counts[d] += 2;
        if e.degenerate {
            skipped[d] += 2;
        }
    });
    Ok((1..len)
        .map(|d| DistanceBin {
            distance: d,
            eps_mean: if counts[d] > 0 {
                sums[d] / R::from_u64(counts[d]).expect("count fits")
            } else {
                R::zero()
            },
            pair_count: counts[d],
            skipped_pairs: skipped[d],
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MacroSample<R> {
    pub t: R,
    /// `(p_-, p_0, p_+)`.
    pub weights: [R; MACROSTATES],
}

/// Macrostate weights `<psi(t)|P_x|psi(t)>` on `t = 0, dt, 2dt, ... <= t_max`.
pub fn macro_dynamics<R: Real>(
    sd: &SpectralDecomposition<R>,
    c: &Coarsening<R>,
    psi0: &StateVector<R>,
    t_max: R,
    dt: R,
) -> Result<Vec<MacroSample<R>>> {
    if !(dt > R::zero()) || !dt.is_finite() || !(t_max >= R::zero()) || !t_max.is_finite() {
        return Err(Error::InvalidArgument(format!("bad time grid: t_max = {t_max}, dt = {dt}")));
    }
    let steps = (t_max / dt + R::lit(1e-9)).floor().to_usize().expect("step count fits");
    let times: Vec<R> = (0..=steps)
        .map(|j| R::from_usize(j).expect("index fits") * dt)
        .collect();
    let coeffs = sd.to_eigenbasis(psi0.0.view().insert_axis(Axis(1)));
    const CHUNK: usize = 64;
    let mut out = Vec::with_capacity(times.len());
    for chunk in times.chunks(CHUNK) {
        let mut block = Array2::<C<R>>::zeros((sd.dimension(), chunk.len()));
        for (mut col, &t) in block.columns_mut().into_iter().zip(chunk) {
            for ((slot, c0), &e) in col.iter_mut().zip(coeffs.iter()).zip(sd.eigenvalues.iter()) {
                *slot = *c0 * phase(-e * t);
            }
        }
        let states = sd.from_eigenbasis(block.view());
        for (col, &t) in states.columns().into_iter().zip(chunk) {
            out.push(MacroSample {
                t,
                weights: Macrostate::ALL.map(|x| c.weight(x, col)),
            });
        }
    }
    Ok(out)
}

/// DF diagonal as `(history, probability)` in encoding order.
pub fn branch_histogram<R: Real>(df: &DecoherenceFunctional<R>) -> Vec<(History, R)> {
    df.probabilities()
        .into_iter()
        .enumerate()
        .map(|(h, p)| (History::from_index(h, df.len()), p))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arrow {
    Forward,
    NoArrow,
    Backward,
}

/// Net entropic arrow of a history: each step into a larger subspace counts
/// +1, into a smaller one -1.
pub fn classify_arrow(h: &History, volumes: [usize; MACROSTATES]) -> Arrow {
    let net: i64 = h
        .labels()
        .windows(2)
        .map(|w| match volumes[w[1].index()].cmp(&volumes[w[0].index()]) {
            Ordering::Greater => 1,
            Ordering::Less => -1,
            Ordering::Equal => 0,
        })
        .sum();
    match net.cmp(&0) {
        Ordering::Greater => Arrow::Forward,
        Ordering::Less => Arrow::Backward,
        Ordering::Equal => Arrow::NoArrow,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrowReport<R> {
    pub p_forward: R,
    pub p_noarrow: R,
    pub p_backward: R,
}

/// Probability mass of histories with a net forward, no, or backward arrow.
pub fn arrow_classification<R: Real>(df: &DecoherenceFunctional<R>, c: &Coarsening<R>) -> Result<ArrowReport<R>> {
    if df.len() < 2 {
        return Err(Error::InvalidArgument("arrow classification needs histories of length >= 2".into()));
    }
    let volumes = c.volumes();
    let mut report = ArrowReport {
        p_forward: R::zero(),
        p_noarrow: R::zero(),
        p_backward: R::zero(),
    };
    for (h, p) in branch_histogram(df) {
        match classify_arrow(&h, volumes) {
            Arrow::Forward => report.p_forward += p,
            Arrow::NoArrow => report.p_noarrow += p,
            Arrow::Backward => report.p_backward += p,
        }
    }
    Ok(report)
}
