//! Independent reference computations and shared property checks.
#![allow(dead_code)]

use decoherence::experiments::{fit_power_law, run_sweep, RealizationResult, SweepOptions, SweepSpec};
use decoherence::histories::{
    compute_branch_states, compute_df, history_count, marginalize, truncate, BranchStates, DecoherenceFunctional,
    History, HistoryGrid, DEFAULT_AMPLITUDE_BUDGET,
};
use decoherence::metrics::{delta_max, epsilon_average};
use decoherence::model::{build_coarsening, build_hamiltonian, Coarsening, Macrostate, ModelConfig};
use decoherence::spectral::{eigendecompose, equilibrium_weights, sample_haar_equilibrium, StateVector};
use decoherence::{BlockHamiltonian, SpectralDecomposition};
use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;

pub type Check = Result<(), String>;

/// `exp(-i H t)` by Taylor series with scaling and squaring.
pub fn expm_minus_i(h: &Array2<C64>, t: f64) -> Array2<C64> {
    let n = h.nrows();
    let a = h.mapv(|z| z * C64::new(0.0, -t));
    let norm1 = (0..n)
        .map(|j| a.column(j).iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max);
    let mut s = 0;
    while norm1 / 2f64.powi(s) > 0.5 {
        s += 1;
    }
    let a = a.mapv(|z| z / 2f64.powi(s));
    let mut result = Array2::<C64>::eye(n);
    let mut term = Array2::<C64>::eye(n);
    for k in 1..40 {
        term = term.dot(&a).mapv(|z| z / k as f64);
        result += &term;
        if term.iter().map(|z| z.norm()).fold(0.0, f64::max) < 1e-20 {
            break;
        }
    }
    for _ in 0..s {
        result = result.dot(&result);
    }
    result
}

/// Dense reference DF: every branch `P U P ... U P psi` is built from
/// scratch with dense operators.
pub fn oracle_df(h: &Array2<C64>, projectors: &[Array2<C64>; 3], psi: &Array1<C64>, times: &[f64]) -> Array2<C64> {
    let len = times.len();
    let props: Vec<Array2<C64>> = times.windows(2).map(|w| expm_minus_i(h, w[1] - w[0])).collect();
    let n = history_count(len);
    let branches: Vec<Array1<C64>> = (0..n)
        .map(|idx| {
            let hist = History::from_index(idx, len);
            let labels = hist.labels();
            let mut v = projectors[labels[0].index()].dot(psi);
            for k in 1..len {
                v = projectors[labels[k].index()].dot(&props[k - 1].dot(&v));
            }
            v
        })
        .collect();
    Array2::from_shape_fn((n, n), |(x, y)| {
        branches[y].iter().zip(branches[x].iter()).map(|(b, k)| b.conj() * k).sum()
    })
}

pub fn projectors(c: &Coarsening<f64>) -> [Array2<C64>; 3] {
    Macrostate::ALL.map(|x| c.projector_matrix(x))
}

pub struct Setup {
    pub h: BlockHamiltonian,
    pub sd: SpectralDecomposition,
    pub c: Coarsening<f64>,
    pub psi: StateVector<f64>,
}

pub fn setup(cfg: &ModelConfig<f64>, state_seed: u64) -> Setup {
    let h = build_hamiltonian(cfg).unwrap();
    let sd = eigendecompose(&h).unwrap();
    let c = build_coarsening(cfg, None).unwrap();
    let psi = sample_haar_equilibrium(&c, equilibrium_weights(&c), state_seed).unwrap();
    Setup { h, sd, c, psi }
}

impl Setup {
    pub fn branches(&self, grid: &HistoryGrid<f64>) -> BranchStates<f64> {
        compute_branch_states(&self.sd, &self.c, &self.psi, grid, DEFAULT_AMPLITUDE_BUDGET).unwrap()
    }

    pub fn df(&self, grid: &HistoryGrid<f64>) -> DecoherenceFunctional<f64> {
        compute_df(&self.branches(grid))
    }

    pub fn tau(&self) -> f64 {
        self.h.coupling.tau
    }
}

fn max_entry_diff(a: &Array2<C64>, b: &Array2<C64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// Hermiticity, unit trace and Cauchy-Schwarz on every pair.
pub fn check_df_invariants(df: &DecoherenceFunctional<f64>) -> Check {
    let herm = df.hermiticity_defect();
    if herm > 1e-12 {
        return Err(format!("hermiticity defect {herm:e}"));
    }
    let tr = df.trace();
    if (tr - 1.0).abs() > 1e-10 {
        return Err(format!("trace {tr}"));
    }
    let n = df.num_histories();
    for x in 0..n {
        let dx = df.get(x, x).re;
        if dx < -1e-15 {
            return Err(format!("negative diagonal {dx:e} at {x}"));
        }
        for y in 0..n {
            let dy = df.get(y, y).re;
            let lhs = df.get(x, y).norm_sqr();
            if lhs > dx * dy * (1.0 + 1e-10) + 1e-30 {
                return Err(format!("Cauchy-Schwarz fails at ({x}, {y}): {lhs:e} > {:e}", dx * dy));
            }
        }
    }
    Ok(())
}

/// Sum of all branches against direct evolution to the last grid time.
pub fn branch_sum_residual(s: &Setup, grid: &HistoryGrid<f64>) -> f64 {
    let b = s.branches(grid);
    let sum: Array1<C64> = b.states.sum_axis(ndarray::Axis(1));
    let t = grid.times();
    let direct = s.sd.evolve(&s.psi, t[t.len() - 1] - t[0]);
    sum.iter().zip(direct.0.iter()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
}

/// Marginalized DFs against DFs computed directly on the reduced grids:
/// every trailing truncation, and every subset containing `t_0`.
pub fn containment_defect(s: &Setup, grid: &HistoryGrid<f64>) -> f64 {
    let full = s.df(grid);
    let len = grid.len();
    let mut worst: f64 = 0.0;
    for l in 1..len {
        let direct = s.df(&HistoryGrid::from_times(grid.times()[..l].to_vec()).unwrap());
        worst = worst.max(max_entry_diff(truncate(&full, l).unwrap().entries(), direct.entries()));
    }
    for mask in 0u32..(1 << (len - 1)) {
        let subset: Vec<usize> = std::iter::once(0)
            .chain((1..len).filter(|k| mask & (1 << (k - 1)) != 0))
            .collect();
        let times: Vec<f64> = subset.iter().map(|&k| grid.times()[k]).collect();
        let direct = s.df(&HistoryGrid::from_times(times).unwrap());
        worst = worst.max(max_entry_diff(marginalize(&full, &subset).unwrap().entries(), direct.entries()));
    }
    worst
}

/// Engine DF against the dense operator-chain oracle.
pub fn oracle_defect(cfg: &ModelConfig<f64>, state_seed: u64, num_steps: usize) -> f64 {
    let s = setup(cfg, state_seed);
    let grid = HistoryGrid::constant(num_steps, s.tau()).unwrap();
    let engine = s.df(&grid);
    let reference = oracle_df(&s.h.matrix.to_complex(), &projectors(&s.c), &s.psi.0, grid.times());
    max_entry_diff(engine.entries(), &reference)
}

/// A coarsening built from the eigenbasis of `H` commutes with it.
pub fn commuting_metrics(v_minus: usize, seed: u64) -> (f64, f64) {
    let cfg = ModelConfig::<f64>::new(v_minus, seed);
    let h = build_hamiltonian(&cfg).unwrap();
    let sd = eigendecompose(&h).unwrap();
    let c = Coarsening::from_basis(sd.eigenvectors.clone(), cfg.block_layout()).unwrap();
    let psi = sample_haar_equilibrium(&c, equilibrium_weights(&c), seed + 1).unwrap();
    let grid = HistoryGrid::constant(4, h.coupling.tau).unwrap();
    let df = compute_df(&compute_branch_states(&sd, &c, &psi, &grid, DEFAULT_AMPLITUDE_BUDGET).unwrap());
    (epsilon_average(&df).unwrap().epsilon_avg, delta_max(&df).unwrap().delta_max)
}

pub fn synthetic_fit_error() -> f64 {
    let samples: Vec<(usize, f64)> = [5usize, 50, 500, 5000, 50000]
        .iter()
        .flat_map(|&d| [(d, (d as f64).powf(-0.5)), (d, (d as f64).powf(-0.5))])
        .collect();
    (fit_power_law(&samples).unwrap().alpha - 0.5).abs()
}

fn strip_wall(v: Vec<RealizationResult>) -> Vec<RealizationResult> {
    v.into_iter().map(|r| RealizationResult { wall_time_s: 0.0, ..r }).collect()
}

/// Same records from repeated runs and from different worker counts.
pub fn check_sweep_determinism() -> Check {
    let spec = SweepSpec {
        d_grid: vec![5, 10, 20],
        num_hamiltonian_seeds: 2,
        num_state_seeds: 2,
        num_steps: 3,
        base_seed: 99,
        ..SweepSpec::default()
    };
    let run = |workers| {
        strip_wall(run_sweep(&spec, &SweepOptions { workers, output_dir: None }).map_err(|e| e.to_string())?)
            .into_iter()
            .map(Ok)
            .collect::<Result<Vec<_>, String>>()
    };
    let a = run(1)?;
    let b = run(1)?;
    let c = run(3)?;
    if a.len() != 12 {
        return Err(format!("{} records, expected 12", a.len()));
    }
    if a != b {
        return Err("repeated single-worker runs differ".into());
    }
    if a != c {
        return Err("1-worker and 3-worker runs differ".into());
    }
    Ok(())
}
