//! Seeded sweeps over dimension and realizations, and power-law fits.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Mutex;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::histories::{
    compute_branch_states, compute_df, truncate, DecoherenceFunctional, HistoryGrid, DEFAULT_AMPLITUDE_BUDGET,
    MAX_HISTORY_LENGTH,
};
use crate::metrics::{
    arrow_classification, delta_max, epsilon_average, epsilon_by_distance, macro_dynamics, ArrowReport,
    DistanceBin, MacroSample,
};
use crate::model::{
    build_coarsening, build_hamiltonian, Coarsening, CouplingRegime, DiagonalSpacing, Ensemble, ModelConfig,
    Perturbation, PerturbationGenerator, MACROSTATES,
};
use crate::rng::derive_seed;
use crate::spectral::{
    eigendecompose, equilibrium_weights, sample_haar_equilibrium, select_eigenstate, SpectralDecomposition,
    StateVector,
};

pub const RECORDS_FILE: &str = "records.jsonl";
pub const SPEC_FILE: &str = "sweep.json";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitFamily {
    #[default]
    HaarEquilibrium,
    HaarNonequilibrium,
    Eigenstate,
}

impl fmt::Display for InitFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InitFamily::HaarEquilibrium => "haar_equilibrium",
            InitFamily::HaarNonequilibrium => "haar_nonequilibrium",
            InitFamily::Eigenstate => "eigenstate",
        })
    }
}

/// Spacing of the history grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StepModeRepr", into = "StepModeRepr")]
pub enum StepMode {
    /// Every step is one relaxation time `tau`.
    Tau,
    /// Every step is this absolute time.
    Fixed(f64),
    /// Steps drawn uniformly from `[lo, hi]`, in units of `tau`.
    RandomUniform { lo: f64, hi: f64 },
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum StepName {
    Tau,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RandomStep {
    random_uniform: [f64; 2],
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum StepModeRepr {
    Named(StepName),
    Fixed(f64),
    Random(RandomStep),
}

impl TryFrom<StepModeRepr> for StepMode {
    type Error = String;

    fn try_from(r: StepModeRepr) -> std::result::Result<Self, String> {
        match r {
            StepModeRepr::Named(StepName::Tau) => Ok(StepMode::Tau),
            StepModeRepr::Fixed(dt) if dt > 0.0 && dt.is_finite() => Ok(StepMode::Fixed(dt)),
            StepModeRepr::Fixed(dt) => Err(format!("fixed step {dt} must be positive and finite")),
            StepModeRepr::Random(RandomStep { random_uniform: [lo, hi] }) => {
                if lo >= 0.0 && hi >= lo && hi > 0.0 && hi.is_finite() {
                    Ok(StepMode::RandomUniform { lo, hi })
                } else {
                    Err(format!("random_uniform bounds [{lo}, {hi}] invalid"))
                }
            }
        }
    }
}

impl From<StepMode> for StepModeRepr {
    fn from(m: StepMode) -> Self {
        match m {
            StepMode::Tau => StepModeRepr::Named(StepName::Tau),
            StepMode::Fixed(dt) => StepModeRepr::Fixed(dt),
            StepMode::RandomUniform { lo, hi } => StepModeRepr::Random(RandomStep { random_uniform: [lo, hi] }),
        }
    }
}

impl StepMode {
    pub fn grid(&self, num_steps: usize, tau: f64, seed: u64) -> Result<HistoryGrid<f64>> {
        match *self {
            StepMode::Tau => HistoryGrid::constant(num_steps, tau),
            StepMode::Fixed(dt) => HistoryGrid::constant(num_steps, dt),
            StepMode::RandomUniform { lo, hi } => HistoryGrid::random_uniform(num_steps, lo * tau, hi * tau, seed),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationSpec {
    pub generator: PerturbationGenerator,
    pub delta: f64,
    #[serde(default)]
    pub seed: u64,
}

impl From<PerturbationSpec> for Perturbation<f64> {
    fn from(p: PerturbationSpec) -> Self {
        Perturbation {
            generator: p.generator,
            delta: p.delta,
            seed: p.seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub d_grid: Vec<usize>,
    pub num_hamiltonian_seeds: usize,
    pub num_state_seeds: usize,
    pub regime: CouplingRegime,
    pub ensemble: Ensemble,
    pub spacing: DiagonalSpacing,
    pub delta_e: f64,
    pub smallness_target: f64,
    pub init_family: InitFamily,
    /// Macrostate weights, only for `HaarNonequilibrium`.
    pub weights: Option<[f64; MACROSTATES]>,
    /// Steps after `t_0`; histories have `num_steps + 1` times.
    pub num_steps: usize,
    pub step_mode: StepMode,
    pub base_seed: u64,
    pub perturbation: Option<PerturbationSpec>,
    pub amplitude_budget: usize,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            d_grid: vec![5, 50, 500, 5000],
            num_hamiltonian_seeds: 3,
            num_state_seeds: 3,
            regime: CouplingRegime::Weak,
            ensemble: Ensemble::Goe,
            spacing: DiagonalSpacing::Equal,
            delta_e: 1.0,
            smallness_target: 0.01,
            init_family: InitFamily::HaarEquilibrium,
            weights: None,
            num_steps: 4,
            step_mode: StepMode::Tau,
            base_seed: 0,
            perturbation: None,
            amplitude_budget: DEFAULT_AMPLITUDE_BUDGET,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.d_grid.is_empty() {
            return Err(Error::config("model.d_grid", "empty"));
        }
        if let Some(&d) = self.d_grid.iter().find(|&&d| d == 0 || d % 5 != 0) {
            return Err(Error::config("model.d_grid", format!("{d} is not a positive multiple of 5")));
        }
        if self.d_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("model.d_grid", "must be strictly ascending"));
        }
        if self.num_hamiltonian_seeds == 0 || self.num_state_seeds == 0 {
            return Err(Error::config("sweep", "seed counts must be at least 1"));
        }
        if self.num_steps == 0 || self.num_steps >= MAX_HISTORY_LENGTH {
            return Err(Error::config(
                "grid.num_steps",
                format!("{} outside 1..={}", self.num_steps, MAX_HISTORY_LENGTH - 1),
            ));
        }
        match (self.init_family, self.weights) {
            (InitFamily::HaarNonequilibrium, None) => {
                return Err(Error::config("init.weights", "required for haar_nonequilibrium"))
            }
            (InitFamily::HaarNonequilibrium, Some(_)) | (_, None) => {}
            (family, Some(_)) => {
                return Err(Error::config("init.weights", format!("not used by {family}")));
            }
        }
        if self.amplitude_budget == 0 {
            return Err(Error::config("grid.amplitude_budget", "must be positive"));
        }
        self.model_config(self.d_grid[0], 0)?.validate()
    }

    pub fn max_len(&self) -> usize {
        self.num_steps + 1
    }

    pub fn hamiltonian_seed(&self, i: usize) -> u64 {
        derive_seed(self.base_seed, &[0, i as u64])
    }

    pub fn state_seed(&self, i: usize, j: usize) -> u64 {
        derive_seed(self.base_seed, &[1, i as u64, j as u64])
    }

    pub fn model_config(&self, d: usize, i: usize) -> Result<ModelConfig<f64>> {
        let mut cfg = ModelConfig::with_dimension(d, self.hamiltonian_seed(i))?;
        cfg.delta_e = self.delta_e;
        cfg.regime = self.regime;
        cfg.ensemble = self.ensemble;
        cfg.spacing = self.spacing;
        cfg.smallness_target = self.smallness_target;
        Ok(cfg)
    }

    fn keys(&self) -> Vec<RealizationKey> {
        let mut keys = Vec::new();
        for &d in &self.d_grid {
            for i in 0..self.num_hamiltonian_seeds {
                for j in 0..self.num_state_seeds {
                    keys.push(RealizationKey { d, h_index: i, s_index: j });
                }
            }
        }
        keys
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RealizationKey {
    pub d: usize,
    pub h_index: usize,
    pub s_index: usize,
}

/// Metrics of one realization at one history length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LengthRecord {
    pub l: usize,
    pub epsilon_avg: f64,
    pub pair_count: u64,
    pub skipped_pairs: u64,
    pub delta_max: f64,
    pub argmax_subset: u32,
    pub arrow: ArrowReport<f64>,
    /// Branch probabilities in history-encoding order.
    pub histogram: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealizationResult {
    pub d: usize,
    pub v_minus: usize,
    pub regime: CouplingRegime,
    pub init_family: InitFamily,
    pub h_index: usize,
    pub s_index: usize,
    pub hamiltonian_seed: u64,
    pub state_seed: u64,
    pub eigenstate_index: Option<usize>,
    /// `l = 2..=L_max`, all from one DF by trailing-time marginalization.
    pub per_l: Vec<LengthRecord>,
    /// Hamming-distance bins at `L_max`.
    pub distance: Vec<DistanceBin<f64>>,
    pub wall_time_s: f64,
    pub error: Option<String>,
}

impl RealizationResult {
    pub fn key(&self) -> RealizationKey {
        RealizationKey {
            d: self.d,
            h_index: self.h_index,
            s_index: self.s_index,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }

    pub fn at_length(&self, l: usize) -> Option<&LengthRecord> {
        self.per_l.iter().find(|r| r.l == l)
    }

    fn failed(spec: &SweepSpec, key: RealizationKey, err: &Error, wall_time_s: f64) -> Self {
        RealizationResult {
            d: key.d,
            v_minus: key.d / 5,
            regime: spec.regime,
            init_family: spec.init_family,
            h_index: key.h_index,
            s_index: key.s_index,
            hamiltonian_seed: spec.hamiltonian_seed(key.h_index),
            state_seed: spec.state_seed(key.h_index, key.s_index),
            eigenstate_index: None,
            per_l: Vec::new(),
            distance: Vec::new(),
            wall_time_s,
            error: Some(err.to_string()),
        }
    }
}

/// Everything that depends only on `(d, hamiltonian seed)`.
pub struct PreparedModel {
    pub config: ModelConfig<f64>,
    pub tau: f64,
    pub spectral: SpectralDecomposition<f64>,
    pub coarsening: Coarsening<f64>,
}

pub fn prepare_model(spec: &SweepSpec, d: usize, i: usize) -> Result<PreparedModel> {
    let config = spec.model_config(d, i)?;
    let h = build_hamiltonian(&config)?;
    if h.coupling.weak_interaction_warning {
        log::warn!("d = {d}: interaction strength below the random-matrix regime");
    }
    let spectral = eigendecompose(&h)?;
    let perturbation = spec.perturbation.map(Perturbation::from);
    let coarsening = build_coarsening(&config, perturbation.as_ref())?;
    Ok(PreparedModel {
        tau: h.coupling.tau,
        config,
        spectral,
        coarsening,
    })
}

/// Initial state of realization `(i, j)`, with the eigenstate index if any.
pub fn initial_state(
    spec: &SweepSpec,
    model: &PreparedModel,
    i: usize,
    j: usize,
) -> Result<(StateVector<f64>, Option<usize>)> {
    let seed = spec.state_seed(i, j);
    match spec.init_family {
        InitFamily::HaarEquilibrium => Ok((
            sample_haar_equilibrium(&model.coarsening, equilibrium_weights(&model.coarsening), seed)?,
            None,
        )),
        InitFamily::HaarNonequilibrium => {
            let w = spec.weights.ok_or_else(|| Error::config("init.weights", "missing"))?;
            Ok((sample_haar_equilibrium(&model.coarsening, w, seed)?, None))
        }
        InitFamily::Eigenstate => {
            let e = select_eigenstate(&model.spectral, seed);
            Ok((e.state, Some(e.index)))
        }
    }
}

pub struct RealizationDf {
    pub df: DecoherenceFunctional<f64>,
    pub grid: HistoryGrid<f64>,
    pub eigenstate_index: Option<usize>,
}

/// The `L_max` decoherence functional of realization `(i, j)`.
pub fn realization_df(spec: &SweepSpec, model: &PreparedModel, i: usize, j: usize) -> Result<RealizationDf> {
    let (psi, eigenstate_index) = initial_state(spec, model, i, j)?;
    let grid_seed = derive_seed(spec.state_seed(i, j), &[2]);
    let grid = spec.step_mode.grid(spec.num_steps, model.tau, grid_seed)?;
    let branches = compute_branch_states(&model.spectral, &model.coarsening, &psi, &grid, spec.amplitude_budget)?;
    Ok(RealizationDf {
        df: compute_df(&branches),
        grid,
        eigenstate_index,
    })
}

/// Per-length metrics and distance bins of one realization's DF.
pub fn summarize_realization(
    spec: &SweepSpec,
    model: &PreparedModel,
    key: RealizationKey,
    rdf: &RealizationDf,
) -> Result<RealizationResult> {
    let l_max = rdf.df.len();
    let mut per_l = Vec::with_capacity(l_max - 1);
    for l in 2..=l_max {
        let short;
        let df = if l == l_max {
            &rdf.df
        } else {
            short = truncate(&rdf.df, l)?;
            &short
        };
        let eps = epsilon_average(df)?;
        let dm = delta_max(df)?;
        per_l.push(LengthRecord {
            l,
            epsilon_avg: eps.epsilon_avg,
            pair_count: eps.pair_count,
            skipped_pairs: eps.skipped_pairs,
            delta_max: dm.delta_max,
            argmax_subset: dm.argmax_subset,
            arrow: arrow_classification(df, &model.coarsening)?,
            histogram: df.probabilities(),
        });
    }
    Ok(RealizationResult {
        d: key.d,
        v_minus: model.config.v_minus,
        regime: spec.regime,
        init_family: spec.init_family,
        h_index: key.h_index,
        s_index: key.s_index,
        hamiltonian_seed: spec.hamiltonian_seed(key.h_index),
        state_seed: spec.state_seed(key.h_index, key.s_index),
        eigenstate_index: rdf.eigenstate_index,
        per_l,
        distance: epsilon_by_distance(&rdf.df)?,
        wall_time_s: 0.0,
        error: None,
    })
}

/// One realization from scratch. Deterministic in `(spec, d, i, j)`.
pub fn run_realization(spec: &SweepSpec, d: usize, i: usize, j: usize) -> Result<RealizationResult> {
    spec.validate()?;
    let start = Instant::now();
    let model = prepare_model(spec, d, i)?;
    let key = RealizationKey { d, h_index: i, s_index: j };
    let mut r = summarize_realization(spec, &model, key, &realization_df(spec, &model, i, j)?)?;
    r.wall_time_s = start.elapsed().as_secs_f64();
    Ok(r)
}

#[derive(Clone, Debug, Default)]
pub struct SweepOptions {
    /// Worker threads; 0 picks the rayon default.
    pub workers: usize,
    /// Directory for incremental records; enables resume.
    pub output_dir: Option<PathBuf>,
}

struct RecordLog {
    path: PathBuf,
    file: Mutex<File>,
}

impl RecordLog {
    fn append(&self, r: &RealizationResult) -> Result<()> {
        let mut line = serde_json::to_string(r).map_err(|source| Error::Json {
            context: "serializing a realization record".into(),
            source,
        })?;
        line.push('\n');
        let mut f = self.file.lock().unwrap_or_else(|p| p.into_inner());
        f.write_all(line.as_bytes())
            .and_then(|_| f.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}

fn check_spec_file(dir: &Path, spec: &SweepSpec) -> Result<()> {
    let path = dir.join(SPEC_FILE);
    let json = |source| Error::Json {
        context: path.display().to_string(),
        source,
    };
    if path.exists() {
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let existing: SweepSpec = serde_json::from_str(&text).map_err(json)?;
        if &existing != spec {
            return Err(Error::InvalidArgument(format!(
                "{} holds records of a different sweep",
                dir.display()
            )));
        }
        return Ok(());
    }
    let text = serde_json::to_string_pretty(spec).map_err(json)?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

/// Loads previous records; the last record per key wins. Unparseable lines
/// (an interrupted write) are dropped from the file.
fn load_records(path: &Path) -> Result<HashMap<RealizationKey, RealizationResult>> {
    let mut out = HashMap::new();
    if !path.exists() {
        return Ok(out);
    }
    let reader = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let mut kept = Vec::new();
    let mut dropped = 0usize;
    for line in reader.lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<RealizationResult>(&line) {
            Ok(r) => {
                out.insert(r.key(), r);
                kept.push(line);
            }
            Err(_) => dropped += 1,
        }
    }
    if dropped > 0 {
        log::warn!("{}: dropping {dropped} unreadable record(s)", path.display());
        let tmp = path.with_extension("jsonl.tmp");
        let mut text = kept.join("\n");
        if !text.is_empty() {
            text.push('\n');
        }
        fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    }
    Ok(out)
}

/// Runs every `(d, i, j)` realization. Realizations sharing a Hamiltonian
/// share one eigensolve. Failures are returned as records with `error` set.
/// Output is sorted by `(d, i, j)`.
pub fn run_sweep(spec: &SweepSpec, opts: &SweepOptions) -> Result<Vec<RealizationResult>> {
    spec.validate()?;
    let mut done = HashMap::new();
    let mut log_file = None;
    if let Some(dir) = &opts.output_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        check_spec_file(dir, spec)?;
        let path = dir.join(RECORDS_FILE);
        done = load_records(&path)?;
        done.retain(|_, r| r.is_ok());
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        log_file = Some(RecordLog {
            path,
            file: Mutex::new(file),
        });
    }

    let mut groups: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for key in spec.keys() {
        if !done.contains_key(&key) {
            groups.entry((key.d, key.h_index)).or_default().push(key.s_index);
        }
    }
    let groups: Vec<_> = groups.into_iter().collect();
    log::info!(
        "sweep: {} realizations done, {} pending",
        done.len(),
        groups.iter().map(|g| g.1.len()).sum::<usize>()
    );

    let run_group = |&((d, i), ref js): &((usize, usize), Vec<usize>)| -> Result<Vec<RealizationResult>> {
        let start = Instant::now();
        let model = prepare_model(spec, d, i);
        let shared = start.elapsed().as_secs_f64() / js.len() as f64;
        let mut out = Vec::with_capacity(js.len());
        for &j in js {
            let key = RealizationKey { d, h_index: i, s_index: j };
            let t = Instant::now();
            let r = model
                .as_ref()
                .map_err(|e| Error::InvalidArgument(e.to_string()))
                .and_then(|m| summarize_realization(spec, m, key, &realization_df(spec, m, i, j)?));
            let wall = shared + t.elapsed().as_secs_f64();
            let r = match r {
                Ok(mut r) => {
                    r.wall_time_s = wall;
                    r
                }
                Err(e) => {
                    let e = match &model {
                        Err(root) => root.to_string(),
                        Ok(_) => e.to_string(),
                    };
                    log::error!("d = {d}, h = {i}, s = {j}: {e}");
                    RealizationResult::failed(spec, key, &Error::InvalidArgument(e), wall)
                }
            };
            log::info!("d = {d}, h = {i}, s = {j}: {:.2} s", r.wall_time_s);
            if let Some(log) = &log_file {
                log.append(&r)?;
            }
            out.push(r);
        }
        Ok(out)
    };

    let mut builder = rayon::ThreadPoolBuilder::new();
    if opts.workers > 0 {
        builder = builder.num_threads(opts.workers);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let fresh = pool.install(|| groups.par_iter().map(run_group).collect::<Result<Vec<_>>>())?;

    let mut all: Vec<RealizationResult> = done.into_values().chain(fresh.into_iter().flatten()).collect();
    all.sort_by_key(RealizationResult::key);
    Ok(all)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingMetric {
    EpsilonAvg,
    DeltaMax,
}

impl fmt::Display for ScalingMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScalingMetric::EpsilonAvg => "epsilon",
            ScalingMetric::DeltaMax => "delta",
        })
    }
}

impl FromStr for ScalingMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "epsilon" | "epsilon_avg" => Ok(ScalingMetric::EpsilonAvg),
            "delta" | "delta_max" => Ok(ScalingMetric::DeltaMax),
            _ => Err(Error::InvalidArgument(format!("unknown metric {s:?} (epsilon or delta)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub d: usize,
    pub mean: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub alpha: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: Vec<ScalingPoint>,
}

/// Averages `(d, value)` samples per `d`, then fits
/// `ln(mean) = intercept - alpha ln(d)` by ordinary least squares.
pub fn fit_power_law(samples: &[(usize, f64)]) -> Result<ScalingFit> {
    let mut by_d: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for &(d, v) in samples {
        if !v.is_finite() {
            return Err(Error::InvalidArgument(format!("non-finite metric {v} at d = {d}")));
        }
        let e = by_d.entry(d).or_insert((0.0, 0));
        e.0 += v;
        e.1 += 1;
    }
    let points: Vec<ScalingPoint> = by_d
        .into_iter()
        .map(|(d, (sum, n))| ScalingPoint { d, mean: sum / n as f64, n })
        .collect();
    if points.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "fit needs at least 3 distinct dimensions, got {}",
            points.len()
        )));
    }
    if let Some(p) = points.iter().find(|p| !(p.mean > 0.0) || p.d == 0) {
        return Err(Error::InvalidArgument(format!(
            "mean metric {} at d = {} is not positive",
            p.mean, p.d
        )));
    }
    let xs: Vec<f64> = points.iter().map(|p| (p.d as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.mean.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(ScalingFit {
        // + 0.0 turns -0.0 into 0.0
        alpha: -slope + 0.0,
        intercept,
        r_squared,
        points,
    })
}

/// Fits the chosen metric at history length `l` over successful realizations.
pub fn fit_scaling(results: &[RealizationResult], metric: ScalingMetric, l: usize) -> Result<ScalingFit> {
    let samples: Vec<(usize, f64)> = results
        .iter()
        .filter(|r| r.is_ok())
        .filter_map(|r| r.at_length(l).map(|rec| (r.d, rec)))
        .map(|(d, rec)| {
            (
                d,
                match metric {
                    ScalingMetric::EpsilonAvg => rec.epsilon_avg,
                    ScalingMetric::DeltaMax => rec.delta_max,
                },
            )
        })
        .collect();
    fit_power_law(&samples)
}

/// Distance bins pooled over the successful realizations at each `d`.
pub fn pool_distance_bins(results: &[RealizationResult]) -> Vec<(usize, DistanceBin<f64>)> {
    let mut pooled: BTreeMap<(usize, usize), (f64, u64, u64)> = BTreeMap::new();
    for r in results.iter().filter(|r| r.is_ok()) {
        for b in &r.distance {
            let e = pooled.entry((r.d, b.distance)).or_insert((0.0, 0, 0));
            e.0 += b.eps_mean * b.pair_count as f64;
            e.1 += b.pair_count;
            e.2 += b.skipped_pairs;
        }
    }
    pooled
        .into_iter()
        .map(|((d, distance), (sum, n, skipped))| {
            (
                d,
                DistanceBin {
                    distance,
                    eps_mean: if n > 0 { sum / n as f64 } else { 0.0 },
                    pair_count: n,
                    skipped_pairs: skipped,
                },
            )
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct DynamicsSeries {
    /// Initial macrostate weights, or the eigenstate index.
    pub label: String,
    pub samples: Vec<MacroSample<f64>>,
}

/// Macrostate weights over `[0, t_max]` for realization `h = 0` at dimension
/// `d`, one series per initial weight triple (equilibrium when none given).
/// For the eigenstate family a single stationary series is produced.
pub fn run_dynamics(
    spec: &SweepSpec,
    d: usize,
    weights: &[[f64; MACROSTATES]],
    t_max_in_tau: f64,
    dt_in_tau: f64,
) -> Result<Vec<DynamicsSeries>> {
    let model = prepare_model(spec, d, 0)?;
    dynamics_for_model(spec, &model, weights, t_max_in_tau, dt_in_tau)
}

/// As [`run_dynamics`] on an already prepared `h = 0` model.
pub fn dynamics_for_model(
    spec: &SweepSpec,
    model: &PreparedModel,
    weights: &[[f64; MACROSTATES]],
    t_max_in_tau: f64,
    dt_in_tau: f64,
) -> Result<Vec<DynamicsSeries>> {
    let (t_max, dt) = (t_max_in_tau * model.tau, dt_in_tau * model.tau);
    if spec.init_family == InitFamily::Eigenstate {
        let (psi, idx) = initial_state(spec, model, 0, 0)?;
        return Ok(vec![DynamicsSeries {
            label: format!("eigenstate {}", idx.unwrap_or_default()),
            samples: macro_dynamics(&model.spectral, &model.coarsening, &psi, t_max, dt)?,
        }]);
    }
    let eq = [equilibrium_weights(&model.coarsening)];
    let triples = if weights.is_empty() { &eq[..] } else { weights };
    triples
        .iter()
        .enumerate()
        .map(|(k, w)| {
            let psi = sample_haar_equilibrium(&model.coarsening, *w, spec.state_seed(0, k))?;
            Ok(DynamicsSeries {
                label: format!("{w:?}"),
                samples: macro_dynamics(&model.spectral, &model.coarsening, &psi, t_max, dt)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> SweepSpec {
        SweepSpec {
            d_grid: vec![5, 10],
            num_hamiltonian_seeds: 2,
            num_state_seeds: 2,
            num_steps: 2,
            base_seed: 17,
            ..SweepSpec::default()
        }
    }

    #[test]
    fn exact_power_laws() {
        let ds = [5usize, 50, 500, 5000];
        let half: Vec<_> = ds.iter().map(|&d| (d, (d as f64).powf(-0.5))).collect();
        let fit = fit_power_law(&half).unwrap();
        assert!((fit.alpha - 0.5).abs() <= 1e-12, "{}", fit.alpha);
        assert!((fit.r_squared - 1.0).abs() <= 1e-12);
        assert!(fit.intercept.abs() <= 1e-12);
        let flat: Vec<_> = ds.iter().map(|&d| (d, 0.3)).collect();
        let fit = fit_power_law(&flat).unwrap();
        assert_eq!(fit.alpha, 0.0);
        assert!(fit.alpha.is_sign_positive());
        assert_eq!(fit.r_squared, 1.0);
    }

    #[test]
    fn fit_averages_raw_values() {
        // two samples per d whose mean is exactly 1/d
        let mut s = Vec::new();
        for d in [10usize, 100, 1000] {
            s.push((d, 0.5 / d as f64));
            s.push((d, 1.5 / d as f64));
        }
        let fit = fit_power_law(&s).unwrap();
        assert!((fit.alpha - 1.0).abs() < 1e-12);
        assert_eq!(fit.points.iter().map(|p| p.n).collect::<Vec<_>>(), vec![2, 2, 2]);
    }

    #[test]
    fn fit_rejects_bad_input() {
        assert!(fit_power_law(&[(5, 1.0), (50, 0.5)]).is_err());
        assert!(fit_power_law(&[(5, 1.0), (50, 0.0), (500, 0.1)]).is_err());
        assert!(fit_power_law(&[(5, 1.0), (50, f64::NAN), (500, 0.1)]).is_err());
    }

    #[test]
    fn metric_names() {
        assert_eq!("epsilon".parse::<ScalingMetric>().unwrap(), ScalingMetric::EpsilonAvg);
        assert_eq!("delta".parse::<ScalingMetric>().unwrap(), ScalingMetric::DeltaMax);
        assert!("gamma".parse::<ScalingMetric>().is_err());
    }

    #[test]
    fn step_mode_json() {
        let parse = |s: &str| serde_json::from_str::<StepMode>(s);
        assert_eq!(parse("\"tau\"").unwrap(), StepMode::Tau);
        assert_eq!(parse("2.5").unwrap(), StepMode::Fixed(2.5));
        assert_eq!(
            parse(r#"{"random_uniform": [0.5, 1.5]}"#).unwrap(),
            StepMode::RandomUniform { lo: 0.5, hi: 1.5 }
        );
        assert!(parse("-1.0").is_err());
        assert!(parse(r#"{"random_uniform": [2.0, 1.0]}"#).is_err());
        assert!(parse("\"seconds\"").is_err());
        for m in [StepMode::Tau, StepMode::Fixed(0.25), StepMode::RandomUniform { lo: 0.0, hi: 2.0 }] {
            assert_eq!(parse(&serde_json::to_string(&m).unwrap()).unwrap(), m);
        }
    }

    #[test]
    fn spec_validation() {
        assert!(SweepSpec::default().validate().is_ok());
        let bad = [
            SweepSpec { d_grid: vec![], ..small_spec() },
            SweepSpec { d_grid: vec![5, 7], ..small_spec() },
            SweepSpec { d_grid: vec![10, 5], ..small_spec() },
            SweepSpec { num_state_seeds: 0, ..small_spec() },
            SweepSpec { num_steps: 0, ..small_spec() },
            SweepSpec { num_steps: 6, ..small_spec() },
            SweepSpec { init_family: InitFamily::HaarNonequilibrium, ..small_spec() },
            SweepSpec { weights: Some([1.0, 0.0, 0.0]), ..small_spec() },
        ];
        for s in bad {
            assert!(matches!(s.validate(), Err(Error::InvalidConfig { .. })), "{s:?}");
        }
    }

    #[test]
    fn seeds_are_distinct_and_stable() {
        let s = small_spec();
        let mut all = vec![s.hamiltonian_seed(0), s.hamiltonian_seed(1)];
        for i in 0..2 {
            for j in 0..2 {
                all.push(s.state_seed(i, j));
            }
        }
        let mut u = all.clone();
        u.sort_unstable();
        u.dedup();
        assert_eq!(u.len(), all.len());
        assert_eq!(s.state_seed(1, 0), small_spec().state_seed(1, 0));
    }

    #[test]
    fn realization_record_shape() {
        let spec = SweepSpec { num_steps: 4, ..small_spec() };
        let r = run_realization(&spec, 5, 0, 0).unwrap();
        assert!(r.is_ok());
        assert_eq!(r.per_l.iter().map(|x| x.l).collect::<Vec<_>>(), vec![2, 3, 4, 5]);
        assert_eq!(r.per_l[1].histogram.len(), 27);
        assert_eq!(r.per_l[3].pair_count, 19440);
        assert_eq!(r.distance.len(), 4);
        assert_eq!(r.v_minus, 1);
        let again = run_realization(&spec, 5, 0, 0).unwrap();
        assert_eq!(RealizationResult { wall_time_s: 0.0, ..r }, RealizationResult { wall_time_s: 0.0, ..again });
    }

    #[test]
    fn eigenstate_family_records_index() {
        let spec = SweepSpec { init_family: InitFamily::Eigenstate, ..small_spec() };
        let r = run_realization(&spec, 10, 1, 1).unwrap();
        assert!(r.eigenstate_index.unwrap() < 10);
    }

    #[test]
    fn sweep_cardinality_and_order() {
        let spec = small_spec();
        let out = run_sweep(&spec, &SweepOptions::default()).unwrap();
        assert_eq!(out.len(), 8);
        assert!(out.windows(2).all(|w| w[0].key() < w[1].key()));
        assert!(out.iter().all(|r| r.per_l.len() == 2));
    }

    #[test]
    fn failures_are_recorded() {
        // budget too small for L = 3 at D = 10 but fine at D = 5
        let spec = SweepSpec {
            amplitude_budget: 5 * 27,
            num_hamiltonian_seeds: 1,
            num_state_seeds: 1,
            ..small_spec()
        };
        let out = run_sweep(&spec, &SweepOptions::default()).unwrap();
        assert_eq!(out.len(), 2);
        assert!(out[0].is_ok());
        let err = out[1].error.as_deref().unwrap();
        assert!(err.contains("budget"), "{err}");
        assert!(out[1].per_l.is_empty());
    }

    #[test]
    fn resume_skips_completed_work() {
        let dir = tempfile::tempdir().unwrap();
        let spec = small_spec();
        let opts = SweepOptions {
            workers: 1,
            output_dir: Some(dir.path().to_path_buf()),
        };
        let first = run_sweep(&spec, &opts).unwrap();
        let records = dir.path().join(RECORDS_FILE);
        let text = fs::read_to_string(&records).unwrap();
        assert_eq!(text.lines().count(), 8);
        // a truncated trailing line is dropped and its realization redone
        let mut lines: Vec<&str> = text.lines().collect();
        let last = lines.pop().unwrap();
        let torn = format!("{}\n{}", lines.join("\n"), &last[..last.len() / 2]);
        fs::write(&records, torn).unwrap();
        let second = run_sweep(&spec, &opts).unwrap();
        assert_eq!(fs::read_to_string(&records).unwrap().lines().count(), 8);
        let strip = |v: Vec<RealizationResult>| -> Vec<_> {
            v.into_iter().map(|r| RealizationResult { wall_time_s: 0.0, ..r }).collect()
        };
        let (first, second) = (strip(first), strip(second));
        assert_eq!(first, second);
        // nothing left to do: the record file is untouched
        let before = fs::read_to_string(&records).unwrap();
        let third = run_sweep(&spec, &opts).unwrap();
        assert_eq!(fs::read_to_string(&records).unwrap(), before);
        assert_eq!(strip(third), first);
        // a different sweep may not reuse the directory
        let other = SweepSpec { base_seed: 18, ..small_spec() };
        assert!(run_sweep(&other, &opts).is_err());
    }

    #[test]
    fn pooled_distance_bins() {
        let out = run_sweep(&small_spec(), &SweepOptions::default()).unwrap();
        let pooled = pool_distance_bins(&out);
        assert_eq!(pooled.len(), 4);
        for (d, b) in &pooled {
            let rs: Vec<_> = out.iter().filter(|r| r.d == *d).collect();
            let per: Vec<_> = rs.iter().map(|r| r.distance[b.distance - 1]).collect();
            assert_eq!(b.pair_count, per.iter().map(|x| x.pair_count).sum::<u64>());
            // equal populations: the pooled mean is the plain mean
            let plain = per.iter().map(|x| x.eps_mean).sum::<f64>() / per.len() as f64;
            assert!((b.eps_mean - plain).abs() < 1e-14);
        }
    }

    #[test]
    fn dynamics_series() {
        let spec = small_spec();
        let series = run_dynamics(&spec, 10, &[[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]], 2.0, 0.5).unwrap();
        assert_eq!(series.len(), 2);
        assert_eq!(series[0].samples.len(), 5);
        assert!((series[0].samples[0].weights[0] - 1.0).abs() < 1e-14);
        assert!((series[1].samples[0].weights[2] - 1.0).abs() < 1e-15);
        let eq = run_dynamics(&spec, 10, &[], 1.0, 0.5).unwrap();
        assert_eq!(eq.len(), 1);
        assert!((eq[0].samples[0].weights[1] - 0.6).abs() < 1e-12);
    }
}
