//! JSON run configuration shared by every command.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::{InitFamily, PerturbationSpec, StepMode, SweepSpec};
use crate::histories::DEFAULT_AMPLITUDE_BUDGET;
use crate::model::{CouplingRegime, DiagonalSpacing, Ensemble, MACROSTATES};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub init: InitSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub dynamics: DynamicsSection,
}

/// Exactly one of `v_minus` and `d_grid` may be given; with neither the grid
/// is `[5, 50, 500, 5000]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_minus: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_grid: Option<Vec<usize>>,
    #[serde(default = "one")]
    pub delta_e: f64,
    #[serde(default)]
    pub regime: CouplingRegime,
    #[serde(default)]
    pub ensemble: Ensemble,
    #[serde(default)]
    pub diagonal_spacing: DiagonalSpacing,
    #[serde(default = "default_target")]
    pub smallness_target: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<PerturbationSpec>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            v_minus: None,
            d_grid: None,
            delta_e: 1.0,
            regime: CouplingRegime::default(),
            ensemble: Ensemble::default(),
            diagonal_spacing: DiagonalSpacing::default(),
            smallness_target: default_target(),
            perturbation: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(default = "default_steps")]
    pub num_steps: usize,
    #[serde(default = "default_step_mode")]
    pub step_mode: StepMode,
    /// Cap on stored branch amplitudes, `D * 3^L`.
    #[serde(default = "default_budget")]
    pub amplitude_budget: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection {
            num_steps: default_steps(),
            step_mode: default_step_mode(),
            amplitude_budget: default_budget(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Weights {
    One([f64; MACROSTATES]),
    Many(Vec<[f64; MACROSTATES]>),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSection {
    #[serde(default)]
    pub family: InitFamily,
    /// Absent means equilibrium weights `V_x / D`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Weights>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default = "three")]
    pub num_hamiltonian_seeds: usize,
    #[serde(default = "three")]
    pub num_state_seeds: usize,
    #[serde(default)]
    pub base_seed: u64,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            num_hamiltonian_seeds: 3,
            num_state_seeds: 3,
            base_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_directory")]
    pub directory: PathBuf,
    #[serde(default)]
    pub dump_df: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            directory: default_directory(),
            dump_df: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsSection {
    #[serde(default = "default_t_max")]
    pub t_max_in_tau: f64,
    #[serde(default = "default_dt")]
    pub dt_in_tau: f64,
}

impl Default for DynamicsSection {
    fn default() -> Self {
        DynamicsSection {
            t_max_in_tau: default_t_max(),
            dt_in_tau: default_dt(),
        }
    }
}

fn one() -> f64 {
    1.0
}
fn three() -> usize {
    3
}
fn default_target() -> f64 {
    0.01
}
fn default_steps() -> usize {
    4
}
fn default_step_mode() -> StepMode {
    StepMode::Tau
}
fn default_budget() -> usize {
    DEFAULT_AMPLITUDE_BUDGET
}
fn default_directory() -> PathBuf {
    PathBuf::from("output")
}
fn default_t_max() -> f64 {
    20.0
}
fn default_dt() -> f64 {
    0.1
}

impl RunConfig {
    /// Parses and validates. Errors name the offending key.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let key = if path == "." { "<root>".to_string() } else { path };
            Error::config(key, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.model.v_minus.is_some() && self.model.d_grid.is_some() {
            return Err(Error::config("model", "give either v_minus or d_grid, not both"));
        }
        if self.model.v_minus == Some(0) {
            return Err(Error::config("model.v_minus", "must be positive"));
        }
        if let Some(Weights::Many(list)) = &self.init.weights {
            if list.is_empty() {
                return Err(Error::config("init.weights", "empty list"));
            }
            if self.init.family == InitFamily::HaarNonequilibrium && list.len() > 1 {
                return Err(Error::config("init.weights", "a sweep takes a single weight triple"));
            }
        }
        let dy = &self.dynamics;
        if !(dy.dt_in_tau > 0.0 && dy.dt_in_tau.is_finite()) {
            return Err(Error::config("dynamics.dt_in_tau", "must be positive"));
        }
        if !(dy.t_max_in_tau >= 0.0 && dy.t_max_in_tau.is_finite()) {
            return Err(Error::config("dynamics.t_max_in_tau", "must be nonnegative"));
        }
        self.sweep_spec()?.validate()
    }

    pub fn d_grid(&self) -> Vec<usize> {
        match (&self.model.v_minus, &self.model.d_grid) {
            (Some(v), _) => vec![5 * v],
            (None, Some(g)) => g.clone(),
            (None, None) => SweepSpec::default().d_grid,
        }
    }

    /// The one dimension of a single-model command.
    pub fn single_dimension(&self) -> Result<usize> {
        match self.d_grid().as_slice() {
            [d] => Ok(*d),
            g => Err(Error::config(
                "model",
                format!("this command needs a single dimension, got {} (use v_minus)", g.len()),
            )),
        }
    }

    /// Weight triples for the dynamics command.
    pub fn dynamics_weights(&self) -> Vec<[f64; MACROSTATES]> {
        match &self.init.weights {
            None => Vec::new(),
            Some(Weights::One(w)) => vec![*w],
            Some(Weights::Many(ws)) => ws.clone(),
        }
    }

    pub fn sweep_spec(&self) -> Result<SweepSpec> {
        let weights = match (self.init.family, &self.init.weights) {
            (InitFamily::HaarNonequilibrium, Some(Weights::One(w))) => Some(*w),
            (InitFamily::HaarNonequilibrium, Some(Weights::Many(ws))) => ws.first().copied(),
            _ => None,
        };
        Ok(SweepSpec {
            d_grid: self.d_grid(),
            num_hamiltonian_seeds: self.sweep.num_hamiltonian_seeds,
            num_state_seeds: self.sweep.num_state_seeds,
            regime: self.model.regime,
            ensemble: self.model.ensemble,
            spacing: self.model.diagonal_spacing,
            delta_e: self.model.delta_e,
            smallness_target: self.model.smallness_target,
            init_family: self.init.family,
            weights,
            num_steps: self.grid.num_steps,
            step_mode: self.grid.step_mode,
            base_seed: self.sweep.base_seed,
            perturbation: self.model.perturbation,
            amplitude_budget: self.grid.amplitude_budget,
        })
    }
}
