//! Multi-time decoherence functionals for a random-matrix model of two
//! systems exchanging energy, with the finite-size scaling analysis of
//! coherence violations.
//!
//! The numerical core is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix it to `f64`, which is what the experiments and the CLI use.

mod lapack;

pub mod config;
pub mod error;
pub mod experiments;
pub mod histories;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod output;
pub mod rng;
pub mod scalar;
pub mod spectral;

pub use error::{Error, Result};
pub use scalar::Real;

pub type ModelConfig = model::ModelConfig<f64>;
pub type CouplingParameters = model::CouplingParameters<f64>;
pub type BlockHamiltonian = model::BlockHamiltonian<f64>;
pub type Coarsening = model::Coarsening<f64>;
pub type Perturbation = model::Perturbation<f64>;
pub type SpectralDecomposition = spectral::SpectralDecomposition<f64>;
pub type StateVector = spectral::StateVector<f64>;
pub type HistoryGrid = histories::HistoryGrid<f64>;
pub type BranchStates = histories::BranchStates<f64>;
pub type DecoherenceFunctional = histories::DecoherenceFunctional<f64>;
pub use config::RunConfig;
