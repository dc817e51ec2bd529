//! Causal digital-twin core: learns instantaneous and lagged coupling
//! factors between connected assets from multichannel measurements, then
//! re-simulates the system under modified couplings for what-if and
//! counterfactual analysis.
//!
//! The model is a structural vector autoregression over an expert-supplied
//! causal graph: `y[n] = A0 y[n] + sum_m Am y[n-m] + e[n]`, with an acyclic
//! instantaneous part and no self-causality. Couplings are estimated two
//! ways: an online recurrent network with a simulation output layer
//! ([`learner`]) and closed-form least squares ([`baselines`]). Outcomes of
//! re-simulation experiments are compared spectrally ([`spectral`]).

pub mod baselines;
pub mod error;
pub mod graph;
pub mod learner;
pub mod series;
pub mod spectral;
pub mod svar;

pub use error::{Error, Result};
pub use graph::{CausalGraph, CouplingSet, GraphFile, GraphFileEdge, GraphViolation, ParamLayout, ValidationReport};
pub use series::MultichannelSeries;
pub use svar::{
    companion_spectral_radius, counterfactual_remove, generate_series, simulate_step, whatif_run,
    CounterfactualTarget, LagFeedback, LagWindow, NoiseKind, NoiseSpec, STABILITY_LIMIT,
};
pub use learner::{
    continue_training, train_online, Network, NetworkConfig, StepTrace, TrainingOutcome,
    TrajectoryRow,
};
pub use baselines::{
    direction_test, direction_test_with, ols_svar_fit, variance_ratios, Direction,
    DirectionVerdict, FitReport,
};
pub use spectral::{
    band_power_ratio, collapse_spectrum, log_power, spectral_similarity, spectrogram,
    SpectrogramConfig, TfdMatrix, WindowKind,
};
