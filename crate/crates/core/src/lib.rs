//! Simulation and inference for phase-sensitive probe measurements of
//! multi-tone signals.
//!
//! The crate models a two-level probe that accumulates phase from a weak
//! classical signal during fixed sensing windows of length tau, is read out
//! projectively, and repeats. On top of that forward model it provides
//!
//! * dataset simulation with per-set randomized tone parameters ([`sim`]),
//! * exact and amplitude-marginalized likelihoods ([`likelihood`]),
//! * maximum-likelihood frequency estimation with profiled per-set
//!   nuisances ([`estimate`]),
//! * Fisher information, Cramer-Rao bounds, and precision scaling
//!   diagnostics ([`fisher`]),
//! * a periodogram front end used for seeding and for linewidth
//!   comparisons ([`spectrum`]).
//!
//! Angular frequencies are radians per unit time throughout; detunings are
//! measured from the probe's rotating frame.

pub mod dataset;
pub mod error;
pub mod estimate;
pub mod fisher;
pub mod likelihood;
pub mod optim;
pub mod params;
pub mod quad;
pub mod signal;
pub mod sim;
pub mod spectrum;
pub mod stats;

pub use dataset::{
    AmplitudeModel, Dataset, DatasetMeta, MeasurementSet, PhaseModel, SetTruth, SignalModel,
};
pub use error::{CoreError, Result};
pub use estimate::{
    estimate_over_resamples, mle_estimate, resolution_decision, EstimateResult, EstimationConfig,
    OptimizerKind, ResampleSummary, ResolutionDecision,
};
pub use fisher::{
    crb_of_separation, fisher_exact, fisher_linearized, fisher_marginal, frequency_crb_scaling,
    FisherResult, ScalingSlopes, SeparationCrb,
};
pub use params::{Amplitudes, ParamLayout, ParamName, ParamVector, ProbabilityGradient};
pub use signal::ProbeConfig;
pub use sim::{draw_set_parameters, simulate_dataset, split_resample};
pub use spectrum::{power_spectrum, spectral_seed, LineShape, PowerSpectrum, SpectralSeed};
