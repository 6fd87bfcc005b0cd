//! Measurement records and the generating signal description.
//!
//! A dataset is N_sets independent sets. Within one set the signal parameters
//! are constant and measurements sit on the uniform grid t_i = i * tau,
//! counted from the set's own start. Sets are far apart in lab time, so the
//! only thing a set remembers about absolute time is its recorded
//! `start_time`; all model evaluation uses within-set times.

use crate::error::{CoreError, Result};
use crate::signal::ProbeConfig;

/// Parameters a simulated set was actually generated with.
#[derive(Debug, Clone, PartialEq)]
pub struct SetTruth {
    /// Per-tone amplitudes (rad/s).
    pub omegas: Vec<f64>,
    /// Per-tone phases (rad).
    pub phis: Vec<f64>,
}

/// One coherent block of measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    pub set_index: u32,
    /// Lab time of the first measurement (s). Metadata only.
    pub start_time: f64,
    /// Bit outcomes, one per grid point.
    pub outcomes: Vec<u8>,
    /// Present only for simulated data.
    pub truth: Option<SetTruth>,
}

impl MeasurementSet {
    pub fn n(&self) -> usize {
        self.outcomes.len()
    }

    /// Within-set measurement time of outcome `i`.
    #[inline]
    pub fn time(&self, i: usize, tau: f64) -> f64 {
        i as f64 * tau
    }
}

/// Provenance carried alongside the measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetMeta {
    pub seed: u64,
    /// Unix seconds at generation; None for ingested data.
    pub created_unix: Option<u64>,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub probe: ProbeConfig,
    pub sets: Vec<MeasurementSet>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn n_sets(&self) -> usize {
        self.sets.len()
    }

    /// Total number of measurements across all sets.
    pub fn n_total(&self) -> usize {
        self.sets.iter().map(|s| s.n()).sum()
    }

    /// Duration of the longest set; stands in for the coherence time when the
    /// generating model is not available.
    pub fn max_set_duration(&self) -> f64 {
        self.sets.iter().map(|s| s.n() as f64 * self.probe.tau).fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<()> {
        self.probe.validate()?;
        if self.sets.is_empty() {
            return Err(CoreError::Config("dataset holds no sets".into()));
        }
        for (i, set) in self.sets.iter().enumerate() {
            if set.set_index as usize != i {
                return Err(CoreError::Config(format!(
                    "set indices must be contiguous from 0; position {i} holds index {}",
                    set.set_index
                )));
            }
            if set.outcomes.is_empty() {
                return Err(CoreError::Config(format!("set {i} holds no outcomes")));
            }
            if set.outcomes.iter().any(|&b| b > 1) {
                return Err(CoreError::Config(format!("set {i} holds a non-bit outcome")));
            }
            if !set.start_time.is_finite() {
                return Err(CoreError::Config(format!("set {i} has a non-finite start time")));
            }
            if let Some(truth) = &set.truth {
                if truth.omegas.len() != truth.phis.len() || truth.omegas.is_empty() {
                    return Err(CoreError::Config(format!("set {i} has a malformed truth block")));
                }
            }
        }
        Ok(())
    }
}

/// How per-set amplitudes are generated.
#[derive(Debug, Clone, PartialEq)]
pub enum AmplitudeModel {
    /// Same amplitude every set (rad/s).
    Fixed(f64),
    /// One Rayleigh draw per set with the given mean (rad/s), shared by all
    /// tones through the unit relative weights. Scale sigma = sqrt(2/pi)*mean.
    Rayleigh { mean: f64 },
}

/// How per-set phases are generated.
#[derive(Debug, Clone, PartialEq)]
pub enum PhaseModel {
    /// Independent uniform draw on [0, 2pi) per tone per set.
    Uniform,
    /// The same fixed phases every set, one per tone.
    Fixed(Vec<f64>),
}

/// Ground-truth signal description used by the simulator.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalModel {
    /// Tone frequencies (rad/s), strictly ascending.
    pub deltas: Vec<f64>,
    pub amplitude: AmplitudeModel,
    pub phase: PhaseModel,
    /// Coherence time bounding one set (s).
    pub t_phi: f64,
    /// Grid points per set (before the shots_per_point multiplier).
    pub n_per_set: u32,
    pub n_sets: u32,
}

impl SignalModel {
    pub fn n_tones(&self) -> usize {
        self.deltas.len()
    }

    /// Measurements actually recorded per set.
    pub fn measurements_per_set(&self, probe: &ProbeConfig) -> usize {
        self.n_per_set as usize * probe.shots_per_point as usize
    }

    pub fn validate(&self, probe: &ProbeConfig) -> Result<()> {
        probe.validate()?;
        if self.deltas.is_empty() {
            return Err(CoreError::Config("signal.deltas must hold at least one tone".into()));
        }
        if self.deltas.iter().any(|d| !d.is_finite() || *d <= 0.0) {
            return Err(CoreError::Config("signal.deltas must be finite and > 0".into()));
        }
        if self.deltas.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CoreError::Config("signal.deltas must be strictly ascending".into()));
        }
        match &self.amplitude {
            AmplitudeModel::Fixed(o) if !(o.is_finite() && *o >= 0.0) => {
                return Err(CoreError::Config(format!("signal amplitude must be >= 0, got {o}")));
            }
            AmplitudeModel::Rayleigh { mean } if !(mean.is_finite() && *mean >= 0.0) => {
                return Err(CoreError::Config(format!(
                    "signal mean amplitude must be >= 0, got {mean}"
                )));
            }
            _ => {}
        }
        if let PhaseModel::Fixed(phis) = &self.phase {
            if phis.len() != self.deltas.len() {
                return Err(CoreError::Config(format!(
                    "signal fixed phases: expected {} entries, got {}",
                    self.deltas.len(),
                    phis.len()
                )));
            }
        }
        if !(self.t_phi.is_finite() && self.t_phi > 0.0) {
            return Err(CoreError::Config(format!("signal.t_phi must be > 0, got {}", self.t_phi)));
        }
        if self.n_per_set == 0 || self.n_sets == 0 {
            return Err(CoreError::Config("signal.n_per_set and signal.n_sets must be >= 1".into()));
        }
        let span = self.measurements_per_set(probe) as f64 * probe.tau;
        if span > self.t_phi * (1.0 + 1e-9) {
            return Err(CoreError::Config(format!(
                "one set spans {span} s which exceeds the coherence time {} s",
                self.t_phi
            )));
        }
        Ok(())
    }
}
