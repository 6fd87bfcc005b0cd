//! Deterministic signal model of one phase-sensitive measurement.
//!
//! A probe block of duration `tau` starting at time `t` (measured from the
//! start of its own set) accumulates the phase
//!
//! ```text
//! phi = sum_k  Omega_k * tau * sinc(delta_k * tau / 2) * cos(delta_k * t + phi_k)
//! ```
//!
//! with unnormalized `sinc(x) = sin(x)/x`, `sinc(0) = 1`, and is read out with
//! detection probability `sin^2(phi + pi/4)`, degraded by a symmetric readout
//! fidelity `f`:
//!
//! ```text
//! p = f * sin^2(phi + pi/4) + (1 - f) * cos^2(phi + pi/4)
//!   = 1/2 + (2f - 1) * sin(2 phi) / 2
//! ```
//!
//! All frequencies are angular (rad/s) and all times are seconds.

use crate::error::{CoreError, Result};

/// Probe and readout configuration, constant across one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeConfig {
    /// Duration of a single measurement block (s).
    pub tau: f64,
    /// Probability that the detector reports the true outcome; 0.5 is a coin
    /// flip, 1.0 is ideal.
    pub readout_fidelity: f64,
    /// Shots recorded per grid point. Shot j of point i is stored as an
    /// ordinary measurement at grid time (i*shots + j)*tau, so a set holds
    /// n_per_set * shots_per_point bit outcomes on one uniform tau grid.
    pub shots_per_point: u32,
}

impl ProbeConfig {
    pub fn new(tau: f64, readout_fidelity: f64, shots_per_point: u32) -> Result<Self> {
        let probe = Self { tau, readout_fidelity, shots_per_point };
        probe.validate()?;
        Ok(probe)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(CoreError::Config(format!("probe.tau must be > 0, got {}", self.tau)));
        }
        if !(0.5..=1.0).contains(&self.readout_fidelity) {
            return Err(CoreError::Config(format!(
                "probe.readout_fidelity must lie in [0.5, 1.0], got {}",
                self.readout_fidelity
            )));
        }
        if self.shots_per_point == 0 {
            return Err(CoreError::Config("probe.shots_per_point must be >= 1".into()));
        }
        Ok(())
    }

    /// Readout contrast 2f - 1; multiplies every signal-dependent term of p.
    #[inline]
    pub fn contrast(&self) -> f64 {
        2.0 * self.readout_fidelity - 1.0
    }
}

/// Unnormalized sinc. The series branch keeps full f64 accuracy where
/// sin(x)/x loses digits to cancellation.
#[inline]
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        let x2 = x * x;
        1.0 - x2 / 6.0 + x2 * x2 / 120.0
    } else {
        x.sin() / x
    }
}

/// d sinc(x) / dx = (cos x - sinc x) / x, with the matching series branch.
#[inline]
pub fn dsinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        let x2 = x * x;
        -x / 3.0 + x2 * x / 30.0
    } else {
        (x.cos() - sinc(x)) / x
    }
}

/// Phase accumulated over one block starting at within-set time `t`.
///
/// The three slices carry one entry per tone; lengths must agree (debug
/// asserted, hot path).
#[inline]
pub fn accumulated_phase(deltas: &[f64], omegas: &[f64], phis: &[f64], t: f64, tau: f64) -> f64 {
    debug_assert_eq!(deltas.len(), omegas.len());
    debug_assert_eq!(deltas.len(), phis.len());
    let mut phase = 0.0;
    for k in 0..deltas.len() {
        phase += omegas[k] * tau * sinc(deltas[k] * tau / 2.0) * (deltas[k] * t + phis[k]).cos();
    }
    phase
}

/// Detection probability for a block that accumulated `phase`, at the given
/// readout fidelity. Exact in `phase`; always inside [0, 1].
#[inline]
pub fn detection_probability(phase: f64, readout_fidelity: f64) -> f64 {
    debug_assert!((0.5..=1.0).contains(&readout_fidelity));
    let contrast = 2.0 * readout_fidelity - 1.0;
    0.5 + 0.5 * contrast * (2.0 * phase).sin()
}

/// Small-signal probability, single tone: p ~ 1/2 + Omega*tau*(cos phi - delta*t*sin phi),
/// clamped to [0, 1]. Valid when |delta*t| and |Omega*tau| are both small.
#[inline]
pub fn linearized_probability(omega: f64, tau: f64, phi: f64, delta: f64, t: f64) -> f64 {
    let p = 0.5 + omega * tau * (phi.cos() - delta * t * phi.sin());
    p.clamp(0.0, 1.0)
}
