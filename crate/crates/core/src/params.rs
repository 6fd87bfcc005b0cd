//! Parameter vectors for the multi-tone model and their flat layout.
//!
//! Estimation and Fisher analysis need one fixed ordering of the free
//! parameters. The layout is:
//!
//! * exact (per-set) amplitudes:
//!   `[delta_0 .. delta_{K-1}, (Omega_0 .. Omega_{K-1}, phi_0 .. phi_{K-1}) per set]`
//! * marginalized amplitudes:
//!   `[delta_0 .. delta_{K-1}, mean_omega, (phi_0 .. phi_{K-1}) per set]`
//!
//! Set blocks appear in set-index order. Tone index k runs over ascending
//! `deltas`.

use crate::error::{CoreError, Result};
use crate::signal::{accumulated_phase, dsinc, sinc, ProbeConfig};

/// Amplitude treatment of a parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub enum Amplitudes {
    /// One free amplitude per tone per set, `omegas[set][tone]` (rad/s).
    PerSet(Vec<Vec<f64>>),
    /// Amplitudes integrated out against a shared per-set Rayleigh scale with
    /// the given mean (rad/s). `weights[tone]` are fixed relative weights.
    Marginal { mean_omega: f64, weights: Vec<f64> },
}

/// Free parameters of the K-tone model over L sets.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    /// Tone frequencies (rad/s), strictly ascending.
    pub deltas: Vec<f64>,
    pub amplitudes: Amplitudes,
    /// Per-set tone phases `phis[set][tone]` (rad).
    pub phis: Vec<Vec<f64>>,
}

impl ParamVector {
    pub fn per_set(deltas: Vec<f64>, omegas: Vec<Vec<f64>>, phis: Vec<Vec<f64>>) -> Self {
        Self { deltas, amplitudes: Amplitudes::PerSet(omegas), phis }
    }

    pub fn marginal(deltas: Vec<f64>, mean_omega: f64, phis: Vec<Vec<f64>>) -> Self {
        let weights = vec![1.0; deltas.len()];
        Self { deltas, amplitudes: Amplitudes::Marginal { mean_omega, weights }, phis }
    }

    pub fn n_tones(&self) -> usize {
        self.deltas.len()
    }

    pub fn n_sets(&self) -> usize {
        self.phis.len()
    }

    pub fn is_marginal(&self) -> bool {
        matches!(self.amplitudes, Amplitudes::Marginal { .. })
    }

    /// Relative tone weights; all ones in the per-set representation.
    pub fn weights(&self) -> Vec<f64> {
        match &self.amplitudes {
            Amplitudes::Marginal { weights, .. } => weights.clone(),
            Amplitudes::PerSet(_) => vec![1.0; self.n_tones()],
        }
    }

    /// Check internal consistency and agreement with a dataset of `n_sets` sets.
    pub fn validate(&self, n_sets: usize) -> Result<()> {
        let k = self.n_tones();
        if k == 0 {
            return Err(CoreError::Layout("parameter vector needs at least one tone".into()));
        }
        if self.deltas.iter().any(|d| !d.is_finite()) {
            return Err(CoreError::Layout("deltas must be finite".into()));
        }
        if self.deltas.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CoreError::Layout("deltas must be strictly ascending".into()));
        }
        if self.phis.len() != n_sets {
            return Err(CoreError::Layout(format!(
                "expected phases for {} sets, got {}",
                n_sets,
                self.phis.len()
            )));
        }
        if self.phis.iter().any(|row| row.len() != k) {
            return Err(CoreError::Layout(format!("each set needs {k} phases")));
        }
        match &self.amplitudes {
            Amplitudes::PerSet(omegas) => {
                if omegas.len() != n_sets || omegas.iter().any(|row| row.len() != k) {
                    return Err(CoreError::Layout(format!(
                        "per-set amplitudes must be {n_sets} rows of {k}"
                    )));
                }
                if omegas.iter().flatten().any(|o| !o.is_finite() || *o < 0.0) {
                    return Err(CoreError::Layout("amplitudes must be finite and >= 0".into()));
                }
            }
            Amplitudes::Marginal { mean_omega, weights } => {
                if !mean_omega.is_finite() || *mean_omega < 0.0 {
                    return Err(CoreError::Layout(format!(
                        "mean_omega must be finite and >= 0, got {mean_omega}"
                    )));
                }
                if weights.len() != k || weights.iter().any(|w| !w.is_finite() || *w <= 0.0) {
                    return Err(CoreError::Layout(format!("need {k} positive tone weights")));
                }
            }
        }
        Ok(())
    }

    /// Per-tone amplitudes of one set. In the marginal representation these
    /// are the weighted mean amplitudes, the scale at which per-measurement
    /// probabilities are quoted outside the amplitude integral.
    pub fn set_omegas(&self, set: usize) -> Vec<f64> {
        match &self.amplitudes {
            Amplitudes::PerSet(omegas) => omegas[set].clone(),
            Amplitudes::Marginal { mean_omega, weights } => {
                weights.iter().map(|w| w * mean_omega).collect()
            }
        }
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout::new(self.n_tones(), self.n_sets(), self.is_marginal())
    }
}

/// Name of one coordinate in the flat parameter layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamName {
    Delta(usize),
    MeanOmega,
    Omega { set: usize, tone: usize },
    Phi { set: usize, tone: usize },
}

/// Flat index bookkeeping for a (K, L) parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub k: usize,
    pub l: usize,
    pub marginal: bool,
}

impl ParamLayout {
    pub fn new(k: usize, l: usize, marginal: bool) -> Self {
        Self { k, l, marginal }
    }

    /// Number of free parameters.
    pub fn len(&self) -> usize {
        if self.marginal {
            self.k + 1 + self.k * self.l
        } else {
            self.k + 2 * self.k * self.l
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn delta_index(&self, tone: usize) -> usize {
        debug_assert!(tone < self.k);
        tone
    }

    /// Index of the shared mean amplitude; only in the marginal layout.
    pub fn mean_omega_index(&self) -> Option<usize> {
        self.marginal.then_some(self.k)
    }

    pub fn omega_index(&self, set: usize, tone: usize) -> Option<usize> {
        if self.marginal {
            None
        } else {
            debug_assert!(set < self.l && tone < self.k);
            Some(self.k + 2 * self.k * set + tone)
        }
    }

    pub fn phi_index(&self, set: usize, tone: usize) -> usize {
        debug_assert!(set < self.l && tone < self.k);
        if self.marginal {
            self.k + 1 + self.k * set + tone
        } else {
            self.k + 2 * self.k * set + self.k + tone
        }
    }

    pub fn name(&self, index: usize) -> ParamName {
        debug_assert!(index < self.len());
        if index < self.k {
            return ParamName::Delta(index);
        }
        if self.marginal {
            if index == self.k {
                return ParamName::MeanOmega;
            }
            let rest = index - self.k - 1;
            ParamName::Phi { set: rest / self.k, tone: rest % self.k }
        } else {
            let rest = index - self.k;
            let (set, within) = (rest / (2 * self.k), rest % (2 * self.k));
            if within < self.k {
                ParamName::Omega { set, tone: within }
            } else {
                ParamName::Phi { set, tone: within - self.k }
            }
        }
    }

    /// Human-readable coordinate names, in flat order.
    pub fn names(&self) -> Vec<String> {
        (0..self.len())
            .map(|i| match self.name(i) {
                ParamName::Delta(k) => format!("delta_{k}"),
                ParamName::MeanOmega => "mean_omega".to_string(),
                ParamName::Omega { set, tone } => format!("omega_{tone}__set{set}"),
                ParamName::Phi { set, tone } => format!("phi_{tone}__set{set}"),
            })
            .collect()
    }
}

/// Probability of one measurement and its gradient in the flat layout.
#[derive(Debug, Clone)]
pub struct ProbabilityGradient {
    pub p: f64,
    /// d p / d theta over the full layout; entries belonging to sets other
    /// than the queried one are zero. In the marginal layout the mean_omega
    /// entry is zero by convention: that coordinate acts only through the
    /// amplitude integral, not through a single fixed-amplitude probability.
    pub grad: Vec<f64>,
}

/// Exact detection probability of the measurement at within-set time `t` of
/// set `set_index`, with its analytic gradient.
pub fn probability_gradient(
    params: &ParamVector,
    set_index: usize,
    t: f64,
    probe: &ProbeConfig,
) -> Result<ProbabilityGradient> {
    let layout = params.layout();
    if set_index >= layout.l {
        return Err(CoreError::Layout(format!(
            "set index {set_index} out of range for {} sets",
            layout.l
        )));
    }
    let tau = probe.tau;
    let contrast = probe.contrast();
    let omegas = params.set_omegas(set_index);
    let phis = &params.phis[set_index];
    let phase = accumulated_phase(&params.deltas, &omegas, phis, t, tau);
    let p = 0.5 + 0.5 * contrast * (2.0 * phase).sin();
    // dp/dtheta = contrast * cos(2 phase) * dphase/dtheta
    let outer = contrast * (2.0 * phase).cos();

    let mut grad = vec![0.0; layout.len()];
    for k in 0..layout.k {
        let x = params.deltas[k] * tau / 2.0;
        let (snc, dsnc) = (sinc(x), dsinc(x));
        let arg = params.deltas[k] * t + phis[k];
        let (sin_arg, cos_arg) = arg.sin_cos();
        // d phase / d delta_k: product rule over the sinc envelope and the
        // oscillation argument.
        grad[layout.delta_index(k)] =
            outer * omegas[k] * tau * (dsnc * (tau / 2.0) * cos_arg - snc * t * sin_arg);
        if let Some(idx) = layout.omega_index(set_index, k) {
            grad[idx] = outer * tau * snc * cos_arg;
        }
        grad[layout.phi_index(set_index, k)] = outer * (-omegas[k] * tau * snc * sin_arg);
    }
    Ok(ProbabilityGradient { p, grad })
}
