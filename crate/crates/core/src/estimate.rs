//! Maximum-likelihood frequency estimation.
//!
//! The outer optimizer moves only the shared parameters: the K detunings in
//! exact mode, plus the mean amplitude in marginal mode. All per-set
//! nuisances (tone amplitudes and phases) are profiled out at every objective
//! evaluation by the Newton fits in [`crate::likelihood`], each started from
//! the deterministic linearized seed so the objective is a pure function of
//! the outer point. The objective is wrapped in a hard window: points outside
//! the search interval evaluate to -inf, which the simplex treats as ordinary
//! bad values.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::dataset::Dataset;
use crate::error::{CoreError, Result};
use crate::likelihood::{
    fit_set_amplitudes, fit_set_shared_scale, linearized_rect_seed, log_likelihood_gradient,
    marginal_log_likelihood_gradient, marginal_set_laplace, marginal_set_log_likelihood, SetBasis,
};
use crate::optim::{bfgs, nelder_mead, GradientOptions, OptimResult, SimplexOptions};
use crate::params::ParamVector;
use crate::spectrum::spectral_seed;
use crate::stats::{mean, sample_sd};

const TAU_CIRCLE: f64 = std::f64::consts::TAU;

/// Stream seed for start-point jitter; fixed so estimation is a pure
/// function of (dataset, config).
const START_JITTER_SEED: u64 = 0x51e5_7a27;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    /// Derivative-free downhill simplex (default).
    Simplex,
    /// BFGS on the profiled objective with envelope gradients.
    Gradient,
}

/// Knobs for [`mle_estimate`].
#[derive(Debug, Clone)]
pub struct EstimationConfig {
    /// Number of tones the model fits (not necessarily the number present).
    pub k_fit: usize,
    /// Multi-start count for the outer optimizer. The first start is the
    /// seed itself, the second collapses every tone onto the strongest peak
    /// (the route to sub-Fourier splits the periodogram cannot see), and the
    /// rest alternate local jitter with uniform draws over the window.
    pub n_starts: usize,
    /// Half-width of the detuning search window (rad/s) around the spectral
    /// seed; None picks 5 fourier widths, 5 * 2pi / T_set.
    pub search_halfwidth: Option<f64>,
    /// Marginalize tone amplitudes over the Rayleigh prior instead of
    /// profiling a free amplitude per set and tone.
    pub marginalize_amplitudes: bool,
    /// Gauss-Legendre order for final marginal evaluations. The simplex inner
    /// loop itself uses the Laplace approximation; start comparison and the
    /// reported likelihood use this order.
    pub quadrature_order: usize,
    /// Quadrature order for gradient-mode inner evaluations.
    pub inner_quadrature_order: usize,
    pub optimizer: OptimizerKind,
    /// Objective-evaluation budget per start.
    pub max_evaluations: usize,
    /// Relative function tolerance of the outer optimizer.
    pub f_tol: f64,
    /// Detuning tolerance as a fraction of the search half-width.
    pub x_tol_factor: f64,
    /// Fixed relative tone weights in marginal mode; empty means all ones.
    pub relative_weights: Vec<f64>,
    /// Zero-padding factor for the seeding periodogram.
    pub oversample: usize,
    /// Detuning seeds that bypass the periodogram when provided.
    pub seed_deltas: Option<Vec<f64>>,
    /// Amplitude-scale seed override (rad/s).
    pub seed_omega: Option<f64>,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        EstimationConfig {
            k_fit: 1,
            n_starts: 64,
            search_halfwidth: None,
            marginalize_amplitudes: false,
            quadrature_order: 32,
            inner_quadrature_order: 12,
            optimizer: OptimizerKind::Simplex,
            max_evaluations: 20_000,
            f_tol: 1e-10,
            x_tol_factor: 1e-8,
            relative_weights: Vec::new(),
            oversample: 4,
            seed_deltas: None,
            seed_omega: None,
        }
    }
}

impl EstimationConfig {
    fn validate(&self) -> Result<()> {
        if self.k_fit == 0 {
            return Err(CoreError::Config("k_fit must be >= 1".into()));
        }
        if self.n_starts == 0 {
            return Err(CoreError::Config("n_starts must be >= 1".into()));
        }
        if let Some(hw) = self.search_halfwidth {
            if !(hw.is_finite() && hw > 0.0) {
                return Err(CoreError::Config(format!(
                    "search half-width must be positive, got {hw}"
                )));
            }
        }
        if self.quadrature_order < 8 || self.inner_quadrature_order < 8 {
            return Err(CoreError::Config("quadrature orders must be >= 8".into()));
        }
        if !self.relative_weights.is_empty() && self.relative_weights.len() != self.k_fit {
            return Err(CoreError::Config(format!(
                "got {} relative weights for {} tones",
                self.relative_weights.len(),
                self.k_fit
            )));
        }
        if self.relative_weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(CoreError::Config("relative weights must be positive".into()));
        }
        if !(self.f_tol > 0.0 && self.x_tol_factor > 0.0) {
            return Err(CoreError::Config("tolerances must be positive".into()));
        }
        Ok(())
    }

    fn weights(&self) -> Vec<f64> {
        if self.relative_weights.is_empty() {
            vec![1.0; self.k_fit]
        } else {
            self.relative_weights.clone()
        }
    }
}

/// Outcome of one maximum-likelihood estimation run.
#[derive(Debug, Clone)]
pub struct EstimateResult {
    /// Fitted detunings, ascending.
    pub deltas: Vec<f64>,
    /// Fitted mean amplitude (marginal mode only).
    pub mean_omega: Option<f64>,
    /// Profiled per-set tone amplitudes (exact mode) in the order of
    /// `deltas`; in marginal mode the per-set shared scale is in
    /// `set_scales` instead.
    pub set_amplitudes: Option<Vec<Vec<f64>>>,
    /// Profiled shared amplitude scale per set (marginal mode).
    pub set_scales: Option<Vec<f64>>,
    /// Profiled per-set tone phases, wrapped to (-pi, pi].
    pub set_phases: Vec<Vec<f64>>,
    /// Final log-likelihood (marginal or exact, matching the mode).
    pub log_likelihood: f64,
    /// Whether the winning start's optimizer met its tolerances.
    pub converged: bool,
    /// Index of the start that won.
    pub winning_start: usize,
    /// Objective evaluations across all starts.
    pub n_evaluations: usize,
    /// Detuning seeds the starts were built from.
    pub seed_deltas: Vec<f64>,
    /// Hard search window applied to every detuning.
    pub search_window: (f64, f64),
}

/// Collapse the linearized rectangular seed onto the shared-scale
/// parametrization: per-tone polar amplitudes least-squares projected onto
/// one omega, phases kept as-is.
fn shared_scale_seed(
    basis: &SetBasis,
    outcomes: &[u8],
    gamma: f64,
    weights: &[f64],
) -> (f64, Vec<f64>) {
    let (a, b) = linearized_rect_seed(basis, outcomes, gamma);
    let (amps, phis): (Vec<f64>, Vec<f64>) =
        a.iter().zip(&b).map(|(&ai, &bi)| (ai.hypot(bi), bi.atan2(ai))).unzip();
    let num: f64 = amps.iter().zip(weights).map(|(amp, w)| amp * w).sum();
    let den: f64 = weights.iter().map(|w| w * w).sum();
    (if den > 0.0 { num / den } else { 0.0 }, phis)
}

/// Rebuild the basis only when the set length changes; in the common case of
/// equal-length sets the (delta-dependent) trig tables are computed once per
/// objective evaluation instead of once per set.
fn basis_for<'a>(
    slot: &'a mut Option<SetBasis>,
    deltas: &[f64],
    n: usize,
    tau: f64,
) -> &'a SetBasis {
    let stale = slot.as_ref().map(|b| b.n() != n).unwrap_or(true);
    if stale {
        *slot = Some(SetBasis::new(deltas, n, tau));
    }
    slot.as_ref().expect("basis was just ensured")
}

/// Exact-mode profiled objective: sum over sets of the per-set likelihood
/// maximized over rectangular tone coordinates.
///
/// Every per-set fit starts from the same deterministic linearized seed, so
/// the objective is a pure function of the detunings. (An earlier version
/// warm-started each fit from the previous objective evaluation; that made
/// the surface depend on the optimizer's visit order and let one bad basin
/// poison every later evaluation.)
fn profiled_exact(dataset: &Dataset, deltas: &[f64]) -> f64 {
    let gamma = dataset.probe.contrast();
    let mut total = 0.0;
    let mut basis = None;
    for set in &dataset.sets {
        let basis = basis_for(&mut basis, deltas, set.n(), dataset.probe.tau);
        let (a0, b0) = linearized_rect_seed(basis, &set.outcomes, gamma);
        let fit = fit_set_amplitudes(basis, &set.outcomes, gamma, Some((&a0, &b0)));
        total += fit.log_likelihood;
    }
    total
}

/// Marginal-mode profiled objective: per set, profile the phases through the
/// shared-scale exact fit, then integrate the amplitude scale out. The exact
/// fit's scale seeds the peak search of the integral, and the fits start from
/// the deterministic linearized seed for the same path-independence reason as
/// in [`profiled_exact`].
///
/// `quadrature` selects the integral evaluation: None uses the Laplace
/// approximation (optimizer inner loops), Some(order) the full rule.
fn profiled_marginal(
    dataset: &Dataset,
    deltas: &[f64],
    mean_omega: f64,
    weights: &[f64],
    quadrature: Option<usize>,
) -> Result<f64> {
    let gamma = dataset.probe.contrast();
    let sigma = (2.0 / std::f64::consts::PI).sqrt() * mean_omega;
    // Inner (Laplace) evaluations cap the per-set Newton polish hard; the
    // leftover phase error feeds the objective only at second order.
    let fit_cap = if quadrature.is_some() { 80 } else { 3 };
    let mut total = 0.0;
    let mut basis = None;
    for set in &dataset.sets {
        let basis = basis_for(&mut basis, deltas, set.n(), dataset.probe.tau);
        let (om0, ph0) = shared_scale_seed(basis, &set.outcomes, gamma, weights);
        let init = (om0 > 0.0).then_some((om0, ph0.as_slice()));
        let fit = fit_set_shared_scale(basis, &set.outcomes, gamma, weights, init, fit_cap);
        let g = basis.phase_profile(&fit.phis, weights);
        let hint = (sigma > 0.0).then_some(fit.omega / sigma);
        total += match quadrature {
            Some(order) => {
                marginal_set_log_likelihood(&g, &set.outcomes, gamma, sigma, order, hint)?
            }
            None => marginal_set_laplace(&g, &set.outcomes, gamma, sigma, hint)?,
        };
    }
    Ok(total)
}

fn sorted_with_permutation(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    (idx.iter().map(|&i| values[i]).collect(), idx)
}

/// Build the start points, all deterministic: the seed itself, every tone
/// collapsed onto `anchor`, then jittered copies of the seed alternating
/// with uniform draws over the window.
///
/// The collapsed start matters when the tones sit closer than a Fourier
/// width: the periodogram then shows one mainlobe, the secondary "peak" fed
/// into the seed is a noise bump somewhere else entirely, and a simplex
/// started from that seed converges to a spurious split about one bin wide.
/// Starting with the tones stacked on the strongest peak lets the simplex
/// discover the sub-bin separation from inside the right basin.
fn build_starts(
    seeds: &[f64],
    anchor: f64,
    window: (f64, f64),
    n_starts: usize,
    jitter_scale: f64,
) -> Vec<Vec<f64>> {
    let k = seeds.len();
    let mut rng = ChaCha12Rng::seed_from_u64(START_JITTER_SEED);
    let mut starts = Vec::with_capacity(n_starts);
    let clampw = |v: f64| v.clamp(window.0, window.1);
    starts.push(seeds.iter().map(|&s| clampw(s)).collect::<Vec<f64>>());
    for j in 1..n_starts {
        let mut point: Vec<f64> = if j == 1 {
            vec![clampw(anchor); k]
        } else if j % 2 == 0 {
            // Local starts: jitter around the seed.
            seeds
                .iter()
                .map(|&s| clampw(s + jitter_scale * (2.0 * rng.random::<f64>() - 1.0)))
                .collect()
        } else {
            // Global starts: uniform over the window.
            (0..k)
                .map(|_| window.0 + (window.1 - window.0) * rng.random::<f64>())
                .collect()
        };
        point.sort_by(f64::total_cmp);
        // Nudge coincident tones apart so the initial simplex is full rank.
        for t in 1..k {
            if point[t] - point[t - 1] < 1e-9 {
                point[t] = clampw(point[t - 1] + 1e-9);
            }
        }
        starts.push(point);
    }
    starts
}

/// Maximum-likelihood estimate of the tone detunings (and, in marginal mode,
/// the mean amplitude) for one dataset.
pub fn mle_estimate(dataset: &Dataset, config: &EstimationConfig) -> Result<EstimateResult> {
    dataset.validate()?;
    config.validate()?;
    let k = config.k_fit;
    let weights = config.weights();
    let t_set = dataset.max_set_duration();
    let halfwidth = config.search_halfwidth.unwrap_or(5.0 * TAU_CIRCLE / t_set);
    // Seed detunings: explicit override or periodogram peaks, padded by a
    // ladder around the strongest peak when fewer than k are distinct. The
    // anchor (strongest peak, or the seed centroid for overrides) doubles as
    // the collapse point for the second start.
    let (mut seeds, seed_scale, anchor) = match &config.seed_deltas {
        Some(s) => {
            if s.len() != k {
                return Err(CoreError::Config(format!(
                    "got {} seed detunings for {k} tones",
                    s.len()
                )));
            }
            (s.clone(), config.seed_omega.unwrap_or(0.1 / dataset.probe.tau), mean(s))
        }
        None => {
            let seed = spectral_seed(dataset, k, config.oversample)?;
            let mut deltas = seed.deltas.clone();
            let anchor = deltas[0];
            let fourier = TAU_CIRCLE / t_set;
            let mut rung = 1;
            while deltas.len() < k {
                let off = 0.35 * fourier * ((rung + 1) / 2) as f64;
                deltas.push(anchor + if rung % 2 == 1 { off } else { -off });
                rung += 1;
            }
            let scale = config.seed_omega.unwrap_or_else(|| {
                let s = seed.omegas[0];
                if s > 0.0 {
                    s
                } else {
                    0.1 / dataset.probe.tau
                }
            });
            (deltas, scale, anchor)
        }
    };
    seeds.sort_by(f64::total_cmp);
    let center = mean(&seeds);
    let window = (
        seeds[0].min(center) - halfwidth,
        seeds[k - 1].max(center) + halfwidth,
    );
    let fourier = TAU_CIRCLE / t_set;
    let starts = build_starts(&seeds, anchor, window, config.n_starts, 0.5 * fourier);
    let in_window = |deltas: &[f64]| deltas.iter().all(|d| *d >= window.0 && *d <= window.1);

    let dim = if config.marginalize_amplitudes { k + 1 } else { k };
    let x_tol_delta = config.x_tol_factor * halfwidth;
    let mut best: Option<(OptimResult, usize)> = None;
    let mut total_evals = 0usize;
    for (si, start) in starts.iter().enumerate() {
        let mut x0 = start.clone();
        if config.marginalize_amplitudes {
            x0.push(seed_scale.max(1e-6 / dataset.probe.tau));
        }
        let run = match config.optimizer {
            OptimizerKind::Simplex => {
                let mut initial_step = vec![0.25 * fourier; k];
                let mut x_tol = vec![x_tol_delta; k];
                if config.marginalize_amplitudes {
                    initial_step.push(0.3 * x0[k].max(1e-3 / dataset.probe.tau));
                    x_tol.push(config.x_tol_factor * x0[k].max(1e-3 / dataset.probe.tau));
                }
                let opts = SimplexOptions {
                    max_evaluations: config.max_evaluations,
                    f_tol: config.f_tol,
                    x_tol,
                    initial_step,
                };
                let objective = |x: &[f64]| -> f64 {
                    let deltas = &x[..k];
                    if !in_window(deltas) {
                        return f64::INFINITY;
                    }
                    if config.marginalize_amplitudes {
                        let mo = x[k];
                        if !(mo.is_finite() && mo >= 0.0) {
                            return f64::INFINITY;
                        }
                        match profiled_marginal(dataset, deltas, mo, &weights, None) {
                            Ok(v) => -v,
                            Err(_) => f64::INFINITY,
                        }
                    } else {
                        -profiled_exact(dataset, deltas)
                    }
                };
                nelder_mead(objective, &x0, &opts)?
            }
            OptimizerKind::Gradient => {
                let opts = GradientOptions {
                    max_evaluations: config.max_evaluations,
                    g_tol: 1e-7,
                    f_tol: config.f_tol,
                };
                let fg = |x: &[f64]| -> (f64, Vec<f64>) {
                    let deltas = &x[..k];
                    if !in_window(deltas) {
                        return (f64::INFINITY, vec![0.0; dim]);
                    }
                    match envelope_value_grad(dataset, config, deltas, x, &weights) {
                        Ok((v, g)) => (-v, g.iter().map(|gi| -gi).collect()),
                        Err(_) => (f64::INFINITY, vec![0.0; dim]),
                    }
                };
                bfgs(fg, &x0, &opts)?
            }
        };
        total_evals += run.evaluations;
        // Final value at the full quadrature order so starts are compared on
        // an equal footing.
        let refreshed = refresh_value(dataset, config, &run.x, &weights)?;
        let run = OptimResult { f: -refreshed, ..run };
        let better = match &best {
            None => true,
            Some((b, _)) => run.f < b.f,
        };
        if better {
            best = Some((run, si));
        }
    }
    let (winner, winning_start) = best.expect("at least one start");
    // Rebuild the profiled nuisances at the winning point.
    let deltas_raw = winner.x[..k].to_vec();
    let final_ll = refresh_value(dataset, config, &winner.x, &weights)?;
    let (deltas, perm) = sorted_with_permutation(&deltas_raw);
    let gamma = dataset.probe.contrast();
    let mut set_phases = Vec::with_capacity(dataset.n_sets());
    let mut set_amplitudes = Vec::new();
    let mut set_scales = Vec::new();
    for set in &dataset.sets {
        let basis = SetBasis::new(&deltas_raw, set.n(), dataset.probe.tau);
        if config.marginalize_amplitudes {
            let fit = fit_set_shared_scale(&basis, &set.outcomes, gamma, &weights, None, 80);
            set_scales.push(fit.omega);
            set_phases.push(perm.iter().map(|&i| fit.phis[i]).collect());
        } else {
            let fit = fit_set_amplitudes(&basis, &set.outcomes, gamma, None);
            let (amps, phis) = fit.polar();
            set_amplitudes.push(perm.iter().map(|&i| amps[i]).collect());
            set_phases.push(perm.iter().map(|&i| phis[i]).collect());
        }
    }
    Ok(EstimateResult {
        deltas,
        mean_omega: config.marginalize_amplitudes.then(|| winner.x[k].abs()),
        set_amplitudes: (!config.marginalize_amplitudes).then_some(set_amplitudes),
        set_scales: config.marginalize_amplitudes.then_some(set_scales),
        set_phases,
        log_likelihood: final_ll,
        converged: winner.converged,
        winning_start,
        n_evaluations: total_evals,
        seed_deltas: seeds,
        search_window: window,
    })
}

/// Full-order objective value at an optimizer point.
fn refresh_value(
    dataset: &Dataset,
    config: &EstimationConfig,
    x: &[f64],
    weights: &[f64],
) -> Result<f64> {
    let k = config.k_fit;
    if config.marginalize_amplitudes {
        profiled_marginal(dataset, &x[..k], x[k].abs(), weights, Some(config.quadrature_order))
    } else {
        Ok(profiled_exact(dataset, &x[..k]))
    }
}

/// Profiled objective value and envelope gradient over the outer parameters.
/// By the envelope theorem the gradient of the profiled objective equals the
/// partial gradient at the fitted nuisances.
fn envelope_value_grad(
    dataset: &Dataset,
    config: &EstimationConfig,
    deltas: &[f64],
    x: &[f64],
    weights: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let k = config.k_fit;
    let gamma = dataset.probe.contrast();
    if config.marginalize_amplitudes {
        let mo = x[k];
        let mut phis = Vec::with_capacity(dataset.n_sets());
        let mut basis_slot = None;
        for set in &dataset.sets {
            let basis = basis_for(&mut basis_slot, deltas, set.n(), dataset.probe.tau);
            let (om0, ph0) = shared_scale_seed(basis, &set.outcomes, gamma, weights);
            let init = (om0 > 0.0).then_some((om0, ph0.as_slice()));
            let fit = fit_set_shared_scale(basis, &set.outcomes, gamma, weights, init, 80);
            phis.push(fit.phis);
        }
        let mut params = ParamVector::marginal(deltas.to_vec(), mo, phis);
        if let crate::params::Amplitudes::Marginal { weights: w, .. } = &mut params.amplitudes {
            *w = weights.to_vec();
        }
        let (value, grad) = marginal_log_likelihood_gradient(
            dataset,
            &params,
            config.inner_quadrature_order,
        )?;
        let layout = params.layout();
        let mut out = vec![0.0; k + 1];
        for tone in 0..k {
            out[tone] = grad[layout.delta_index(tone)];
        }
        out[k] = grad[layout.mean_omega_index().expect("marginal layout")];
        Ok((value, out))
    } else {
        let mut omegas = Vec::with_capacity(dataset.n_sets());
        let mut phis = Vec::with_capacity(dataset.n_sets());
        let mut basis_slot = None;
        for set in &dataset.sets {
            let basis = basis_for(&mut basis_slot, deltas, set.n(), dataset.probe.tau);
            let (a0, b0) = linearized_rect_seed(basis, &set.outcomes, gamma);
            let fit = fit_set_amplitudes(basis, &set.outcomes, gamma, Some((&a0, &b0)));
            let (om, ph) = fit.polar();
            omegas.push(om);
            phis.push(ph);
        }
        let params = ParamVector::per_set(deltas.to_vec(), omegas, phis);
        let (value, grad) = log_likelihood_gradient(dataset, &params)?;
        let layout = params.layout();
        let out = (0..k).map(|tone| grad[layout.delta_index(tone)]).collect();
        Ok((value, out))
    }
}

/// Summary statistics over repeated estimates (one per resampled dataset).
#[derive(Debug, Clone)]
pub struct ResampleSummary {
    pub estimates: Vec<EstimateResult>,
    /// Mean fitted detuning per tone (ascending tone order).
    pub mean_deltas: Vec<f64>,
    /// Sample standard deviation per tone.
    pub sd_deltas: Vec<f64>,
    /// Mean and SD of the first-to-last tone separation (two or more tones).
    pub mean_separation: Option<f64>,
    pub sd_separation: Option<f64>,
}

/// Run the estimator over each dataset and summarize the spread.
pub fn estimate_over_resamples(
    datasets: &[Dataset],
    config: &EstimationConfig,
) -> Result<ResampleSummary> {
    if datasets.is_empty() {
        return Err(CoreError::Config("need at least one dataset to estimate over".into()));
    }
    let estimates: Vec<EstimateResult> =
        datasets.iter().map(|ds| mle_estimate(ds, config)).collect::<Result<_>>()?;
    let k = config.k_fit;
    let mut mean_deltas = Vec::with_capacity(k);
    let mut sd_deltas = Vec::with_capacity(k);
    for tone in 0..k {
        let vals: Vec<f64> = estimates.iter().map(|e| e.deltas[tone]).collect();
        mean_deltas.push(mean(&vals));
        sd_deltas.push(sample_sd(&vals).unwrap_or(0.0));
    }
    let (mean_separation, sd_separation) = if k >= 2 {
        let seps: Vec<f64> = estimates.iter().map(|e| e.deltas[k - 1] - e.deltas[0]).collect();
        (Some(mean(&seps)), sample_sd(&seps))
    } else {
        (None, None)
    };
    Ok(ResampleSummary { estimates, mean_deltas, sd_deltas, mean_separation, sd_separation })
}

/// Operational resolution call: the tones count as resolved when the mean
/// fitted separation exceeds its spread across resampled estimates.
#[derive(Debug, Clone)]
pub struct ResolutionDecision {
    pub resolved: bool,
    pub mean_separation: f64,
    pub sd_separation: f64,
}

pub fn resolution_decision(summary: &ResampleSummary) -> Result<ResolutionDecision> {
    let mean_sep = summary
        .mean_separation
        .ok_or_else(|| CoreError::Config("resolution needs a two-tone fit".into()))?;
    let sd_sep = summary
        .sd_separation
        .ok_or_else(|| CoreError::Config("resolution needs at least two resamples".into()))?;
    Ok(ResolutionDecision { resolved: mean_sep > sd_sep, mean_separation: mean_sep, sd_separation: sd_sep })
}
