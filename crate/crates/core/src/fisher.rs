//! Fisher information and Cramer-Rao bounds for the tone model.
//!
//! Three routes to the information matrix:
//!   * [`fisher_exact`]: closed-form expectation for the exact Bernoulli
//!     model with fixed per-set amplitudes and phases.
//!   * [`fisher_linearized`]: the weak-signal limit, where the detection
//!     probability stays near one half and the information reduces to
//!     4 gamma^2 times the Gram matrix of accumulated-phase derivatives.
//!   * [`fisher_marginal`]: Monte Carlo estimate for the amplitude-
//!     marginalized model, assembled per set from outer products of
//!     simulated scores (cross-set blocks vanish by independence).
//!
//! Inversion goes through a symmetric eigendecomposition so near-singular
//! designs degrade into an explicit pseudo-inverse with the null space
//! reported, instead of blowing up silently.

use nalgebra::{DMatrix, DVector};

use crate::dataset::{AmplitudeModel, PhaseModel, SignalModel};
use crate::error::{CoreError, Result};
use crate::likelihood::{marginal_set_score, SetBasis};
use crate::params::{ParamLayout, ParamVector};
use crate::signal::{dsinc, sinc, ProbeConfig};
use crate::sim::simulate_dataset;
use crate::spectrum::line_fit_slope;

/// Eigenvalue cutoff for the pseudo-inverse, relative to the largest one.
const RANK_TOL: f64 = 1e-10;

/// Rank/null-space report attached when the information matrix is singular.
#[derive(Debug, Clone)]
pub struct SingularInfo {
    pub rank: usize,
    /// Orthonormal basis of the (numerical) null space, one vector per row.
    pub null_space: Vec<Vec<f64>>,
}

/// Information matrix, its (pseudo-)inverse, and derived bounds.
#[derive(Debug, Clone)]
pub struct FisherResult {
    pub layout: ParamLayout,
    pub info: DMatrix<f64>,
    pub covariance: DMatrix<f64>,
    pub used_pseudo_inverse: bool,
    /// Ratio of extreme eigenvalues of `info` (infinite when singular).
    pub condition_number: f64,
    /// Lower bound on the standard deviation of each parameter,
    /// sqrt of the covariance diagonal.
    pub crb_sd: Vec<f64>,
    pub singular: Option<SingularInfo>,
    /// Batch standard errors on the diagonal of `info`; Monte Carlo only.
    pub mc_se: Option<Vec<f64>>,
}

/// Invert a symmetric PSD information matrix through its SVD, dropping
/// directions below `RANK_TOL` times the top singular value. SVD rather
/// than a symmetric eigensolver: repeated eigenvalues are routine here
/// (identical sets produce them by symmetry), and the SVD keeps the
/// factor columns orthogonal through such clusters.
///
/// The matrix is first equilibrated to unit diagonal. Parameters carry
/// wildly different units (a detuning row can sit ten orders above a phase
/// row without any true degeneracy), so rank decisions on the raw singular
/// values would throw away well-determined directions. In the scaled matrix
/// a small singular value means an actual near-degeneracy.
fn invert_info(layout: ParamLayout, info: DMatrix<f64>, mc_se: Option<Vec<f64>>) -> FisherResult {
    let dim = info.nrows();
    // s[i] = sqrt of the diagonal; an exactly uninformative parameter has a
    // zero row (PSD forces |I_ij| <= sqrt(I_ii I_jj)) and keeps scale one.
    let s: Vec<f64> =
        (0..dim).map(|i| if info[(i, i)] > 0.0 { info[(i, i)].sqrt() } else { 1.0 }).collect();
    let mut scaled = info.clone();
    for r in 0..dim {
        for c in 0..dim {
            scaled[(r, c)] /= s[r] * s[c];
        }
    }
    let svd = scaled.svd(true, true);
    let max_sv = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    let tol = RANK_TOL * max_sv.max(f64::MIN_POSITIVE);
    let u = svd.u.as_ref().expect("svd with u");
    let v_t = svd.v_t.as_ref().expect("svd with v_t");
    let mut covariance = DMatrix::<f64>::zeros(dim, dim);
    let mut rank = 0usize;
    let mut min_kept = f64::INFINITY;
    let mut null_space = Vec::new();
    for (j, &sv) in svd.singular_values.iter().enumerate() {
        if sv > tol {
            rank += 1;
            min_kept = min_kept.min(sv);
            for r in 0..dim {
                let vr = v_t[(j, r)] / sv;
                for c in 0..dim {
                    covariance[(r, c)] += vr * u[(c, j)];
                }
            }
        } else {
            // Null direction of the scaled matrix; unscale and renormalize.
            let mut v: Vec<f64> = (0..dim).map(|r| v_t[(j, r)] / s[r]).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                for x in &mut v {
                    *x /= norm;
                }
            }
            null_space.push(v);
        }
    }
    // Undo the equilibration: cov(info) = S^-1 cov(scaled) S^-1.
    for r in 0..dim {
        for c in 0..dim {
            covariance[(r, c)] /= s[r] * s[c];
        }
    }
    // Rounding can leave the pseudo-inverse slightly asymmetric; fold it
    // back onto the symmetric part.
    for r in 0..dim {
        for c in 0..r {
            let sym = 0.5 * (covariance[(r, c)] + covariance[(c, r)]);
            covariance[(r, c)] = sym;
            covariance[(c, r)] = sym;
        }
    }
    let used_pseudo_inverse = rank < dim;
    let condition_number = if used_pseudo_inverse || max_sv == 0.0 {
        f64::INFINITY
    } else {
        max_sv / min_kept
    };
    let crb_sd = (0..dim).map(|i| covariance[(i, i)].max(0.0).sqrt()).collect();
    let singular = used_pseudo_inverse.then_some(SingularInfo { rank, null_space });
    FisherResult {
        layout,
        info,
        covariance,
        used_pseudo_inverse,
        condition_number,
        crb_sd,
        singular,
        mc_se,
    }
}

/// Accumulated-phase gradient of set `set_index` at within-set time `t`,
/// written into the flat layout (delta, amplitude, and phase slots of this
/// set only).
fn phase_gradient_into(
    params: &ParamVector,
    layout: &ParamLayout,
    set_index: usize,
    t: f64,
    tau: f64,
    grad: &mut [f64],
) {
    grad.fill(0.0);
    let omegas = params.set_omegas(set_index);
    let phis = &params.phis[set_index];
    for k in 0..layout.k {
        let x = params.deltas[k] * tau / 2.0;
        let (snc, dsnc) = (sinc(x), dsinc(x));
        let arg = params.deltas[k] * t + phis[k];
        let (sin_arg, cos_arg) = arg.sin_cos();
        grad[layout.delta_index(k)] =
            omegas[k] * tau * (dsnc * (tau / 2.0) * cos_arg - snc * t * sin_arg);
        if let Some(idx) = layout.omega_index(set_index, k) {
            grad[idx] = tau * snc * cos_arg;
        }
        grad[layout.phi_index(set_index, k)] = -omegas[k] * tau * snc * sin_arg;
    }
}

fn accumulate_outer(info: &mut DMatrix<f64>, g: &[f64], weight: f64) {
    let dim = g.len();
    for r in 0..dim {
        if g[r] == 0.0 {
            continue;
        }
        let wr = weight * g[r];
        for c in r..dim {
            info[(r, c)] += wr * g[c];
        }
    }
}

fn mirror_lower(info: &mut DMatrix<f64>) {
    let dim = info.nrows();
    for r in 0..dim {
        for c in 0..r {
            info[(r, c)] = info[(c, r)];
        }
    }
}

fn checked_per_set(params: &ParamVector, n_measurements: usize) -> Result<ParamLayout> {
    if params.is_marginal() {
        return Err(CoreError::Layout(
            "closed-form information needs per-set amplitudes; use the Monte Carlo route for the marginal model".into(),
        ));
    }
    if n_measurements == 0 {
        return Err(CoreError::Config("need at least one measurement per set".into()));
    }
    // Unlike the estimator, information queries at coincident tones are
    // legitimate: that limit is exactly the singular case the pseudo-inverse
    // reports. So shapes are checked here without the ascending-deltas rule
    // the full validator enforces.
    let k = params.n_tones();
    let l = params.n_sets();
    if k == 0 || l == 0 {
        return Err(CoreError::Config("need at least one tone and one set".into()));
    }
    if params.deltas.iter().any(|d| !d.is_finite()) {
        return Err(CoreError::Config("deltas must be finite".into()));
    }
    let omegas = match &params.amplitudes {
        crate::params::Amplitudes::PerSet(o) => o,
        _ => unreachable!("marginal rejected above"),
    };
    if omegas.len() != l || params.phis.len() != l {
        return Err(CoreError::Layout(format!(
            "amplitude and phase tables must both have {l} rows"
        )));
    }
    for set in 0..l {
        if omegas[set].len() != k || params.phis[set].len() != k {
            return Err(CoreError::Layout(format!("set {set} must carry {k} tones")));
        }
        if omegas[set].iter().chain(params.phis[set].iter()).any(|v| !v.is_finite()) {
            return Err(CoreError::Config(format!("set {set} has non-finite parameters")));
        }
    }
    Ok(params.layout())
}

/// Expected information of the exact Bernoulli model: every set measures at
/// within-set times i*tau for i < `n_measurements`. The per-outcome weight
/// is written as 4 gamma^2 cos^2(2 phi) / (1 - gamma^2 sin^2(2 phi)), which
/// stays finite where p(1-p) and (dp)^2 vanish together at unit contrast.
pub fn fisher_exact(
    params: &ParamVector,
    probe: &ProbeConfig,
    n_measurements: usize,
) -> Result<FisherResult> {
    let layout = checked_per_set(params, n_measurements)?;
    let gamma = probe.contrast();
    let tau = probe.tau;
    let dim = layout.len();
    let mut info = DMatrix::<f64>::zeros(dim, dim);
    let mut g = vec![0.0; dim];
    for set in 0..layout.l {
        let omegas = params.set_omegas(set);
        let phis = &params.phis[set];
        for i in 0..n_measurements {
            let t = i as f64 * tau;
            let phase =
                crate::signal::accumulated_phase(&params.deltas, &omegas, phis, t, tau);
            let (s2, c2) = (2.0 * phase).sin_cos();
            let denom = 1.0 - gamma * gamma * s2 * s2;
            let weight = 4.0 * gamma * gamma * c2 * c2 / denom.max(f64::MIN_POSITIVE);
            phase_gradient_into(params, &layout, set, t, tau, &mut g);
            accumulate_outer(&mut info, &g, weight);
        }
    }
    mirror_lower(&mut info);
    Ok(invert_info(layout, info, None))
}

/// Weak-signal information: probability pinned at one half, weight
/// 4 gamma^2 on every accumulated-phase gradient outer product. Exposes the
/// rank structure of the design (coincident tones collapse pairs of
/// amplitude and phase directions).
pub fn fisher_linearized(
    params: &ParamVector,
    probe: &ProbeConfig,
    n_measurements: usize,
) -> Result<FisherResult> {
    let layout = checked_per_set(params, n_measurements)?;
    let gamma = probe.contrast();
    let tau = probe.tau;
    let dim = layout.len();
    let mut info = DMatrix::<f64>::zeros(dim, dim);
    let mut g = vec![0.0; dim];
    let weight = 4.0 * gamma * gamma;
    for set in 0..layout.l {
        for i in 0..n_measurements {
            let t = i as f64 * tau;
            phase_gradient_into(params, &layout, set, t, tau, &mut g);
            accumulate_outer(&mut info, &g, weight);
        }
    }
    mirror_lower(&mut info);
    Ok(invert_info(layout, info, None))
}

/// Monte Carlo information for the amplitude-marginalized model: simulate
/// `n_datasets` datasets at the given parameters, score each with the
/// marginal quadrature, and average the score outer products. Standard
/// errors on the information diagonal come from a four-way batch split.
pub fn fisher_marginal(
    params: &ParamVector,
    probe: &ProbeConfig,
    n_measurements: usize,
    n_datasets: usize,
    order: usize,
    seed: u64,
) -> Result<FisherResult> {
    let (mean_omega, weights) = match &params.amplitudes {
        crate::params::Amplitudes::Marginal { mean_omega, weights } => {
            (*mean_omega, weights.clone())
        }
        _ => {
            return Err(CoreError::Layout(
                "Monte Carlo information needs a marginal parameter vector".into(),
            ))
        }
    };
    if weights.iter().any(|w| (*w - 1.0).abs() > 1e-12) {
        return Err(CoreError::Config(
            "Monte Carlo information supports unit relative weights only".into(),
        ));
    }
    if n_datasets < 8 {
        return Err(CoreError::Config("need at least 8 Monte Carlo datasets".into()));
    }
    params.validate(params.n_sets())?;
    let layout = params.layout();
    let n_sets = layout.l;
    if probe.shots_per_point as usize > n_measurements
        || n_measurements % probe.shots_per_point as usize != 0
    {
        return Err(CoreError::Config(format!(
            "{n_measurements} measurements per set is not a multiple of {} shots",
            probe.shots_per_point
        )));
    }
    let gamma = probe.contrast();
    let dim = layout.len();
    let kk = layout.k;
    // Scores of different sets are independent with zero mean at the truth,
    // so every cross-set block of E[s s^T] vanishes exactly. Estimating the
    // full outer product from n_datasets replicas would cap the matrix rank
    // at n_datasets; assembling it from per-set (2k+1)-dimensional blocks
    // instead keeps each block estimate well conditioned and zeroes the
    // cross terms by construction.
    let local_dim = 2 * kk + 1;
    let mean_idx = layout.mean_omega_index().expect("marginal layout");
    let mut info = DMatrix::<f64>::zeros(dim, dim);
    let mut batch_diag = vec![DVector::<f64>::zeros(dim); 4];
    let mut batch_counts = [0usize; 4];
    for (b, count) in batch_counts.iter_mut().enumerate() {
        *count = (n_datasets + 3 - b) / 4;
    }
    // One basis per set shape; all sets share the same grid here.
    let basis = SetBasis::new(&params.deltas, n_measurements, probe.tau);
    let mut local = vec![0.0; local_dim];
    for set in 0..n_sets {
        let mut gidx = Vec::with_capacity(local_dim);
        gidx.extend((0..kk).map(|t| layout.delta_index(t)));
        gidx.push(mean_idx);
        gidx.extend((0..kk).map(|t| layout.phi_index(set, t)));
        let mut acc = DMatrix::<f64>::zeros(local_dim, local_dim);
        let mut acc_batch = vec![DMatrix::<f64>::zeros(local_dim, local_dim); 4];
        for m in 0..n_datasets {
            // Each replica draws fresh outcomes at this set's fixed phases
            // and the shared Rayleigh amplitude scale of the marginal model.
            let model = SignalModel {
                deltas: params.deltas.clone(),
                amplitude: AmplitudeModel::Rayleigh { mean: mean_omega },
                phase: PhaseModel::Fixed(params.phis[set].clone()),
                t_phi: (n_measurements as f64 + 1.0) * probe.tau,
                n_per_set: (n_measurements / probe.shots_per_point as usize) as u32,
                n_sets: 1,
            };
            let ds = simulate_dataset(
                &model,
                probe,
                seed ^ (0x9e37_79b9_7f4a_7c15u64
                    .wrapping_mul(1 + m as u64 * n_sets as u64 + set as u64)),
            )?;
            let s = marginal_set_score(
                &basis,
                &ds.sets[0].outcomes,
                &params.phis[set],
                &weights,
                gamma,
                mean_omega,
                order,
            )
            .map_err(|e| {
                CoreError::Quadrature(format!(
                    "marginal score failed during Monte Carlo information: {e}"
                ))
            })?;
            local[..kk].copy_from_slice(&s.d_deltas);
            local[kk] = s.d_mean_omega;
            local[kk + 1..].copy_from_slice(&s.d_phis);
            for a in 0..local_dim {
                for c in 0..local_dim {
                    acc[(a, c)] += local[a] * local[c];
                }
            }
            let bacc = &mut acc_batch[m % 4];
            for a in 0..local_dim {
                for c in 0..local_dim {
                    bacc[(a, c)] += local[a] * local[c];
                }
            }
        }
        for a in 0..local_dim {
            for c in 0..local_dim {
                info[(gidx[a], gidx[c])] += acc[(a, c)] / n_datasets as f64;
            }
            for (b, bacc) in acc_batch.iter().enumerate() {
                batch_diag[b][gidx[a]] += bacc[(a, a)] / batch_counts[b].max(1) as f64;
            }
        }
    }
    // Batch SE of the diagonal: spread of the four batch means over sqrt(4).
    let mut mc_se = vec![0.0; dim];
    for i in 0..dim {
        let grand = (0..4).map(|b| batch_diag[b][i]).sum::<f64>() / 4.0;
        let var = (0..4).map(|b| (batch_diag[b][i] - grand).powi(2)).sum::<f64>() / 3.0;
        mc_se[i] = (var / 4.0).sqrt();
    }
    Ok(invert_info(layout, info, Some(mc_se)))
}

/// Cramer-Rao bound on the separation between the first and last tone.
#[derive(Debug, Clone)]
pub struct SeparationCrb {
    /// Lower bound on the SD of (delta_last - delta_first).
    pub sd: f64,
    /// True when the separation direction overlaps the null space, so no
    /// finite bound exists.
    pub unbounded: bool,
}

pub fn crb_of_separation(fisher: &FisherResult) -> Result<SeparationCrb> {
    let k = fisher.layout.k;
    if k < 2 {
        return Err(CoreError::Config("separation needs at least two tones".into()));
    }
    let dim = fisher.layout.len();
    let mut v = DVector::<f64>::zeros(dim);
    v[fisher.layout.delta_index(k - 1)] = 1.0;
    v[fisher.layout.delta_index(0)] = -1.0;
    let mut unbounded = false;
    if let Some(sing) = &fisher.singular {
        for row in &sing.null_space {
            let overlap: f64 = row.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
            if overlap.abs() > 1e-8 * v.norm() {
                unbounded = true;
            }
        }
    }
    let var = (v.transpose() * &fisher.covariance * &v)[(0, 0)];
    Ok(SeparationCrb { sd: var.max(0.0).sqrt(), unbounded })
}

/// One grid point of a scaling study: the swept quantity and the frequency
/// bound there.
#[derive(Debug, Clone, Copy)]
pub struct ScalingPoint {
    pub x: f64,
    pub crb_sd: f64,
}

/// Log-log slopes of the single-tone frequency bound against record length,
/// averaging count, and signal amplitude.
#[derive(Debug, Clone)]
pub struct ScalingSlopes {
    pub duration: Vec<ScalingPoint>,
    /// d ln CRB / d ln T_set.
    pub duration_slope: f64,
    pub sets: Vec<ScalingPoint>,
    /// d ln CRB / d ln n_sets.
    pub sets_slope: f64,
    pub amplitude: Vec<ScalingPoint>,
    /// d ln CRB / d ln Omega.
    pub amplitude_slope: f64,
}

/// Sweep the closed-form frequency bound over record duration, number of
/// averaged sets, and tone amplitude. Amplitude and phase are treated as
/// unknown per set throughout, so the bound is the profiled one.
pub fn frequency_crb_scaling(
    probe: &ProbeConfig,
    delta: f64,
    omega: f64,
    phi: f64,
    duration_grid: &[usize],
    sets_grid: &[usize],
    amplitude_grid: &[f64],
) -> Result<ScalingSlopes> {
    if duration_grid.len() < 2 || sets_grid.len() < 2 || amplitude_grid.len() < 2 {
        return Err(CoreError::Config("scaling grids need at least two points".into()));
    }
    let crb_delta = |n_meas: usize, n_sets: usize, om: f64| -> Result<f64> {
        let params = ParamVector::per_set(
            vec![delta],
            vec![vec![om]; n_sets],
            vec![vec![phi]; n_sets],
        );
        let f = fisher_exact(&params, probe, n_meas)?;
        if f.used_pseudo_inverse {
            return Err(CoreError::Config(
                "scaling sweep hit a singular design; adjust the grids".into(),
            ));
        }
        Ok(f.crb_sd[f.layout.delta_index(0)])
    };
    let base_n = duration_grid[0];
    let base_sets = sets_grid[0];
    let mut duration = Vec::with_capacity(duration_grid.len());
    for &n in duration_grid {
        duration.push(ScalingPoint {
            x: n as f64 * probe.tau,
            crb_sd: crb_delta(n, base_sets, omega)?,
        });
    }
    let mut sets = Vec::with_capacity(sets_grid.len());
    for &l in sets_grid {
        sets.push(ScalingPoint { x: l as f64, crb_sd: crb_delta(base_n, l, omega)? });
    }
    let mut amplitude = Vec::with_capacity(amplitude_grid.len());
    for &om in amplitude_grid {
        amplitude.push(ScalingPoint { x: om, crb_sd: crb_delta(base_n, base_sets, om)? });
    }
    let slope_of = |pts: &[ScalingPoint]| -> f64 {
        let xs: Vec<f64> = pts.iter().map(|p| p.x.ln()).collect();
        let ys: Vec<f64> = pts.iter().map(|p| p.crb_sd.ln()).collect();
        line_fit_slope(&xs, &ys).0
    };
    Ok(ScalingSlopes {
        duration_slope: slope_of(&duration),
        duration,
        sets_slope: slope_of(&sets),
        sets,
        amplitude_slope: slope_of(&amplitude),
        amplitude,
    })
}
