//! Derivative-free and quasi-Newton minimizers for the outer estimation
//! loop. Both are deterministic: rerunning with the same inputs reproduces
//! the same iterates bit for bit.

use crate::error::{CoreError, Result};

/// Options for the downhill simplex method.
#[derive(Debug, Clone)]
pub struct SimplexOptions {
    /// Hard cap on objective evaluations.
    pub max_evaluations: usize,
    /// Converged when (f_worst - f_best) <= f_tol * (1 + |f_best|) ...
    pub f_tol: f64,
    /// ... and the vertex spread in every dimension d is <= x_tol[d].
    pub x_tol: Vec<f64>,
    /// Displacement of the d-th initial vertex from the start point.
    pub initial_step: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub evaluations: usize,
    pub converged: bool,
}

/// Downhill simplex (Nelder-Mead) minimization with the standard
/// reflection/expansion/contraction/shrink moves.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    opts: &SimplexOptions,
) -> Result<OptimResult> {
    let dim = x0.len();
    if dim == 0 {
        return Err(CoreError::Config("simplex needs at least one dimension".into()));
    }
    if opts.x_tol.len() != dim || opts.initial_step.len() != dim {
        return Err(CoreError::Config(format!(
            "simplex tolerances and steps must have dimension {dim}"
        )));
    }
    if opts.initial_step.iter().any(|s| *s == 0.0 || !s.is_finite()) {
        return Err(CoreError::Config("simplex initial steps must be nonzero and finite".into()));
    }
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| -> f64 {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    // Vertices plus cached objective values, kept sorted best-first.
    let mut verts: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    let fx0 = eval(x0, &mut evals);
    verts.push((x0.to_vec(), fx0));
    for d in 0..dim {
        let mut v = x0.to_vec();
        v[d] += opts.initial_step[d];
        let fv = eval(&v, &mut evals);
        verts.push((v, fv));
    }
    let mut converged = false;
    while evals < opts.max_evaluations {
        verts.sort_by(|p, q| p.1.total_cmp(&q.1));
        let best = verts[0].1;
        let worst = verts[dim].1;
        let f_ok = (worst - best).abs() <= opts.f_tol * (1.0 + best.abs());
        let x_ok = (0..dim).all(|d| {
            let lo = verts.iter().map(|v| v.0[d]).fold(f64::INFINITY, f64::min);
            let hi = verts.iter().map(|v| v.0[d]).fold(f64::NEG_INFINITY, f64::max);
            hi - lo <= opts.x_tol[d]
        });
        if f_ok && x_ok {
            converged = true;
            break;
        }
        // Centroid of all but the worst vertex.
        let mut centroid = vec![0.0; dim];
        for v in verts.iter().take(dim) {
            for d in 0..dim {
                centroid[d] += v.0[d] / dim as f64;
            }
        }
        let blend = |alpha: f64| -> Vec<f64> {
            (0..dim).map(|d| centroid[d] + alpha * (verts[dim].0[d] - centroid[d])).collect()
        };
        let reflected = blend(-1.0);
        let fr = eval(&reflected, &mut evals);
        if fr < verts[0].1 {
            let expanded = blend(-2.0);
            let fe = eval(&expanded, &mut evals);
            verts[dim] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
            continue;
        }
        if fr < verts[dim - 1].1 {
            verts[dim] = (reflected, fr);
            continue;
        }
        // Contract toward the better of the worst vertex and its reflection.
        let contracted = if fr < verts[dim].1 { blend(-0.5) } else { blend(0.5) };
        let fc = eval(&contracted, &mut evals);
        if fc < verts[dim].1.min(fr) {
            verts[dim] = (contracted, fc);
            continue;
        }
        // Shrink everything toward the best vertex.
        let anchor = verts[0].0.clone();
        for i in 1..=dim {
            for d in 0..dim {
                verts[i].0[d] = anchor[d] + 0.5 * (verts[i].0[d] - anchor[d]);
            }
            let fv = eval(&verts[i].0, &mut evals);
            verts[i].1 = fv;
        }
    }
    verts.sort_by(|p, q| p.1.total_cmp(&q.1));
    Ok(OptimResult { x: verts[0].0.clone(), f: verts[0].1, evaluations: evals, converged })
}

/// Options for the quasi-Newton minimizer.
#[derive(Debug, Clone)]
pub struct GradientOptions {
    pub max_evaluations: usize,
    /// Converged when the gradient's max-abs entry drops below this.
    pub g_tol: f64,
    /// ... or a full accepted step improves f by less than
    /// f_tol * (1 + |f|).
    pub f_tol: f64,
}

/// BFGS with a backtracking Armijo line search, maintaining the inverse
/// Hessian approximation directly.
pub fn bfgs<F: FnMut(&[f64]) -> (f64, Vec<f64>)>(
    mut fg: F,
    x0: &[f64],
    opts: &GradientOptions,
) -> Result<OptimResult> {
    let dim = x0.len();
    if dim == 0 {
        return Err(CoreError::Config("bfgs needs at least one dimension".into()));
    }
    let mut evals = 1usize;
    let mut x = x0.to_vec();
    let (mut fx, mut gx) = fg(&x);
    // Inverse Hessian estimate, dense row-major; starts as the identity.
    let mut h = vec![0.0; dim * dim];
    for d in 0..dim {
        h[d * dim + d] = 1.0;
    }
    let mut converged = false;
    while evals < opts.max_evaluations {
        let gnorm = gx.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if gnorm < opts.g_tol {
            converged = true;
            break;
        }
        // Search direction d = -H g.
        let mut dir = vec![0.0; dim];
        for r in 0..dim {
            let mut acc = 0.0;
            for c in 0..dim {
                acc += h[r * dim + c] * gx[c];
            }
            dir[r] = -acc;
        }
        let mut slope: f64 = dir.iter().zip(&gx).map(|(d, g)| d * g).sum();
        if slope >= 0.0 {
            // Reset a corrupted curvature model to steepest descent.
            for v in h.iter_mut() {
                *v = 0.0;
            }
            for d in 0..dim {
                h[d * dim + d] = 1.0;
                dir[d] = -gx[d];
            }
            slope = -gx.iter().map(|g| g * g).sum::<f64>();
            if slope == 0.0 {
                converged = true;
                break;
            }
        }
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            if evals >= opts.max_evaluations {
                break;
            }
            let xt: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + alpha * di).collect();
            let (ft, gt) = fg(&xt);
            evals += 1;
            if ft <= fx + 1e-4 * alpha * slope {
                accepted = Some((xt, ft, gt));
                break;
            }
            alpha *= 0.5;
        }
        let Some((xt, ft, gt)) = accepted else {
            // The model made no progress at the smallest step; treat the
            // current point as final.
            converged = gx.iter().fold(0.0f64, |m, v| m.max(v.abs())) < opts.g_tol.max(1e-5);
            break;
        };
        let small = (fx - ft).abs() <= opts.f_tol * (1.0 + fx.abs());
        // BFGS update with s = x_new - x, y = g_new - g.
        let s: Vec<f64> = xt.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gt.iter().zip(&gx).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let s_norm: f64 = s.iter().map(|v| v * v).sum::<f64>().sqrt();
        let y_norm: f64 = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if sy > 1e-10 * s_norm * y_norm {
            // H <- (I - s y^T / sy) H (I - y s^T / sy) + s s^T / sy
            let mut hy = vec![0.0; dim];
            for r in 0..dim {
                let mut acc = 0.0;
                for c in 0..dim {
                    acc += h[r * dim + c] * y[c];
                }
                hy[r] = acc;
            }
            let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
            for r in 0..dim {
                for c in 0..dim {
                    h[r * dim + c] +=
                        -(s[r] * hy[c] + hy[r] * s[c]) / sy + (1.0 + yhy / sy) * s[r] * s[c] / sy;
                }
            }
        }
        x = xt;
        fx = ft;
        gx = gt;
        if small && alpha == 1.0 {
            converged = true;
            break;
        }
    }
    Ok(OptimResult { x, f: fx, evaluations: evals, converged })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn simplex_opts(dim: usize) -> SimplexOptions {
        SimplexOptions {
            max_evaluations: 4000,
            f_tol: 1e-12,
            x_tol: vec![1e-9; dim],
            initial_step: vec![0.5; dim],
        }
    }

    #[test]
    fn simplex_minimizes_shifted_quadratic() {
        let f = |x: &[f64]| (x[0] - 1.5).powi(2) + 3.0 * (x[1] + 0.5).powi(2);
        let r = nelder_mead(f, &[0.0, 0.0], &simplex_opts(2)).unwrap();
        assert!(r.converged);
        assert!((r.x[0] - 1.5).abs() < 1e-6, "{:?}", r.x);
        assert!((r.x[1] + 0.5).abs() < 1e-6, "{:?}", r.x);
    }

    #[test]
    fn simplex_handles_banana_valley() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let r = nelder_mead(f, &[-1.2, 1.0], &simplex_opts(2)).unwrap();
        assert!(r.converged, "stopped after {} evaluations at f={}", r.evaluations, r.f);
        assert!((r.x[0] - 1.0).abs() < 1e-5 && (r.x[1] - 1.0).abs() < 1e-5, "{:?}", r.x);
    }

    #[test]
    fn simplex_is_deterministic() {
        let f = |x: &[f64]| x[0].sin() * x[1].cos() + 0.1 * (x[0] * x[0] + x[1] * x[1]);
        let a = nelder_mead(f, &[2.0, -1.0], &simplex_opts(2)).unwrap();
        let b = nelder_mead(f, &[2.0, -1.0], &simplex_opts(2)).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.f, b.f);
        assert_eq!(a.evaluations, b.evaluations);
    }

    #[test]
    fn simplex_reports_budget_exhaustion() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let mut opts = simplex_opts(2);
        opts.max_evaluations = 20;
        let r = nelder_mead(f, &[-1.2, 1.0], &opts).unwrap();
        assert!(!r.converged);
        assert!(r.evaluations <= 22);
    }

    #[test]
    fn simplex_rejects_bad_configuration() {
        let f = |x: &[f64]| x[0] * x[0];
        assert!(nelder_mead(f, &[], &simplex_opts(0)).is_err());
        let mut opts = simplex_opts(1);
        opts.initial_step = vec![0.0];
        assert!(nelder_mead(|x: &[f64]| x[0] * x[0], &[1.0], &opts).is_err());
    }

    #[test]
    fn simplex_survives_nan_regions() {
        // NaN outside the unit disk must not poison the search.
        let f = |x: &[f64]| {
            let r2 = x[0] * x[0] + x[1] * x[1];
            if r2 > 4.0 {
                f64::NAN
            } else {
                r2
            }
        };
        let r = nelder_mead(f, &[1.2, 0.9], &simplex_opts(2)).unwrap();
        assert!(r.x[0].abs() < 1e-6 && r.x[1].abs() < 1e-6, "{:?}", r.x);
    }

    fn grad_opts() -> GradientOptions {
        GradientOptions { max_evaluations: 2000, g_tol: 1e-8, f_tol: 1e-14 }
    }

    #[test]
    fn bfgs_minimizes_quadratic_in_few_steps() {
        let fg = |x: &[f64]| {
            let f = (x[0] - 2.0).powi(2) + 10.0 * (x[1] - 1.0).powi(2);
            (f, vec![2.0 * (x[0] - 2.0), 20.0 * (x[1] - 1.0)])
        };
        let r = bfgs(fg, &[0.0, 0.0], &grad_opts()).unwrap();
        assert!(r.converged);
        assert!((r.x[0] - 2.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6, "{:?}", r.x);
        assert!(r.evaluations < 60, "{} evaluations", r.evaluations);
    }

    #[test]
    fn bfgs_handles_banana_valley() {
        let fg = |x: &[f64]| {
            let f = (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
            let g0 = -2.0 * (1.0 - x[0]) - 400.0 * x[0] * (x[1] - x[0] * x[0]);
            let g1 = 200.0 * (x[1] - x[0] * x[0]);
            (f, vec![g0, g1])
        };
        let r = bfgs(fg, &[-1.2, 1.0], &grad_opts()).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-5 && (r.x[1] - 1.0).abs() < 1e-5, "{:?} after {} evals", r.x, r.evaluations);
    }

    #[test]
    fn bfgs_is_deterministic() {
        let fg = |x: &[f64]| {
            let f = x[0].sin() + 0.3 * x[0] * x[0];
            (f, vec![x[0].cos() + 0.6 * x[0]])
        };
        let a = bfgs(fg, &[1.7], &grad_opts()).unwrap();
        let b = bfgs(fg, &[1.7], &grad_opts()).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.evaluations, b.evaluations);
    }
}
