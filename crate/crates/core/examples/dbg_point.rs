// Scratch diagnostic for one scan point: is the returned maximum really the
// global one, or does the truth basin score higher?
use qres_core::estimate::{EstimationConfig, OptimizerKind};
use qres_core::sim::simulate_dataset;
use qres_core::{AmplitudeModel, PhaseModel, ProbeConfig, SignalModel};

fn main() {
    let tau = 1.0;
    let t_phi = 1024.0;
    let d1 = 0.053318505891742416 * std::f64::consts::TAU;
    let sep = 1.953125e-4 * std::f64::consts::TAU;
    let probe = ProbeConfig::new(tau, 1.0, 1).unwrap();
    let model = SignalModel {
        deltas: vec![d1, d1 + sep],
        amplitude: AmplitudeModel::Rayleigh { mean: 0.05 * std::f64::consts::TAU },
        phase: PhaseModel::Uniform,
        t_phi,
        n_per_set: 1024,
        n_sets: 64,
    };
    let cfg = EstimationConfig {
        k_fit: 2,
        n_starts: 3,
        marginalize_amplitudes: true,
        quadrature_order: 32,
        inner_quadrature_order: 8,
        optimizer: OptimizerKind::Simplex,
        max_evaluations: 500,
        f_tol: 3e-8,
        x_tol_factor: 3e-4,
        ..EstimationConfig::default()
    };
    let point_seed = 31357u64 + (1u64 << 20);
    for r in 0..2u64 {
        let ds = simulate_dataset(&model, &probe, point_seed + r).unwrap();
        let t0 = std::time::Instant::now();
        let est = qres_core::estimate::mle_estimate(&ds, &cfg).unwrap();
        let dt = t0.elapsed().as_secs_f64();
        println!(
            "rep {r}: scan-config est deltas [{:.6e}, {:.6e}] sep {:.4e} ll {:.3} conv {} evals {} ({dt:.1} s)",
            est.deltas[0],
            est.deltas[1],
            est.deltas[1] - est.deltas[0],
            est.log_likelihood,
            est.converged,
            est.n_evaluations,
        );
        let truth_cfg = EstimationConfig {
            n_starts: 1,
            seed_deltas: Some(vec![d1, d1 + sep]),
            seed_omega: Some(0.05 * std::f64::consts::TAU),
            ..cfg.clone()
        };
        let tb = qres_core::estimate::mle_estimate(&ds, &truth_cfg).unwrap();
        println!(
            "rep {r}: truth-basin  est deltas [{:.6e}, {:.6e}] sep {:.4e} ll {:.3} conv {} evals {}",
            tb.deltas[0],
            tb.deltas[1],
            tb.deltas[1] - tb.deltas[0],
            tb.log_likelihood,
            tb.converged,
            tb.n_evaluations,
        );
        println!(
            "rep {r}: delta ll (truth basin minus scan) = {:.3}",
            tb.log_likelihood - est.log_likelihood
        );
        let seed = qres_core::spectral_seed(&ds, 2, 4).unwrap();
        println!(
            "rep {r}: spectral seed deltas {:?} omegas {:?}",
            seed.deltas, seed.omegas
        );
        let peak = seed.deltas[0];
        let col_cfg = EstimationConfig {
            n_starts: 1,
            seed_deltas: Some(vec![peak, peak + 1e-9]),
            seed_omega: Some(seed.omegas[0].max(1e-6)),
            ..cfg.clone()
        };
        let t1 = std::time::Instant::now();
        let cb = qres_core::estimate::mle_estimate(&ds, &col_cfg).unwrap();
        println!(
            "rep {r}: collapsed    est deltas [{:.6e}, {:.6e}] sep {:.4e} ll {:.3} conv {} evals {} ({:.1} s); ll gap to truth basin {:.3}",
            cb.deltas[0],
            cb.deltas[1],
            cb.deltas[1] - cb.deltas[0],
            cb.log_likelihood,
            cb.converged,
            cb.n_evaluations,
            t1.elapsed().as_secs_f64(),
            tb.log_likelihood - cb.log_likelihood,
        );
    }
}
