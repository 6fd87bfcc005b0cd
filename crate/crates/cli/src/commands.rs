//! Command implementations behind the `qres` subcommands.
//!
//! Every command takes the effective [`Config`] (preset, file, and flag
//! overrides already merged) plus whatever paths it needs, writes its
//! artifacts, and prints a one-line summary to stdout. All randomness
//! derives from the config seed; apart from the scan's wall-time rows the
//! emitted files are byte-identical across reruns.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use qres_core::estimate::{mle_estimate, EstimateResult};
use qres_core::fisher::{crb_of_separation, fisher_exact, fisher_marginal, FisherResult};
use qres_core::stats::{mean, sample_sd};
use qres_core::{simulate_dataset, split_resample, AmplitudeModel, ParamVector, SignalModel};

use crate::config::{
    estimator_plan, probe_plan, resample_plan, scan_plan, seed_of, signal_plan, Config,
};
use crate::format::{read_dataset_csv, read_qres, write_qres};
use crate::{CliError, Result};

const TAU_CIRCLE: f64 = std::f64::consts::TAU;

/// Offset separating per-point seed blocks in a scan, so each point's
/// replicate seeds never collide with another point's.
const SCAN_POINT_STRIDE: u64 = 1 << 20;

fn fmt_f(x: f64) -> String {
    format!("{x}")
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::Data(format!("writing {}: {e}", path.display())))
}

/// Simulate the configured signal and write a QRES dataset.
pub fn run_simulate(cfg: &Config, out: &Path) -> Result<()> {
    let probe = probe_plan(cfg)?;
    let model = signal_plan(cfg, &probe)?;
    let seed = seed_of(cfg)?;
    let dataset =
        simulate_dataset(&model, &probe, seed).map_err(|e| CliError::Constraint(e.to_string()))?;
    write_qres(&dataset, out)?;
    println!(
        "wrote {}: {} sets x {} outcomes, seed {seed}",
        out.display(),
        dataset.n_sets(),
        dataset.sets.first().map_or(0, |s| s.n()),
    );
    Ok(())
}

#[derive(Serialize)]
struct ToneSummary {
    mean_rad_s: f64,
    mean_2pi_hz: f64,
    sd_rad_s: f64,
    sd_2pi_hz: f64,
}

#[derive(Serialize)]
struct SeparationSummary {
    mean_rad_s: f64,
    mean_2pi_hz: f64,
    sd_rad_s: f64,
    sd_2pi_hz: f64,
    resolved: bool,
}

#[derive(Serialize)]
struct ScaleSummary {
    mean_rad_s: f64,
    sd_rad_s: f64,
}

#[derive(Serialize)]
struct EstimateSummary {
    command: &'static str,
    config: BTreeMap<String, String>,
    dataset_path: String,
    dataset_description: String,
    n_sets: usize,
    iterations: usize,
    n_failed: usize,
    per_tone: Vec<ToneSummary>,
    separation: Option<SeparationSummary>,
    mean_omega: Option<ScaleSummary>,
}

/// Estimate over resampled subsets of a recorded dataset; emits a
/// per-iteration CSV and a JSON summary next to it.
pub fn run_estimate(data: &Path, cfg: &Config, out_csv: &Path) -> Result<()> {
    let dataset = read_qres(data)?;
    let est_cfg = estimator_plan(cfg)?;
    let plan = resample_plan(cfg)?;
    let seed = seed_of(cfg)?;
    if plan.n_iterations == 0 || plan.subset_size == 0 {
        return Err(CliError::Config(
            "resample.subset_size and resample.n_iterations must both be >= 1".into(),
        ));
    }
    if plan.subset_size > dataset.n_sets() {
        return Err(CliError::Constraint(format!(
            "resample.subset_size {} exceeds the dataset's {} sets",
            plan.subset_size,
            dataset.n_sets()
        )));
    }
    let resamples = split_resample(&dataset, plan.subset_size, plan.n_iterations, seed)
        .map_err(|e| CliError::Constraint(e.to_string()))?;
    let k = est_cfg.k_fit;

    let mut csv = String::from("iteration,status,log_likelihood,winning_start,n_evaluations");
    for tone in 1..=k {
        write!(csv, ",delta{tone}_rad_s,delta{tone}_2pi_hz").unwrap();
    }
    csv.push_str(",separation_rad_s,separation_2pi_hz,mean_omega_rad_s\n");

    let mut successes: Vec<EstimateResult> = Vec::with_capacity(resamples.len());
    let mut n_failed = 0usize;
    for (it, sub) in resamples.iter().enumerate() {
        match mle_estimate(sub, &est_cfg) {
            Ok(r) => {
                let status = if r.converged { "ok" } else { "no_convergence" };
                write!(
                    csv,
                    "{it},{status},{},{},{}",
                    fmt_f(r.log_likelihood),
                    r.winning_start,
                    r.n_evaluations
                )
                .unwrap();
                for tone in 0..k {
                    write!(
                        csv,
                        ",{},{}",
                        fmt_f(r.deltas[tone]),
                        fmt_f(r.deltas[tone] / TAU_CIRCLE)
                    )
                    .unwrap();
                }
                if k >= 2 {
                    let sep = r.deltas[k - 1] - r.deltas[0];
                    write!(csv, ",{},{}", fmt_f(sep), fmt_f(sep / TAU_CIRCLE)).unwrap();
                } else {
                    csv.push_str(",,");
                }
                match r.mean_omega {
                    Some(mo) => write!(csv, ",{}\n", fmt_f(mo)).unwrap(),
                    None => csv.push_str(",\n"),
                }
                successes.push(r);
            }
            Err(e) => {
                // A failed iteration is reported, not fatal: the remaining
                // resamples still carry the statistics.
                n_failed += 1;
                let msg = e.to_string().replace(',', ";");
                write!(csv, "{it},failed: {msg},,,").unwrap();
                for _ in 0..k {
                    csv.push_str(",,");
                }
                csv.push_str(",,,\n");
            }
        }
    }
    write_text(out_csv, &csv)?;

    if successes.is_empty() {
        return Err(CliError::Data("every estimation iteration failed".into()));
    }
    let mut per_tone = Vec::with_capacity(k);
    for tone in 0..k {
        let vals: Vec<f64> = successes.iter().map(|r| r.deltas[tone]).collect();
        let m = mean(&vals);
        let sd = sample_sd(&vals).unwrap_or(0.0);
        per_tone.push(ToneSummary {
            mean_rad_s: m,
            mean_2pi_hz: m / TAU_CIRCLE,
            sd_rad_s: sd,
            sd_2pi_hz: sd / TAU_CIRCLE,
        });
    }
    let separation = if k >= 2 {
        let seps: Vec<f64> = successes.iter().map(|r| r.deltas[k - 1] - r.deltas[0]).collect();
        let m = mean(&seps);
        let sd = sample_sd(&seps).unwrap_or(0.0);
        Some(SeparationSummary {
            mean_rad_s: m,
            mean_2pi_hz: m / TAU_CIRCLE,
            sd_rad_s: sd,
            sd_2pi_hz: sd / TAU_CIRCLE,
            resolved: m > sd,
        })
    } else {
        None
    };
    let mean_omega = if successes.iter().all(|r| r.mean_omega.is_some()) {
        let vals: Vec<f64> = successes.iter().map(|r| r.mean_omega.unwrap()).collect();
        Some(ScaleSummary { mean_rad_s: mean(&vals), sd_rad_s: sample_sd(&vals).unwrap_or(0.0) })
    } else {
        None
    };
    let summary = EstimateSummary {
        command: "estimate",
        config: cfg.entries().clone(),
        dataset_path: data.display().to_string(),
        dataset_description: dataset.meta.description.clone(),
        n_sets: dataset.n_sets(),
        iterations: resamples.len(),
        n_failed,
        per_tone,
        separation,
        mean_omega,
    };
    let json_path = out_csv.with_extension("json");
    let text = serde_json::to_string_pretty(&summary)
        .map_err(|e| CliError::Data(format!("encoding summary: {e}")))?;
    write_text(&json_path, &text)?;
    match &summary.separation {
        Some(s) => println!(
            "estimate: {} iterations ({n_failed} failed), separation {:.6} rad/s +- {:.6}, resolved = {}",
            resamples.len(),
            s.mean_rad_s,
            s.sd_rad_s,
            s.resolved
        ),
        None => println!(
            "estimate: {} iterations ({n_failed} failed), delta {:.6} rad/s +- {:.6}",
            resamples.len(),
            summary.per_tone[0].mean_rad_s,
            summary.per_tone[0].sd_rad_s
        ),
    }
    Ok(())
}

#[derive(Serialize)]
struct FisherBlock {
    crb_sd_deltas_rad_s: Vec<f64>,
    crb_sd_deltas_2pi_hz: Vec<f64>,
    separation_crb_sd_rad_s: Option<f64>,
    separation_unbounded: Option<bool>,
    condition_number: f64,
    used_pseudo_inverse: bool,
}

#[derive(Serialize)]
struct FisherSummary {
    command: &'static str,
    config: BTreeMap<String, String>,
    n_sets: usize,
    n_measurements_per_set: usize,
    exact: FisherBlock,
    marginal: Option<FisherBlock>,
}

fn fisher_block(f: &FisherResult) -> Result<FisherBlock> {
    let k = f.layout.k;
    let deltas: Vec<f64> = (0..k).map(|t| f.crb_sd[f.layout.delta_index(t)]).collect();
    let (sep, unb) = if k >= 2 {
        let s = crb_of_separation(f).map_err(|e| CliError::Constraint(e.to_string()))?;
        (Some(s.sd), Some(s.unbounded))
    } else {
        (None, None)
    };
    Ok(FisherBlock {
        crb_sd_deltas_2pi_hz: deltas.iter().map(|d| d / TAU_CIRCLE).collect(),
        crb_sd_deltas_rad_s: deltas,
        separation_crb_sd_rad_s: sep,
        separation_unbounded: unb,
        condition_number: f.condition_number,
        used_pseudo_inverse: f.used_pseudo_inverse,
    })
}

/// Representative per-set truth parameters: the same draws the simulator
/// would make for this model and seed.
fn representative_params(model: &SignalModel, seed: u64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut omegas = Vec::with_capacity(model.n_sets as usize);
    let mut phis = Vec::with_capacity(model.n_sets as usize);
    for l in 0..model.n_sets {
        let truth = qres_core::draw_set_parameters(model, seed, l);
        omegas.push(truth.omegas);
        phis.push(truth.phis);
    }
    (omegas, phis)
}

/// Cramer-Rao bounds for the configured experiment, exact and (for Rayleigh
/// amplitude models) marginal, written as a JSON report.
pub fn run_fisher(cfg: &Config, out: &Path) -> Result<()> {
    let probe = probe_plan(cfg)?;
    let model = signal_plan(cfg, &probe)?;
    let est_cfg = estimator_plan(cfg)?;
    let seed = seed_of(cfg)?;
    let n_meas = model.measurements_per_set(&probe);
    let (omegas, phis) = representative_params(&model, seed);
    let exact_params = ParamVector::per_set(model.deltas.clone(), omegas, phis.clone());
    let exact = fisher_exact(&exact_params, &probe, n_meas)
        .map_err(|e| CliError::Constraint(e.to_string()))?;
    let marginal = match &model.amplitude {
        AmplitudeModel::Rayleigh { mean } => {
            let params = ParamVector::marginal(model.deltas.clone(), *mean, phis);
            let n_datasets = match cfg.get("fisher.n_datasets") {
                Some(v) => v.parse::<usize>().map_err(|_| {
                    CliError::Config(format!("fisher.n_datasets: not an integer: {v:?}"))
                })?,
                None => 48,
            };
            let f = fisher_marginal(
                &params,
                &probe,
                n_meas,
                n_datasets,
                est_cfg.quadrature_order,
                seed,
            )
            .map_err(|e| CliError::Constraint(e.to_string()))?;
            Some(fisher_block(&f)?)
        }
        AmplitudeModel::Fixed(_) => None,
    };
    let summary = FisherSummary {
        command: "fisher",
        config: cfg.entries().clone(),
        n_sets: model.n_sets as usize,
        n_measurements_per_set: n_meas,
        exact: fisher_block(&exact)?,
        marginal,
    };
    let text = serde_json::to_string_pretty(&summary)
        .map_err(|e| CliError::Data(format!("encoding report: {e}")))?;
    write_text(out, &text)?;
    println!(
        "fisher: exact delta CRB {:?} rad/s{}",
        summary.exact.crb_sd_deltas_rad_s,
        summary
            .marginal
            .as_ref()
            .map(|m| format!(", marginal {:?} rad/s", m.crb_sd_deltas_rad_s))
            .unwrap_or_default()
    );
    Ok(())
}

/// Averaged periodogram of a dataset as plot-ready CSV.
pub fn run_spectrum(data: &Path, cfg: &Config, out: &Path) -> Result<()> {
    let dataset = read_qres(data)?;
    let est_cfg = estimator_plan(cfg)?;
    let spec = qres_core::power_spectrum(&dataset, est_cfg.oversample)
        .map_err(|e| CliError::Data(e.to_string()))?;
    let mut csv = String::from("frequency_rad_s,frequency_2pi_hz,power\n");
    for (f, p) in spec.freqs.iter().zip(&spec.power) {
        writeln!(csv, "{},{},{}", fmt_f(*f), fmt_f(f / TAU_CIRCLE), fmt_f(*p)).unwrap();
    }
    write_text(out, &csv)?;
    println!("spectrum: {} bins, bin width {:.6e} rad/s", spec.freqs.len(), spec.bin_width);
    Ok(())
}

const SCAN_HEADER: &str = "point,separation_true_rad_s,separation_true_2pi_hz,n_sets,replicates,\
statistic,delta1_rad_s,delta2_rad_s,separation_rad_s,separation_2pi_hz,note";

struct ScanRow {
    point: usize,
    sep_true: f64,
    n_sets: u32,
    replicates: usize,
    statistic: &'static str,
    delta1: Option<f64>,
    delta2: Option<f64>,
    separation: Option<f64>,
    /// Whether this row's values are frequencies; dimensionless statistics
    /// (resolved flag, counts, wall time) leave the 2pi Hz column empty.
    frequency_like: bool,
    note: String,
}

impl ScanRow {
    fn to_csv(&self) -> String {
        let opt = |v: &Option<f64>| v.map(fmt_f).unwrap_or_default();
        let hz = if self.frequency_like {
            self.separation.map(|s| fmt_f(s / TAU_CIRCLE)).unwrap_or_default()
        } else {
            String::new()
        };
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            self.point,
            fmt_f(self.sep_true),
            fmt_f(self.sep_true / TAU_CIRCLE),
            self.n_sets,
            self.replicates,
            self.statistic,
            opt(&self.delta1),
            opt(&self.delta2),
            opt(&self.separation),
            hz,
            self.note
        )
    }
}

/// Points already completed in a partial scan CSV: a point counts once its
/// wall-time row (written last) is present.
fn completed_points(path: &Path) -> Result<std::collections::BTreeSet<usize>> {
    let mut done = std::collections::BTreeSet::new();
    if !path.exists() {
        return Ok(done);
    }
    let text =
        fs::read_to_string(path).map_err(|e| CliError::Data(format!("reading {}: {e}", path.display())))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == SCAN_HEADER => {}
        Some(h) => {
            return Err(CliError::Data(format!(
                "{} exists with an unexpected header {h:?}; refusing to resume",
                path.display()
            )))
        }
        None => return Ok(done),
    }
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() >= 6 && fields[5] == "wall_time_s" {
            if let Ok(p) = fields[0].parse::<usize>() {
                done.insert(p);
            }
        }
    }
    Ok(done)
}

/// Separation scan: per point, simulate `replicates` two-tone datasets,
/// estimate each, and emit estimator statistics alongside exact and
/// marginal Cramer-Rao bounds. Rows are flushed per point and completed
/// points are skipped on rerun, so a killed scan resumes cleanly.
pub fn run_scan(cfg: &Config, out: &Path) -> Result<()> {
    let probe = probe_plan(cfg)?;
    let base = signal_plan(cfg, &probe)?;
    if base.n_tones() != 1 {
        return Err(CliError::Constraint(
            "scan needs exactly one base tone in signal.frequencies_hz; the scan axis adds the second".into(),
        ));
    }
    let est_cfg = estimator_plan(cfg)?;
    if est_cfg.k_fit != 2 {
        return Err(CliError::Constraint("scan needs estimator.k_fit = 2".into()));
    }
    let plan = scan_plan(cfg)?;
    if plan.replicates < 2 {
        return Err(CliError::Constraint("scan.replicates must be >= 2".into()));
    }
    let seed = seed_of(cfg)?;
    let mean_omega = match base.amplitude {
        AmplitudeModel::Rayleigh { mean } => mean,
        AmplitudeModel::Fixed(_) => {
            return Err(CliError::Constraint(
                "scan needs signal.amplitude_mode = rayleigh (the marginal bound is part of the output)".into(),
            ))
        }
    };
    let done = completed_points(out)?;
    let mut file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(out)
        .map_err(|e| CliError::Data(format!("opening {}: {e}", out.display())))?;
    if done.is_empty() && file.metadata().map(|m| m.len()).unwrap_or(0) == 0 {
        use std::io::Write as _;
        writeln!(file, "{SCAN_HEADER}").map_err(|e| CliError::Data(e.to_string()))?;
    }
    let n_meas = base.measurements_per_set(&probe);
    for (point, &sep) in plan.separations.iter().enumerate() {
        if done.contains(&point) {
            println!("scan point {point}: already complete, skipping");
            continue;
        }
        let t0 = Instant::now();
        let point_seed = seed.wrapping_add(SCAN_POINT_STRIDE.wrapping_mul(1 + point as u64));
        let model = SignalModel {
            deltas: vec![base.deltas[0], base.deltas[0] + sep],
            amplitude: base.amplitude.clone(),
            phase: base.phase.clone(),
            t_phi: base.t_phi,
            n_per_set: base.n_per_set,
            n_sets: base.n_sets,
        };
        model.validate(&probe).map_err(|e| CliError::Constraint(e.to_string()))?;
        let mut d1 = Vec::with_capacity(plan.replicates);
        let mut d2 = Vec::with_capacity(plan.replicates);
        let mut seps = Vec::with_capacity(plan.replicates);
        let mut n_failed = 0usize;
        let mut truth0: Option<(Vec<Vec<f64>>, Vec<Vec<f64>>)> = None;
        for r in 0..plan.replicates {
            let ds = simulate_dataset(&model, &probe, point_seed.wrapping_add(r as u64))
                .map_err(|e| CliError::Constraint(e.to_string()))?;
            if r == 0 {
                let omegas =
                    ds.sets.iter().map(|s| s.truth.as_ref().unwrap().omegas.clone()).collect();
                let phis =
                    ds.sets.iter().map(|s| s.truth.as_ref().unwrap().phis.clone()).collect();
                truth0 = Some((omegas, phis));
            }
            match mle_estimate(&ds, &est_cfg) {
                Ok(est) => {
                    d1.push(est.deltas[0]);
                    d2.push(est.deltas[1]);
                    seps.push(est.deltas[1] - est.deltas[0]);
                }
                Err(_) => n_failed += 1,
            }
        }
        let (omegas0, phis0) = truth0.expect("replicates >= 2");
        let exact = fisher_exact(
            &ParamVector::per_set(model.deltas.clone(), omegas0, phis0.clone()),
            &probe,
            n_meas,
        )
        .map_err(|e| CliError::Constraint(e.to_string()))?;
        let exact_sep = crb_of_separation(&exact).map_err(|e| CliError::Constraint(e.to_string()))?;
        let marg = fisher_marginal(
            &ParamVector::marginal(model.deltas.clone(), mean_omega, phis0),
            &probe,
            n_meas,
            plan.fisher_datasets,
            est_cfg.quadrature_order,
            point_seed,
        )
        .map_err(|e| CliError::Constraint(e.to_string()))?;
        let marg_sep = crb_of_separation(&marg).map_err(|e| CliError::Constraint(e.to_string()))?;

        let mut rows: Vec<ScanRow> = Vec::new();
        let base_row = |statistic: &'static str| ScanRow {
            point,
            sep_true: sep,
            n_sets: model.n_sets,
            replicates: plan.replicates,
            statistic,
            delta1: None,
            delta2: None,
            separation: None,
            frequency_like: true,
            note: String::new(),
        };
        // Estimator statistics come first; the bound rows are emitted even
        // when every replicate failed, so the CRB curves are always complete.
        if !seps.is_empty() {
            rows.push(ScanRow {
                delta1: Some(mean(&d1)),
                delta2: Some(mean(&d2)),
                separation: Some(mean(&seps)),
                ..base_row("est_mean")
            });
            rows.push(ScanRow {
                delta1: sample_sd(&d1),
                delta2: sample_sd(&d2),
                separation: sample_sd(&seps),
                ..base_row("est_sd")
            });
            let (m, sd) = (mean(&seps), sample_sd(&seps).unwrap_or(0.0));
            rows.push(ScanRow {
                separation: Some(if m > sd { 1.0 } else { 0.0 }),
                frequency_like: false,
                ..base_row("resolved")
            });
        }
        let dl = |f: &FisherResult, t: usize| Some(f.crb_sd[f.layout.delta_index(t)]);
        rows.push(ScanRow {
            delta1: dl(&exact, 0),
            delta2: dl(&exact, 1),
            separation: Some(exact_sep.sd),
            note: if exact_sep.unbounded { "unbounded".into() } else { String::new() },
            ..base_row("crb_exact_sd")
        });
        rows.push(ScanRow {
            delta1: dl(&marg, 0),
            delta2: dl(&marg, 1),
            separation: Some(marg_sep.sd),
            note: if marg_sep.unbounded { "unbounded".into() } else { String::new() },
            ..base_row("crb_marginal_sd")
        });
        rows.push(ScanRow {
            separation: Some(n_failed as f64),
            frequency_like: false,
            ..base_row("n_failed")
        });
        rows.push(ScanRow {
            separation: Some(t0.elapsed().as_secs_f64()),
            frequency_like: false,
            note: "not reproducible".into(),
            ..base_row("wall_time_s")
        });
        let mut chunk = String::new();
        for row in &rows {
            chunk.push_str(&row.to_csv());
        }
        {
            use std::io::Write as _;
            file.write_all(chunk.as_bytes())
                .map_err(|e| CliError::Data(format!("appending to {}: {e}", out.display())))?;
            file.flush().map_err(|e| CliError::Data(e.to_string()))?;
        }
        println!(
            "scan point {point}: sep {:.6e} rad/s, {} replicates ({n_failed} failed), {:.1} s",
            sep,
            plan.replicates,
            t0.elapsed().as_secs_f64()
        );
    }
    Ok(())
}

/// Load external records (CSV or a bare QRES file) and rewrite them as a
/// QRES dataset with sidecar.
pub fn run_ingest(input: &Path, format: &str, cfg: &Config, out: &Path) -> Result<()> {
    let dataset = match format {
        "csv" => {
            let fidelity = match cfg.get("probe.readout_fidelity") {
                Some(v) => v
                    .parse::<f64>()
                    .map_err(|_| CliError::Config(format!("probe.readout_fidelity: {v:?}")))?,
                None => 1.0,
            };
            let shots = match cfg.get("probe.shots_per_point") {
                Some(v) => v
                    .parse::<u32>()
                    .map_err(|_| CliError::Config(format!("probe.shots_per_point: {v:?}")))?,
                None => 1,
            };
            read_dataset_csv(input, fidelity, shots)?
        }
        "binary" => read_qres(input)?,
        other => {
            return Err(CliError::Config(format!(
                "format must be csv or binary, got {other:?}"
            )))
        }
    };
    write_qres(&dataset, out)?;
    println!(
        "ingested {}: {} sets, {} outcomes, tau {:.6e} s",
        input.display(),
        dataset.n_sets(),
        dataset.n_total(),
        dataset.probe.tau
    );
    Ok(())
}
