//! Monte Carlo generation of datasets and resampled subsets.
//!
//! Every random quantity is drawn from a counter-based stream: set `l` of a
//! simulation keyed by `seed` uses ChaCha12 with that seed and stream id
//! `l + 1`, so regenerating any single set is independent of evaluation order
//! and thread scheduling. Resample iterations live in a disjoint stream range.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::dataset::{
    AmplitudeModel, Dataset, DatasetMeta, MeasurementSet, PhaseModel, SetTruth, SignalModel,
};
use crate::error::{CoreError, Result};
use crate::signal::{accumulated_phase, detection_probability, ProbeConfig};

const TAU_CIRCLE: f64 = std::f64::consts::TAU;

/// Stream id offset separating resample draws from set draws.
const RESAMPLE_STREAM_BASE: u64 = 1 << 40;

fn set_stream(seed: u64, set_index: u32) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(set_index as u64 + 1);
    rng
}

/// One Rayleigh draw with mean `mean` (scale sigma = sqrt(2/pi) * mean),
/// via inverse CDF so a single uniform is consumed.
#[inline]
fn rayleigh_draw(rng: &mut ChaCha12Rng, mean: f64) -> f64 {
    let sigma = (2.0 / std::f64::consts::PI).sqrt() * mean;
    let u: f64 = rng.random();
    sigma * (-2.0 * (1.0 - u).ln()).sqrt()
}

fn draw_with_rng(model: &SignalModel, rng: &mut ChaCha12Rng) -> SetTruth {
    let k = model.n_tones();
    // Draw order is part of the determinism contract: amplitude scale first,
    // then phases tone by tone.
    let omegas = match &model.amplitude {
        AmplitudeModel::Fixed(omega) => vec![*omega; k],
        AmplitudeModel::Rayleigh { mean } => {
            let shared = rayleigh_draw(rng, *mean);
            vec![shared; k]
        }
    };
    let phis = match &model.phase {
        PhaseModel::Uniform => (0..k).map(|_| rng.random::<f64>() * TAU_CIRCLE).collect(),
        PhaseModel::Fixed(phis) => phis.clone(),
    };
    SetTruth { omegas, phis }
}

/// Parameters set `set_index` is generated with under (`model`, `seed`).
///
/// Identical to the truth block `simulate_dataset` records for that set.
pub fn draw_set_parameters(model: &SignalModel, seed: u64, set_index: u32) -> SetTruth {
    draw_with_rng(model, &mut set_stream(seed, set_index))
}

/// Simulate the full dataset for `model` under `probe`.
pub fn simulate_dataset(model: &SignalModel, probe: &ProbeConfig, seed: u64) -> Result<Dataset> {
    model.validate(probe)?;
    let n = model.measurements_per_set(probe);
    let sets = (0..model.n_sets)
        .map(|l| {
            let mut rng = set_stream(seed, l);
            let truth = draw_with_rng(model, &mut rng);
            let mut outcomes = Vec::with_capacity(n);
            for i in 0..n {
                let t = i as f64 * probe.tau;
                let phase = accumulated_phase(&model.deltas, &truth.omegas, &truth.phis, t, probe.tau);
                let p = detection_probability(phase, probe.readout_fidelity);
                outcomes.push(u8::from(rng.random::<f64>() < p));
            }
            MeasurementSet {
                set_index: l,
                start_time: l as f64 * model.t_phi,
                outcomes,
                truth: Some(truth),
            }
        })
        .collect();
    Ok(Dataset {
        probe: probe.clone(),
        sets,
        meta: DatasetMeta {
            seed,
            created_unix: None,
            description: format!(
                "simulated: {} tones, {} sets x {} measurements",
                model.n_tones(),
                model.n_sets,
                n
            ),
        },
    })
}

/// Draw `n_iterations` subsets of `subset_size` distinct sets each, uniformly
/// without replacement inside every subset. Subsets are re-indexed 0..m; the
/// iteration stream is keyed by (`seed`, iteration), disjoint from set streams.
pub fn split_resample(
    dataset: &Dataset,
    subset_size: usize,
    n_iterations: usize,
    seed: u64,
) -> Result<Vec<Dataset>> {
    dataset.validate()?;
    let n_sets = dataset.n_sets();
    if subset_size == 0 || subset_size > n_sets {
        return Err(CoreError::Config(format!(
            "resample subset size must lie in 1..={n_sets}, got {subset_size}"
        )));
    }
    if n_iterations == 0 {
        return Err(CoreError::Config("resample iteration count must be >= 1".into()));
    }
    let mut out = Vec::with_capacity(n_iterations);
    for it in 0..n_iterations {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(RESAMPLE_STREAM_BASE + it as u64);
        // Partial Fisher-Yates: the first subset_size slots end up a uniform
        // draw without replacement.
        let mut idx: Vec<usize> = (0..n_sets).collect();
        for i in 0..subset_size {
            let j = rng.random_range(i..n_sets);
            idx.swap(i, j);
        }
        let sets = idx[..subset_size]
            .iter()
            .enumerate()
            .map(|(new_index, &old)| {
                let mut s = dataset.sets[old].clone();
                s.set_index = new_index as u32;
                s
            })
            .collect();
        out.push(Dataset {
            probe: dataset.probe.clone(),
            sets,
            meta: DatasetMeta {
                seed,
                created_unix: dataset.meta.created_unix,
                description: format!("resample iteration {it} of: {}", dataset.meta.description),
            },
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probe() -> ProbeConfig {
        ProbeConfig::new(1.0, 1.0, 1).unwrap()
    }

    fn model(n_sets: u32) -> SignalModel {
        SignalModel {
            deltas: vec![54.598150033144236 * TAU_CIRCLE / 1024.0],
            amplitude: AmplitudeModel::Rayleigh { mean: 0.05 * TAU_CIRCLE },
            phase: PhaseModel::Uniform,
            t_phi: 1024.0,
            n_per_set: 256,
            n_sets,
        }
    }

    #[test]
    fn same_seed_same_dataset() {
        let m = model(8);
        let a = simulate_dataset(&m, &probe(), 42).unwrap();
        let b = simulate_dataset(&m, &probe(), 42).unwrap();
        assert_eq!(a, b);
        let c = simulate_dataset(&m, &probe(), 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn truth_blocks_match_draw_set_parameters() {
        let m = model(6);
        let ds = simulate_dataset(&m, &probe(), 9).unwrap();
        for set in &ds.sets {
            let truth = draw_set_parameters(&m, 9, set.set_index);
            assert_eq!(set.truth.as_ref().unwrap(), &truth);
        }
    }

    #[test]
    fn rayleigh_mean_matches_request() {
        let m = model(1);
        let mut acc = 0.0;
        let n = 100_000;
        for l in 0..n {
            acc += draw_set_parameters(&m, 5, l).omegas[0];
        }
        let sample_mean = acc / n as f64;
        let want = 0.05 * TAU_CIRCLE;
        assert!(
            (sample_mean - want).abs() < 0.01 * want,
            "sample mean {sample_mean} vs requested {want}"
        );
    }

    #[test]
    fn phases_are_uniform_by_ks() {
        let m = model(1);
        let draws: Vec<f64> =
            (0..10_000).map(|l| draw_set_parameters(&m, 11, l).phis[0] / TAU_CIRCLE).collect();
        let d = crate::stats::ks_uniform_statistic(&draws);
        assert!(d < crate::stats::ks_critical(10_000, 0.01), "KS statistic {d}");
    }

    #[test]
    fn empirical_rate_tracks_probability() {
        // Constant-probability regime: delta tiny, phi fixed at 0 so
        // p = detection_probability(Omega * tau) every measurement.
        let m = SignalModel {
            deltas: vec![1e-9],
            amplitude: AmplitudeModel::Fixed(0.2),
            phase: PhaseModel::Fixed(vec![0.0]),
            t_phi: 4096.0,
            n_per_set: 4096,
            n_sets: 25,
        };
        let ds = simulate_dataset(&m, &probe(), 3).unwrap();
        let p = detection_probability(0.2, 1.0);
        let total: u64 = ds.sets.iter().flat_map(|s| s.outcomes.iter()).map(|&b| b as u64).sum();
        let n = ds.n_total() as f64;
        let se = (p * (1.0 - p) / n).sqrt();
        let rate = total as f64 / n;
        assert!((rate - p).abs() < 3.0 * se, "rate {rate}, p {p}, se {se}");
    }

    #[test]
    fn resample_subsets_have_distinct_sets_and_right_size() {
        let ds = simulate_dataset(&model(16), &probe(), 1).unwrap();
        let subs = split_resample(&ds, 5, 40, 7).unwrap();
        assert_eq!(subs.len(), 40);
        for sub in &subs {
            assert_eq!(sub.n_sets(), 5);
            sub.validate().unwrap();
            // Distinctness: compare truth blocks as identity of origin sets.
            let mut keys: Vec<String> =
                sub.sets.iter().map(|s| format!("{:?}", s.truth)).collect();
            keys.sort();
            keys.dedup();
            assert_eq!(keys.len(), 5);
        }
    }

    #[test]
    fn resample_of_full_size_is_permutation() {
        let ds = simulate_dataset(&model(9), &probe(), 2).unwrap();
        let subs = split_resample(&ds, 9, 3, 8).unwrap();
        for sub in &subs {
            let mut outcomes: Vec<&Vec<u8>> = sub.sets.iter().map(|s| &s.outcomes).collect();
            let mut original: Vec<&Vec<u8>> = ds.sets.iter().map(|s| &s.outcomes).collect();
            outcomes.sort();
            original.sort();
            assert_eq!(outcomes, original);
        }
    }

    #[test]
    fn mean_pairwise_overlap_matches_hypergeometric() {
        // E|A intersect B| = m^2 / N for independent uniform subsets.
        let ds = simulate_dataset(&model(24), &probe(), 4).unwrap();
        let m = 8;
        let subs = split_resample(&ds, m, 250, 21).unwrap();
        let ids: Vec<Vec<String>> = subs
            .iter()
            .map(|sub| sub.sets.iter().map(|s| format!("{:?}", s.truth)).collect())
            .collect();
        let mut total = 0usize;
        let mut pairs = 0usize;
        for i in 0..ids.len() {
            for j in (i + 1)..ids.len() {
                total += ids[i].iter().filter(|x| ids[j].contains(x)).count();
                pairs += 1;
            }
        }
        let got = total as f64 / pairs as f64;
        let want = (m * m) as f64 / 24.0;
        assert!((got - want).abs() < 0.1 * want, "overlap {got} vs {want}");
    }
}
