//! Flat key-value run configuration.
//!
//! The format is one `section.key = value` assignment per line, `#` comments,
//! nothing nested deeper than the single dot. Frequencies are written in Hz
//! (keys ending `_hz`) and converted to rad/s on load, matching how such
//! experiments are usually quoted; durations are seconds, phases radians.
//! Values stay strings internally so a parse, serialize, parse cycle is
//! lossless whatever number formatting the author used.

use std::collections::BTreeMap;
use std::path::Path;

use qres_core::estimate::{EstimationConfig, OptimizerKind};
use qres_core::{AmplitudeModel, PhaseModel, ProbeConfig, SignalModel};

use crate::{CliError, Result};

const TAU_CIRCLE: f64 = std::f64::consts::TAU;

/// Every key the format understands; anything else is a typo worth failing
/// loudly on.
const KNOWN_KEYS: &[&str] = &[
    "seed",
    "signal.frequencies_hz",
    "signal.amplitude_mode",
    "signal.mean_rabi_hz",
    "signal.rabi_hz",
    "signal.phase_mode",
    "signal.phases_rad",
    "signal.t_phi_s",
    "signal.n_per_set",
    "signal.n_sets",
    "probe.tau_s",
    "probe.readout_fidelity",
    "probe.shots_per_point",
    "estimator.k_fit",
    "estimator.n_starts",
    "estimator.marginalize",
    "estimator.search_halfwidth_hz",
    "estimator.quadrature_order",
    "estimator.inner_quadrature_order",
    "estimator.optimizer",
    "estimator.max_evaluations",
    "estimator.f_tol",
    "estimator.x_tol_factor",
    "estimator.oversample",
    "resample.subset_size",
    "resample.n_iterations",
    "scan.separations_hz",
    "scan.replicates",
    "fisher.n_datasets",
];

/// Parsed configuration: an ordered map of raw string values.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Config {
    entries: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Config> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw.find('#') {
                Some(p) => &raw[..p],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!("line {line_no}: expected key = value, got {raw:?}"))
            })?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(CliError::Config(format!("line {line_no}: unknown key {key:?}")));
            }
            if entries.insert(key.clone(), value).is_some() {
                return Err(CliError::Config(format!("line {line_no}: duplicate key {key:?}")));
            }
        }
        Ok(Config { entries })
    }

    pub fn from_file(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("reading {}: {e}", path.display())))?;
        Config::parse(&text)
    }

    /// Canonical text form: sorted assignments, one per line.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    /// Overlay `self` on `base`: keys present here win.
    pub fn merged_over(mut self, base: &Config) -> Config {
        for (k, v) in &base.entries {
            self.entries.entry(k.clone()).or_insert_with(|| v.clone());
        }
        self
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        debug_assert!(KNOWN_KEYS.contains(&key), "unknown config key {key}");
        self.entries.insert(key.to_string(), value.into());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.entries
    }

    fn f64_key(&self, key: &str) -> Result<Option<f64>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<f64>()
                .map(Some)
                .map_err(|_| CliError::Config(format!("{key}: not a number: {v:?}"))),
        }
    }

    fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        Ok(self.f64_key(key)?.unwrap_or(default))
    }

    fn u64_or(&self, key: &str, default: u64) -> Result<u64> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse::<u64>()
                .map_err(|_| CliError::Config(format!("{key}: not a non-negative integer: {v:?}"))),
        }
    }

    fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        Ok(self.u64_or(key, default as u64)? as usize)
    }

    fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        match self.get(key) {
            None => Ok(default),
            Some("true") => Ok(true),
            Some("false") => Ok(false),
            Some(v) => Err(CliError::Config(format!("{key}: expected true or false, got {v:?}"))),
        }
    }

    fn f64_list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|_| CliError::Config(format!("{key}: bad list entry {s:?}")))
                })
                .collect::<Result<Vec<f64>>>()
                .map(Some),
        }
    }

    fn required<T>(&self, key: &str, v: Option<T>) -> Result<T> {
        v.ok_or_else(|| CliError::Config(format!("missing required key {key}")))
    }
}

/// Probe settings from the `probe.*` section.
pub fn probe_plan(cfg: &Config) -> Result<ProbeConfig> {
    let tau = cfg.required("probe.tau_s", cfg.f64_key("probe.tau_s")?)?;
    let fidelity = cfg.f64_or("probe.readout_fidelity", 1.0)?;
    let shots = cfg.u64_or("probe.shots_per_point", 1)? as u32;
    ProbeConfig::new(tau, fidelity, shots)
        .map_err(|e| CliError::Constraint(format!("probe: {e}")))
}

/// Signal model from the `signal.*` section (Hz keys converted to rad/s).
pub fn signal_plan(cfg: &Config, probe: &ProbeConfig) -> Result<SignalModel> {
    let freqs = cfg.required("signal.frequencies_hz", cfg.f64_list("signal.frequencies_hz")?)?;
    let deltas: Vec<f64> = freqs.iter().map(|f| f * TAU_CIRCLE).collect();
    let amplitude = match cfg.get("signal.amplitude_mode").unwrap_or("rayleigh") {
        "rayleigh" => {
            let mean_hz =
                cfg.required("signal.mean_rabi_hz", cfg.f64_key("signal.mean_rabi_hz")?)?;
            AmplitudeModel::Rayleigh { mean: mean_hz * TAU_CIRCLE }
        }
        "fixed" => {
            let hz = cfg.required("signal.rabi_hz", cfg.f64_key("signal.rabi_hz")?)?;
            AmplitudeModel::Fixed(hz * TAU_CIRCLE)
        }
        other => {
            return Err(CliError::Config(format!(
                "signal.amplitude_mode: expected rayleigh or fixed, got {other:?}"
            )))
        }
    };
    let phase = match cfg.get("signal.phase_mode").unwrap_or("uniform") {
        "uniform" => PhaseModel::Uniform,
        "fixed" => PhaseModel::Fixed(
            cfg.required("signal.phases_rad", cfg.f64_list("signal.phases_rad")?)?,
        ),
        other => {
            return Err(CliError::Config(format!(
                "signal.phase_mode: expected uniform or fixed, got {other:?}"
            )))
        }
    };
    let model = SignalModel {
        deltas,
        amplitude,
        phase,
        t_phi: cfg.required("signal.t_phi_s", cfg.f64_key("signal.t_phi_s")?)?,
        n_per_set: cfg.u64_or("signal.n_per_set", 0)? as u32,
        n_sets: cfg.u64_or("signal.n_sets", 0)? as u32,
    };
    model.validate(probe).map_err(|e| CliError::Constraint(format!("signal: {e}")))?;
    Ok(model)
}

/// Estimator settings from the `estimator.*` section.
pub fn estimator_plan(cfg: &Config) -> Result<EstimationConfig> {
    let d = EstimationConfig::default();
    let optimizer = match cfg.get("estimator.optimizer").unwrap_or("simplex") {
        "simplex" => OptimizerKind::Simplex,
        "gradient" => OptimizerKind::Gradient,
        other => {
            return Err(CliError::Config(format!(
                "estimator.optimizer: expected simplex or gradient, got {other:?}"
            )))
        }
    };
    Ok(EstimationConfig {
        k_fit: cfg.usize_or("estimator.k_fit", 1)?,
        n_starts: cfg.usize_or("estimator.n_starts", 6)?,
        search_halfwidth: cfg
            .f64_key("estimator.search_halfwidth_hz")?
            .map(|hz| hz * TAU_CIRCLE),
        marginalize_amplitudes: cfg.bool_or("estimator.marginalize", false)?,
        quadrature_order: cfg.usize_or("estimator.quadrature_order", d.quadrature_order)?,
        inner_quadrature_order: cfg
            .usize_or("estimator.inner_quadrature_order", d.inner_quadrature_order)?,
        optimizer,
        max_evaluations: cfg.usize_or("estimator.max_evaluations", 4000)?,
        f_tol: cfg.f64_or("estimator.f_tol", 1e-9)?,
        x_tol_factor: cfg.f64_or("estimator.x_tol_factor", 1e-6)?,
        relative_weights: Vec::new(),
        oversample: cfg.usize_or("estimator.oversample", d.oversample)?,
        seed_deltas: None,
        seed_omega: None,
    })
}

/// Resampling schedule for the estimate command.
#[derive(Debug, Clone, Copy)]
pub struct ResamplePlan {
    pub subset_size: usize,
    pub n_iterations: usize,
}

pub fn resample_plan(cfg: &Config) -> Result<ResamplePlan> {
    Ok(ResamplePlan {
        subset_size: cfg.usize_or("resample.subset_size", 0)?,
        n_iterations: cfg.usize_or("resample.n_iterations", 0)?,
    })
}

/// Scan axis: separations in rad/s plus the replicate count per point.
#[derive(Debug, Clone)]
pub struct ScanPlan {
    pub separations: Vec<f64>,
    pub replicates: usize,
    /// Monte Carlo datasets for the marginal information at each point.
    pub fisher_datasets: usize,
}

pub fn scan_plan(cfg: &Config) -> Result<ScanPlan> {
    let seps_hz = cfg.required("scan.separations_hz", cfg.f64_list("scan.separations_hz")?)?;
    if seps_hz.is_empty() {
        return Err(CliError::Config("scan.separations_hz must be non-empty".into()));
    }
    if seps_hz.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(CliError::Constraint(
            "scan.separations_hz: every separation must be positive".into(),
        ));
    }
    Ok(ScanPlan {
        separations: seps_hz.iter().map(|s| s * TAU_CIRCLE).collect(),
        replicates: cfg.usize_or("scan.replicates", 32)?,
        fisher_datasets: cfg.usize_or("fisher.n_datasets", 48)?,
    })
}

pub fn seed_of(cfg: &Config) -> Result<u64> {
    cfg.u64_or("seed", 1)
}

/// Built-in parameter sets. `fig2` targets the close-tone resolution
/// demonstration (two tones 1.6 Hz apart, well under the 4 Hz record
/// limit); `fig3` targets the separation scan with amplitude-marginalized
/// estimation. Both are sized to finish on a desktop.
pub fn preset(name: &str) -> Result<Config> {
    let text = match name {
        "fig2" => {
            "seed = 20211\n\
             signal.frequencies_hz = 250, 251.6\n\
             signal.amplitude_mode = rayleigh\n\
             signal.mean_rabi_hz = 102.4\n\
             signal.phase_mode = uniform\n\
             signal.t_phi_s = 0.25\n\
             signal.n_per_set = 512\n\
             signal.n_sets = 128\n\
             probe.tau_s = 4.8828125e-4\n\
             probe.readout_fidelity = 1.0\n\
             probe.shots_per_point = 1\n\
             estimator.k_fit = 2\n\
             estimator.n_starts = 6\n\
             estimator.marginalize = false\n\
             estimator.max_evaluations = 4000\n\
             estimator.f_tol = 1e-9\n\
             estimator.x_tol_factor = 1e-6\n\
             resample.subset_size = 33\n\
             resample.n_iterations = 256\n"
        }
        "fig3" => {
            "seed = 31357\n\
             signal.frequencies_hz = 0.053318505891742416\n\
             signal.amplitude_mode = rayleigh\n\
             signal.mean_rabi_hz = 0.05\n\
             signal.phase_mode = uniform\n\
             signal.t_phi_s = 1024\n\
             signal.n_per_set = 1024\n\
             signal.n_sets = 64\n\
             probe.tau_s = 1\n\
             probe.readout_fidelity = 1.0\n\
             probe.shots_per_point = 1\n\
             estimator.k_fit = 2\n\
             estimator.n_starts = 2\n\
             estimator.marginalize = true\n\
             estimator.quadrature_order = 32\n\
             estimator.inner_quadrature_order = 8\n\
             estimator.max_evaluations = 300\n\
             estimator.f_tol = 3e-8\n\
             estimator.x_tol_factor = 3e-4\n\
             scan.separations_hz = 4.8828125e-5, 9.765625e-5, 1.953125e-4, 3.90625e-4, 6.8359375e-4, 9.765625e-4, 1.953125e-3\n\
             scan.replicates = 32\n\
             fisher.n_datasets = 48\n"
        }
        other => {
            return Err(CliError::Config(format!(
                "unknown preset {other:?}; available: fig2, fig3"
            )))
        }
    };
    Config::parse(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_serialize_parse_is_identity() {
        let text = "# run configuration\n\
                    seed = 7\n\
                    signal.frequencies_hz = 250, 251.6  # two tones\n\
                    signal.mean_rabi_hz = 102.4\n\
                    signal.t_phi_s = 0.25\n\
                    probe.tau_s = 4.8828125e-4\n";
        let a = Config::parse(text).unwrap();
        let b = Config::parse(&a.serialize()).unwrap();
        assert_eq!(a, b);
        let c = Config::parse(&b.serialize()).unwrap();
        assert_eq!(b.serialize(), c.serialize());
    }

    #[test]
    fn rejects_unknown_and_duplicate_keys() {
        let err = Config::parse("signal.frequnecies_hz = 1\n").unwrap_err();
        assert!(matches!(err, CliError::Config(_)));
        assert!(err.to_string().contains("unknown key"), "{err}");

        let err = Config::parse("seed = 1\nseed = 2\n").unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");

        let err = Config::parse("just a line\n").unwrap_err();
        assert!(err.to_string().contains("key = value"), "{err}");
    }

    #[test]
    fn hz_keys_convert_to_rad_per_s() {
        let cfg = preset("fig2").unwrap();
        let probe = probe_plan(&cfg).unwrap();
        let model = signal_plan(&cfg, &probe).unwrap();
        assert!((model.deltas[0] - 250.0 * TAU_CIRCLE).abs() < 1e-9);
        assert!((model.deltas[1] - 251.6 * TAU_CIRCLE).abs() < 1e-9);
        match model.amplitude {
            AmplitudeModel::Rayleigh { mean } => {
                assert!((mean - 102.4 * TAU_CIRCLE).abs() < 1e-9)
            }
            _ => panic!("fig2 uses the rayleigh amplitude model"),
        }
    }

    #[test]
    fn presets_build_valid_plans() {
        for name in ["fig2", "fig3"] {
            let cfg = preset(name).unwrap();
            let probe = probe_plan(&cfg).unwrap();
            let model = signal_plan(&cfg, &probe).unwrap();
            let est = estimator_plan(&cfg).unwrap();
            assert_eq!(est.k_fit, 2, "{name}");
            assert_eq!(model.n_tones(), preset_tones(name), "{name}");
        }
        assert!(preset("fig4").is_err());
    }

    fn preset_tones(name: &str) -> usize {
        match name {
            "fig2" => 2,
            _ => 1,
        }
    }

    #[test]
    fn overrides_win_over_preset() {
        let over = Config::parse("signal.n_sets = 16\n").unwrap();
        let cfg = over.merged_over(&preset("fig2").unwrap());
        let probe = probe_plan(&cfg).unwrap();
        let model = signal_plan(&cfg, &probe).unwrap();
        assert_eq!(model.n_sets, 16);
        assert_eq!(model.n_per_set, 512);
    }

    #[test]
    fn constraint_violations_are_distinguished_from_parse_errors() {
        // Parseable but physically impossible: a set longer than the
        // coherence time.
        let over = Config::parse("signal.t_phi_s = 0.1\n").unwrap();
        let cfg = over.merged_over(&preset("fig2").unwrap());
        let probe = probe_plan(&cfg).unwrap();
        let err = signal_plan(&cfg, &probe).unwrap_err();
        assert!(matches!(err, CliError::Constraint(_)), "{err}");

        let err = Config::parse("probe.tau_s = maybe\n")
            .and_then(|c| probe_plan(&c))
            .unwrap_err();
        assert!(matches!(err, CliError::Config(_)), "{err}");
    }

    #[test]
    fn scan_plan_validates_separations() {
        let cfg = preset("fig3").unwrap();
        let plan = scan_plan(&cfg).unwrap();
        assert_eq!(plan.separations.len(), 7);
        assert_eq!(plan.replicates, 32);
        assert!((plan.separations[0] - 4.8828125e-5 * TAU_CIRCLE).abs() < 1e-15);

        let bad = Config::parse("scan.separations_hz = 0.1, -0.2\n").unwrap();
        assert!(matches!(scan_plan(&bad), Err(CliError::Constraint(_))));
        let missing = Config::parse("scan.replicates = 8\n").unwrap();
        assert!(matches!(scan_plan(&missing), Err(CliError::Config(_))));
    }
}
