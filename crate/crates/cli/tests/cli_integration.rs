//! End-to-end checks of the `qres` binary: exit-code contract, config echo,
//! bit-identical reruns, ingest grouping, and scan resume.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn qres(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qres"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

const SMALL_CONFIG: &str = "\
seed = 7
signal.frequencies_hz = 50, 53
signal.amplitude_mode = fixed
signal.rabi_hz = 35
signal.phase_mode = uniform
signal.t_phi_s = 0.1
signal.n_per_set = 128
signal.n_sets = 16
probe.tau_s = 7.8125e-4
estimator.k_fit = 2
estimator.n_starts = 4
estimator.search_halfwidth_hz = 20
resample.subset_size = 8
resample.n_iterations = 4
";

fn write_config(dir: &Path) -> PathBuf {
    let path = dir.join("cfg.txt");
    fs::write(&path, SMALL_CONFIG).unwrap();
    path
}

#[test]
fn simulate_estimate_pipeline_echoes_config_and_reports_units() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    assert_ok(&qres(dir.path(), &["simulate", "--config", "cfg.txt", "--out", "d.qres"]));
    assert_ok(&qres(
        dir.path(),
        &["estimate", "--data", "d.qres", "--config", "cfg.txt", "--out", "e.csv"],
    ));

    // Units named in every CSV header: both rad/s and 2pi Hz columns.
    let csv = fs::read_to_string(dir.path().join("e.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert!(header.contains("delta1_rad_s") && header.contains("delta1_2pi_hz"), "{header}");
    assert!(header.contains("separation_rad_s") && header.contains("separation_2pi_hz"));

    // The JSON summary echoes the input config exactly.
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("e.json")).unwrap()).unwrap();
    let echo = summary["config"].as_object().unwrap();
    let mut expected = std::collections::BTreeMap::new();
    for line in fs::read_to_string(&cfg).unwrap().lines() {
        let (k, v) = line.split_once('=').unwrap();
        expected.insert(k.trim().to_string(), v.trim().to_string());
    }
    assert_eq!(echo.len(), expected.len());
    for (k, v) in &expected {
        assert_eq!(echo[k].as_str().unwrap(), v, "key {k}");
    }

    // Spectrum CSV units too.
    assert_ok(&qres(
        dir.path(),
        &["spectrum", "--data", "d.qres", "--config", "cfg.txt", "--out", "s.csv"],
    ));
    let spec = fs::read_to_string(dir.path().join("s.csv")).unwrap();
    assert!(spec.starts_with("frequency_rad_s,frequency_2pi_hz,power"));
}

#[test]
fn same_seed_runs_are_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path());
    assert_ok(&qres(dir.path(), &["simulate", "--config", "cfg.txt", "--out", "a.qres"]));
    assert_ok(&qres(dir.path(), &["simulate", "--config", "cfg.txt", "--out", "b.qres"]));
    assert_eq!(
        fs::read(dir.path().join("a.qres")).unwrap(),
        fs::read(dir.path().join("b.qres")).unwrap(),
        "dataset files differ between same-seed runs"
    );
    // Sidecars too.
    assert_eq!(
        fs::read(dir.path().join("a.qres.json")).unwrap(),
        fs::read(dir.path().join("b.qres.json")).unwrap()
    );

    assert_ok(&qres(
        dir.path(),
        &["estimate", "--data", "a.qres", "--config", "cfg.txt", "--out", "ea.csv"],
    ));
    assert_ok(&qres(
        dir.path(),
        &["estimate", "--data", "a.qres", "--config", "cfg.txt", "--out", "eb.csv"],
    ));
    assert_eq!(
        fs::read(dir.path().join("ea.csv")).unwrap(),
        fs::read(dir.path().join("eb.csv")).unwrap(),
        "estimate CSVs differ between same-seed runs"
    );

    // A different seed changes the data.
    assert_ok(&qres(
        dir.path(),
        &["simulate", "--config", "cfg.txt", "--seed", "8", "--out", "c.qres"],
    ));
    assert_ne!(
        fs::read(dir.path().join("a.qres")).unwrap(),
        fs::read(dir.path().join("c.qres")).unwrap()
    );
}

#[test]
fn exit_codes_follow_the_error_contract() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path());
    assert_ok(&qres(dir.path(), &["simulate", "--config", "cfg.txt", "--out", "d.qres"]));

    // Unknown config key: config error, exit 2.
    fs::write(dir.path().join("bad.txt"), "bogus.key = 1\n").unwrap();
    let out = qres(dir.path(), &["simulate", "--config", "bad.txt"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus.key"));

    // Malformed flag usage: also 2 (clap's usage-error code).
    let out = qres(dir.path(), &["estimate"]);
    assert_eq!(out.status.code(), Some(2));

    // Valid values, impossible request: constraint error, exit 3.
    fs::write(
        dir.path().join("big.txt"),
        "resample.subset_size = 99\nresample.n_iterations = 4\nestimator.k_fit = 2\n",
    )
    .unwrap();
    let out = qres(dir.path(), &["estimate", "--data", "d.qres", "--config", "big.txt"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));

    // Empty resample schedule: config error, exit 2.
    fs::write(dir.path().join("empty.txt"), "estimator.k_fit = 2\n").unwrap();
    let out = qres(dir.path(), &["estimate", "--data", "d.qres", "--config", "empty.txt"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));

    // Unreadable data: exit 4.
    let out = qres(dir.path(), &["estimate", "--data", "nope.qres", "--config", "cfg.txt"]);
    assert_eq!(out.status.code(), Some(4));
    fs::write(dir.path().join("junk.qres"), b"XXXX").unwrap();
    let out = qres(dir.path(), &["estimate", "--data", "junk.qres", "--config", "cfg.txt"]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn ingest_groups_blocks_and_names_bad_records() {
    let dir = tempfile::tempdir().unwrap();
    // Twelve gap-separated blocks of 40 samples at tau = 1 ms.
    let tau = 1e-3;
    let mut csv = String::from("time_s,outcome\n");
    let mut t = 0.0;
    for block in 0..12 {
        for i in 0..40 {
            let bit = (block + i) % 2;
            csv.push_str(&format!("{:.9},{bit}\n", t + i as f64 * tau));
        }
        t += 40.0 * tau + 25.0 * tau; // gap of 25 tau > 10 tau
    }
    fs::write(dir.path().join("records.csv"), &csv).unwrap();
    let out = qres(
        dir.path(),
        &["ingest", "--input", "records.csv", "--format", "csv", "--out", "in.qres"],
    );
    assert_ok(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("12 sets"), "{stdout}");

    // A non-bit outcome is rejected with its line number, exit 4.
    let broken = csv.replace("0.039000000,1", "0.039000000,2");
    fs::write(dir.path().join("broken.csv"), &broken).unwrap();
    let out = qres(
        dir.path(),
        &["ingest", "--input", "broken.csv", "--format", "csv", "--out", "x.qres"],
    );
    assert_eq!(out.status.code(), Some(4));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("line 41"), "{stderr}");

    // Binary ingest of a simulated file is byte-identical.
    write_config(dir.path());
    assert_ok(&qres(dir.path(), &["simulate", "--config", "cfg.txt", "--out", "d.qres"]));
    assert_ok(&qres(
        dir.path(),
        &["ingest", "--input", "d.qres", "--format", "binary", "--out", "rt.qres"],
    ));
    assert_eq!(
        fs::read(dir.path().join("d.qres")).unwrap(),
        fs::read(dir.path().join("rt.qres")).unwrap()
    );
}

const SCAN_CONFIG: &str = "\
seed = 11
signal.frequencies_hz = 50
signal.amplitude_mode = rayleigh
signal.mean_rabi_hz = 30
signal.t_phi_s = 0.1
signal.n_per_set = 128
signal.n_sets = 12
probe.tau_s = 7.8125e-4
estimator.k_fit = 2
estimator.n_starts = 3
estimator.max_evaluations = 1200
scan.separations_hz = 5, 10
scan.replicates = 3
fisher.n_datasets = 8
";

#[test]
fn scan_resumes_with_identical_rows() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("scan.txt"), SCAN_CONFIG).unwrap();
    assert_ok(&qres(dir.path(), &["scan", "--config", "scan.txt", "--out", "full.csv"]));
    let full = fs::read_to_string(dir.path().join("full.csv")).unwrap();

    // Pretend the run died after point 0: keep the header and point 0 rows.
    let keep: Vec<&str> = {
        let mut lines = full.lines();
        let header = lines.next().unwrap();
        let mut kept = vec![header];
        for line in lines {
            if line.starts_with("0,") {
                kept.push(line);
            }
        }
        kept
    };
    fs::write(dir.path().join("resume.csv"), keep.join("\n") + "\n").unwrap();
    let out = qres(dir.path(), &["scan", "--config", "scan.txt", "--out", "resume.csv"]);
    assert_ok(&out);
    assert!(String::from_utf8_lossy(&out.stdout).contains("skipping"));

    let resumed = fs::read_to_string(dir.path().join("resume.csv")).unwrap();
    let strip =
        |s: &str| -> Vec<String> { s.lines().filter(|l| !l.contains("wall_time_s")).map(String::from).collect() };
    assert_eq!(strip(&full), strip(&resumed), "resumed rows differ from the uninterrupted run");

    // At these generous separations (0.5 and 1.0 Fourier widths) the
    // per-set amplitudes are well determined by the data, so the exact
    // bound sits below the marginal one. (At deep sub-Fourier separations
    // the ordering flips: the marginal model's equal-weight prior is what
    // keeps resolution alive there.)
    for point in ["0,", "1,"] {
        let field = |stat: &str| -> f64 {
            full.lines()
                .find(|l| l.starts_with(point) && l.contains(stat))
                .unwrap()
                .split(',')
                .nth(8)
                .unwrap()
                .parse()
                .unwrap()
        };
        assert!(
            field("crb_marginal_sd") > field("crb_exact_sd"),
            "point {point}: marginalizing amplitudes cannot add information"
        );
    }
}
