//! On-disk formats: the QRES binary dataset container, its JSON sidecar,
//! and the CSV import/export schema.
//!
//! QRES layout, all little-endian:
//!
//! ```text
//! magic   4 bytes  "QRES"
//! version u16      currently 1
//! tau     f64      seconds
//! n_sets  u32
//! per set:
//!   set_index  u32
//!   n          u32      outcome count
//!   start_time f64      lab time of the first outcome (s)
//!   bits       ceil(n/8) bytes, LSB first
//!   truth      u8       0 or 1
//!   if truth == 1:
//!     k      u32
//!     k * (omega f64, phi f64)
//! ```
//!
//! The binary deliberately carries only what reading the measurements needs;
//! probe fidelity, shot grouping, and provenance ride in a `<file>.json`
//! sidecar so the container stays language-agnostic. A missing sidecar
//! degrades to unit fidelity and one shot per point.
//!
//! The CSV schema is `time_s,outcome[,set_index]`. On ingest the sampling
//! interval is inferred from the record itself and must be uniform to one
//! part per million within each set; without an explicit set column, any gap
//! longer than ten intervals starts a new set.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use qres_core::{Dataset, DatasetMeta, MeasurementSet, ProbeConfig, SetTruth};

use crate::{CliError, Result};

const MAGIC: &[u8; 4] = b"QRES";
const VERSION: u16 = 1;

/// Relative tolerance on sampling-interval uniformity during CSV ingest.
const TAU_REL_TOL: f64 = 1e-6;

/// Gap factor that starts a new set when no set column is present.
const GAP_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SidecarProbe {
    pub tau: f64,
    pub readout_fidelity: f64,
    pub shots_per_point: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SidecarMeta {
    pub seed: u64,
    pub created_unix: Option<u64>,
    pub description: String,
}

/// Companion document written next to every QRES file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sidecar {
    pub probe: SidecarProbe,
    pub meta: SidecarMeta,
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    std::path::PathBuf::from(s)
}

fn io_data(path: &Path, what: &str, e: std::io::Error) -> CliError {
    CliError::Data(format!("{what} {}: {e}", path.display()))
}

pub fn pack_bits(outcomes: &[u8]) -> Vec<u8> {
    let mut bytes = vec![0u8; outcomes.len().div_ceil(8)];
    for (i, &bit) in outcomes.iter().enumerate() {
        if bit != 0 {
            bytes[i / 8] |= 1 << (i % 8);
        }
    }
    bytes
}

pub fn unpack_bits(bytes: &[u8], n: usize) -> Vec<u8> {
    (0..n).map(|i| (bytes[i / 8] >> (i % 8)) & 1).collect()
}

/// Write the dataset as QRES plus its sidecar.
pub fn write_qres(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(64 + dataset.sets.iter().map(|s| s.n() / 8 + 32).sum::<usize>());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&dataset.probe.tau.to_le_bytes());
    buf.extend_from_slice(&(dataset.sets.len() as u32).to_le_bytes());
    for set in &dataset.sets {
        buf.extend_from_slice(&set.set_index.to_le_bytes());
        buf.extend_from_slice(&(set.n() as u32).to_le_bytes());
        buf.extend_from_slice(&set.start_time.to_le_bytes());
        buf.extend_from_slice(&pack_bits(&set.outcomes));
        match &set.truth {
            Some(truth) => {
                buf.push(1);
                buf.extend_from_slice(&(truth.omegas.len() as u32).to_le_bytes());
                for k in 0..truth.omegas.len() {
                    buf.extend_from_slice(&truth.omegas[k].to_le_bytes());
                    buf.extend_from_slice(&truth.phis[k].to_le_bytes());
                }
            }
            None => buf.push(0),
        }
    }
    fs::write(path, &buf).map_err(|e| io_data(path, "writing", e))?;
    let sidecar = Sidecar {
        probe: SidecarProbe {
            tau: dataset.probe.tau,
            readout_fidelity: dataset.probe.readout_fidelity,
            shots_per_point: dataset.probe.shots_per_point,
        },
        meta: SidecarMeta {
            seed: dataset.meta.seed,
            created_unix: dataset.meta.created_unix,
            description: dataset.meta.description.clone(),
        },
    };
    let text = serde_json::to_string_pretty(&sidecar)
        .map_err(|e| CliError::Data(format!("encoding sidecar: {e}")))?;
    let sp = sidecar_path(path);
    fs::write(&sp, text).map_err(|e| io_data(&sp, "writing", e))?;
    Ok(())
}

/// Little cursor over the raw bytes with descriptive underrun errors.
struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(CliError::Data(format!(
                "file truncated reading {what} at byte {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Read a QRES file, picking up the sidecar when present.
pub fn read_qres(path: &Path) -> Result<Dataset> {
    let buf = fs::read(path).map_err(|e| io_data(path, "reading", e))?;
    let mut r = Reader { buf: &buf, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(CliError::Data(format!(
            "{} is not a QRES file (bad magic)",
            path.display()
        )));
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(CliError::Data(format!(
            "unsupported QRES version {version}, this build reads {VERSION}"
        )));
    }
    let tau = r.f64("tau")?;
    if !(tau.is_finite() && tau > 0.0) {
        return Err(CliError::Data(format!("tau must be positive, file says {tau}")));
    }
    let n_sets = r.u32("set count")?;
    let mut sets = Vec::with_capacity(n_sets.min(1 << 20) as usize);
    for s in 0..n_sets {
        let set_index = r.u32("set index")?;
        let n = r.u32("outcome count")? as usize;
        let start_time = r.f64("start time")?;
        let bytes = r.take(n.div_ceil(8), "outcome bits")?;
        let outcomes = unpack_bits(bytes, n);
        let has_truth = r.take(1, "truth flag")?[0];
        let truth = match has_truth {
            0 => None,
            1 => {
                let k = r.u32("tone count")? as usize;
                let mut omegas = Vec::with_capacity(k);
                let mut phis = Vec::with_capacity(k);
                for _ in 0..k {
                    omegas.push(r.f64("truth amplitude")?);
                    phis.push(r.f64("truth phase")?);
                }
                Some(SetTruth { omegas, phis })
            }
            other => {
                return Err(CliError::Data(format!(
                    "set {s}: truth flag must be 0 or 1, got {other}"
                )))
            }
        };
        sets.push(MeasurementSet { set_index, start_time, outcomes, truth });
    }
    if r.pos != buf.len() {
        return Err(CliError::Data(format!(
            "{} trailing bytes after the last set",
            buf.len() - r.pos
        )));
    }
    let sidecar = read_sidecar(path)?;
    let (probe, meta) = match sidecar {
        Some(sc) => {
            if (sc.probe.tau - tau).abs() > 1e-12 * tau.abs() {
                return Err(CliError::Data(format!(
                    "sidecar tau {} disagrees with file tau {tau}",
                    sc.probe.tau
                )));
            }
            (
                ProbeConfig::new(tau, sc.probe.readout_fidelity, sc.probe.shots_per_point)
                    .map_err(|e| CliError::Data(format!("sidecar probe invalid: {e}")))?,
                DatasetMeta {
                    seed: sc.meta.seed,
                    created_unix: sc.meta.created_unix,
                    description: sc.meta.description,
                },
            )
        }
        None => (
            ProbeConfig::new(tau, 1.0, 1)
                .map_err(|e| CliError::Data(format!("file tau invalid: {e}")))?,
            DatasetMeta {
                seed: 0,
                created_unix: None,
                description: format!("ingested from {} (no sidecar)", path.display()),
            },
        ),
    };
    let dataset = Dataset { probe, sets, meta };
    dataset
        .validate()
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(dataset)
}

fn read_sidecar(path: &Path) -> Result<Option<Sidecar>> {
    let sp = sidecar_path(path);
    if !sp.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&sp).map_err(|e| io_data(&sp, "reading", e))?;
    let sc: Sidecar = serde_json::from_str(&text)
        .map_err(|e| CliError::Data(format!("sidecar {}: {e}", sp.display())))?;
    Ok(Some(sc))
}

/// Export as `time_s,outcome,set_index` rows with absolute lab times.
pub fn write_dataset_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut out = String::from("time_s,outcome,set_index\n");
    for set in &dataset.sets {
        for (i, &bit) in set.outcomes.iter().enumerate() {
            let t = set.start_time + i as f64 * dataset.probe.tau;
            out.push_str(&format!("{:.12e},{},{}\n", t, bit, set.set_index));
        }
    }
    let mut f = fs::File::create(path).map_err(|e| io_data(path, "creating", e))?;
    f.write_all(out.as_bytes()).map_err(|e| io_data(path, "writing", e))?;
    Ok(())
}

struct CsvRecord {
    line: usize,
    time: f64,
    outcome: u8,
    set: Option<u32>,
}

/// Ingest measurement records from CSV. Probe fidelity and shot grouping are
/// not represented in the record stream, so the caller supplies them.
pub fn read_dataset_csv(
    path: &Path,
    readout_fidelity: f64,
    shots_per_point: u32,
) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| io_data(path, "reading", e))?;
    let mut records: Vec<CsvRecord> = Vec::new();
    let mut lines = text.lines().enumerate();
    let header = loop {
        match lines.next() {
            Some((_, l)) if l.trim().is_empty() => continue,
            Some((_, l)) => break l,
            None => return Err(CliError::Data(format!("{}: empty file", path.display()))),
        }
    };
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let has_set = match cols.as_slice() {
        ["time_s", "outcome"] => false,
        ["time_s", "outcome", "set_index"] => true,
        _ => {
            return Err(CliError::Data(format!(
                "header must be time_s,outcome[,set_index]; got {header:?}"
            )))
        }
    };
    for (idx, line) in lines {
        let line_no = idx + 1;
        let l = line.trim();
        if l.is_empty() {
            continue;
        }
        let fields: Vec<&str> = l.split(',').map(str::trim).collect();
        if fields.len() != cols.len() {
            return Err(CliError::Data(format!(
                "line {line_no}: expected {} fields, got {}",
                cols.len(),
                fields.len()
            )));
        }
        let time: f64 = fields[0]
            .parse()
            .map_err(|_| CliError::Data(format!("line {line_no}: bad time {:?}", fields[0])))?;
        if !time.is_finite() {
            return Err(CliError::Data(format!("line {line_no}: time must be finite")));
        }
        let outcome = match fields[1] {
            "0" => 0u8,
            "1" => 1u8,
            other => {
                return Err(CliError::Data(format!(
                    "line {line_no}: outcome must be 0 or 1, got {other:?}"
                )))
            }
        };
        let set = if has_set {
            Some(fields[2].parse::<u32>().map_err(|_| {
                CliError::Data(format!("line {line_no}: bad set index {:?}", fields[2]))
            })?)
        } else {
            None
        };
        records.push(CsvRecord { line: line_no, time, outcome, set });
    }
    if records.is_empty() {
        return Err(CliError::Data(format!("{}: no records", path.display())));
    }
    for w in records.windows(2) {
        if w[1].time <= w[0].time {
            return Err(CliError::Data(format!(
                "line {}: timestamps must increase (got {} after {})",
                w[1].line, w[1].time, w[0].time
            )));
        }
    }
    // Sampling interval: the median gap is robust against the between-set
    // jumps, which are a small minority of the diffs.
    let mut diffs: Vec<f64> = records.windows(2).map(|w| w[1].time - w[0].time).collect();
    let tau = if diffs.is_empty() {
        return Err(CliError::Data("need at least two records to infer tau".into()));
    } else {
        diffs.sort_by(f64::total_cmp);
        diffs[diffs.len() / 2]
    };
    // Group rows into sets.
    let mut groups: Vec<Vec<&CsvRecord>> = Vec::new();
    match records.first().map(|r| r.set.is_some()) {
        Some(true) => {
            for rec in &records {
                match groups.last_mut() {
                    Some(g) if g[0].set == rec.set => g.push(rec),
                    _ => groups.push(vec![rec]),
                }
            }
        }
        _ => {
            for rec in &records {
                match groups.last_mut() {
                    Some(g) if rec.time - g.last().unwrap().time <= GAP_FACTOR * tau => {
                        g.push(rec)
                    }
                    _ => groups.push(vec![rec]),
                }
            }
        }
    }
    let mut sets = Vec::with_capacity(groups.len());
    for (gi, group) in groups.iter().enumerate() {
        for pair in group.windows(2) {
            let d = pair[1].time - pair[0].time;
            if (d - tau).abs() > TAU_REL_TOL * tau {
                return Err(CliError::Data(format!(
                    "line {}: interval {d:.9e} deviates from tau {tau:.9e} beyond 1e-6 relative",
                    pair[1].line
                )));
            }
        }
        let set_index = group[0].set.unwrap_or(gi as u32);
        sets.push(MeasurementSet {
            set_index,
            start_time: group[0].time,
            outcomes: group.iter().map(|r| r.outcome).collect(),
            truth: None,
        });
    }
    let probe = ProbeConfig::new(tau, readout_fidelity, shots_per_point)
        .map_err(|e| CliError::Data(format!("inferred probe invalid: {e}")))?;
    let dataset = Dataset {
        probe,
        sets,
        meta: DatasetMeta {
            seed: 0,
            created_unix: None,
            description: format!("ingested from {}", path.display()),
        },
    };
    dataset
        .validate()
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use qres_core::{simulate_dataset, AmplitudeModel, PhaseModel, SignalModel};

    fn sample_dataset() -> Dataset {
        let model = SignalModel {
            deltas: vec![0.7, 1.3],
            amplitude: AmplitudeModel::Rayleigh { mean: 0.3 },
            phase: PhaseModel::Uniform,
            t_phi: 40.0,
            n_per_set: 37,
            n_sets: 5,
        };
        let probe = ProbeConfig::new(1.0, 0.95, 1).unwrap();
        simulate_dataset(&model, &probe, 42).unwrap()
    }

    #[test]
    fn bit_packing_round_trips_odd_lengths() {
        for n in [1usize, 7, 8, 9, 37, 64] {
            let bits: Vec<u8> = (0..n).map(|i| ((i * 7 + 3) % 5 == 0) as u8).collect();
            assert_eq!(unpack_bits(&pack_bits(&bits), n), bits, "n = {n}");
        }
    }

    #[test]
    fn qres_round_trip_preserves_everything() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.qres");
        let ds = sample_dataset();
        write_qres(&ds, &path).unwrap();
        let back = read_qres(&path).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn qres_without_sidecar_uses_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.qres");
        let ds = sample_dataset();
        write_qres(&ds, &path).unwrap();
        fs::remove_file(sidecar_path(&path)).unwrap();
        let back = read_qres(&path).unwrap();
        assert_eq!(back.probe.readout_fidelity, 1.0);
        assert_eq!(back.probe.shots_per_point, 1);
        assert_eq!(back.sets.len(), ds.sets.len());
        assert_eq!(back.sets[0].outcomes, ds.sets[0].outcomes);
    }

    #[test]
    fn qres_rejects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.qres");
        let ds = sample_dataset();
        write_qres(&ds, &path).unwrap();
        let good = fs::read(&path).unwrap();

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        fs::write(&path, &bad_magic).unwrap();
        assert!(matches!(read_qres(&path), Err(CliError::Data(_))));

        let mut bad_version = good.clone();
        bad_version[4] = 9;
        fs::write(&path, &bad_version).unwrap();
        assert!(read_qres(&path).is_err());

        fs::write(&path, &good[..good.len() - 3]).unwrap();
        let err = read_qres(&path).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");

        let mut trailing = good.clone();
        trailing.extend_from_slice(&[0, 0]);
        fs::write(&path, &trailing).unwrap();
        let err = read_qres(&path).unwrap_err();
        assert!(err.to_string().contains("trailing"), "{err}");
    }

    #[test]
    fn csv_round_trip_is_identity_up_to_truth() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let ds = sample_dataset();
        write_dataset_csv(&ds, &path).unwrap();
        let back =
            read_dataset_csv(&path, ds.probe.readout_fidelity, ds.probe.shots_per_point).unwrap();
        assert_eq!(back.sets.len(), ds.sets.len());
        assert!((back.probe.tau - ds.probe.tau).abs() < 1e-9 * ds.probe.tau);
        for (a, b) in ds.sets.iter().zip(&back.sets) {
            assert_eq!(a.set_index, b.set_index);
            assert_eq!(a.outcomes, b.outcomes);
            assert!((a.start_time - b.start_time).abs() < 1e-9);
            assert!(b.truth.is_none());
        }
    }

    #[test]
    fn csv_groups_by_gap_without_set_column() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.csv");
        let mut text = String::from("time_s,outcome\n");
        // Three blocks of 20 samples at tau = 1, separated by 50 s gaps.
        for block in 0..3 {
            for i in 0..20 {
                text.push_str(&format!("{},{}\n", block as f64 * 70.0 + i as f64, i % 2));
            }
        }
        fs::write(&path, &text).unwrap();
        let ds = read_dataset_csv(&path, 1.0, 1).unwrap();
        assert_eq!(ds.sets.len(), 3);
        assert!(ds.sets.iter().all(|s| s.n() == 20));
        assert_eq!(ds.sets[1].start_time, 70.0);
    }

    #[test]
    fn csv_rejects_bad_rows_with_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.csv");

        fs::write(&path, "time_s,outcome\n0.0,0\n1.0,2\n").unwrap();
        let err = read_dataset_csv(&path, 1.0, 1).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        assert!(err.to_string().contains("outcome"), "{err}");

        fs::write(&path, "time_s,outcome\n0.0,0\n1.0,1\n0.5,0\n").unwrap();
        let err = read_dataset_csv(&path, 1.0, 1).unwrap_err();
        assert!(err.to_string().contains("increase"), "{err}");

        fs::write(&path, "time_s,outcome\n0.0,0\n1.0,1\n2.5,0\n3.5,1\n").unwrap();
        let err = read_dataset_csv(&path, 1.0, 1).unwrap_err();
        assert!(err.to_string().contains("deviates"), "{err}");
    }
}
